#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "lanetopo/losses.hpp"
#include "lanetopo/metrics.hpp"

namespace lanetopo {

struct OptimConfig {
  double lr = 3e-4;
  double weight_decay = 0.01;
  int steps = 2000;
  int batch_size = 4;
  int checkpoint_every = 500;
  int log_every = 100;

  void validate() const;
};

// Flat run configuration covering every model/loss/generator/optimizer knob.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  GeneratorConfig gen;
  OptimConfig optim;
  uint64_t seed = 0;
  int n_scenes = 20;
  double bev_noise_sigma = 0.02;

  void validate() const;
  std::string to_json() const;
  // Accepts a JSON document or flat key=value lines; unknown keys are errors.
  static RunConfig from_text(const std::string& text);
};

std::vector<SceneGraph> load_scenes(const std::string& data_dir);

// One scene end to end: rasterize, forward, score against ground truth.
struct SceneScores {
  double det_l = 0.0;
  double det_t = 0.0;
  double top_ll = 0.0;
  double top_lt = 0.0;
  std::vector<double> det_l_per_threshold;
};
SceneScores eval_scene(ParamStore& store, const SceneGraph& scene, const RunConfig& cfg);

EvalReport evaluate(ParamStore& store, const std::vector<SceneGraph>& scenes,
                    const RunConfig& cfg, std::string* per_scene_csv = nullptr);

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int steps_run = 0;
  bool nan_abort = false;
};
TrainResult run_training(ParamStore& store, const std::vector<SceneGraph>& scenes,
                         const RunConfig& cfg, std::ostream* log);

int cmd_generate(const RunConfig& cfg, const std::string& out_dir, int n_scenes);
int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir);
int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir);
int cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& axes,
               const std::string& data_dir, const std::string& out_dir);
int cmd_gradcheck(const RunConfig& cfg, uint64_t seed, bool corrupt_grads,
                  std::ostream& out);

}  // namespace lanetopo

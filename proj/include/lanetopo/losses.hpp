#pragma once

#include <utility>
#include <vector>

#include "lanetopo/decoder.hpp"

namespace lanetopo {

struct LossConfig {
  double lambda_cls = 2.0;   // matching weight on classification
  double lambda_reg = 5.0;   // matching weight on point regression
  double lambda_mask = 2.0;  // matching weight on the DDT mask cost
  double lambda_neg = 5.0;   // adaptive loss exponential scaling
  double lambda_pos = 400.0; // adaptive loss positive weight
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double w_det = 1.0;
  double w_seg = 1.0;
  double w_topo = 1.0;

  void validate() const;
};

struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (query index, gt index)
  std::vector<int> unmatched_queries;
};

// Precomputed per-scene supervision targets.
struct SceneTargets {
  std::vector<Tensor> gt_points;              // G tensors, P x 2 meters
  std::vector<DDTMask> gt_ddt;                // G masks
  std::vector<std::vector<double>> gt_dist;   // G x HW meters (dt/binary modes)
};

SceneTargets build_targets(const SceneGraph& scene, int pts_per_line, bool need_distance_field);

// Exact rectangular assignment, rows <= cols. Returns row -> col and writes the
// optimal total cost if out_cost is non-null.
std::vector<int> hungarian_solve(const Tensor& cost, double* out_cost = nullptr);

Assignment hungarian_match(Tape& t, const LayerOutput& layer, const SceneTargets& targets,
                           const BEVSpec& spec, const LossConfig& cfg, bool use_mask_cost);

Tape::Id focal_loss(Graph& g, Tape::Id cls_logits, const Assignment& a, double alpha,
                    double gamma);
Tape::Id l1_reg_loss(Graph& g, const LayerOutput& layer, const Assignment& a,
                     const SceneTargets& targets, const BEVSpec& spec, int pts_per_line);
Tape::Id seg_loss(Graph& g, Tape::Id ddt_logits, const Assignment& a,
                  const std::vector<DDTMask>& gt_masks);

Tape::Id adaptive_topo_loss(Graph& g, Tape::Id logits, const Tensor& labels, double lambda_neg,
                            double lambda_pos);
Tape::Id focal_matrix_loss(Graph& g, Tape::Id logits, const Tensor& labels, double alpha,
                           double gamma);
Tape::Id dice_matrix_loss(Graph& g, Tape::Id logits, const Tensor& labels);

// Topology label matrices projected through the assignment.
Tensor l2l_labels(const Assignment& a, const SceneGraph& scene, int n_queries);
Tensor p2i_labels(const Assignment& a, const SceneGraph& scene, int n_queries,
                  int pts_per_instance);
Tensor l2t_labels(const Assignment& a, const SceneGraph& scene, int n_queries);
Tensor p2t_labels(const Assignment& a, const SceneGraph& scene, int n_queries,
                  int pts_per_instance);

struct LossBreakdown {
  Tape::Id total = -1;
  Tape::Id det = -1;
  Tape::Id seg = -1;
  Tape::Id topo = -1;
  std::vector<Assignment> assignments;  // one per layer
};

LossBreakdown total_loss(Graph& g, const DecoderOutput& out, const SceneGraph& scene,
                         const ModelConfig& mcfg, const LossConfig& lcfg);

}  // namespace lanetopo

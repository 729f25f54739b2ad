#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "lanetopo/harness.hpp"

using namespace lanetopo;

namespace {
RunConfig load_config(const std::string& path, bool have_seed, uint64_t seed) {
  RunConfig cfg;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    cfg = RunConfig::from_text(ss.str());
  }
  if (have_seed) cfg.seed = seed;
  return cfg;
}
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lane-graph detection and topology reasoning harness"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "out", data_dir, checkpoint_path, axes_arg;
  uint64_t seed = 0;
  bool have_seed = false;
  int n_scenes = -1;
  bool corrupt = false;

  app.add_option("--config", config_path, "config file (JSON or key=value lines)");
  app.add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
    have_seed = true;
  });
  app.add_option("--out", out_dir, "output directory");

  auto* gen = app.add_subcommand("generate", "write procedural scenes + manifest");
  gen->add_option("--n", n_scenes, "number of scenes (default: config n_scenes)");

  auto* train = app.add_subcommand("train", "train on a scene directory");
  train->add_option("--data", data_dir, "scene directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--data", data_dir, "scene directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "train/eval toggle combinations");
  ablate->add_option("--data", data_dir, "scene directory")->required();
  ablate->add_option("--axes", axes_arg, "comma-separated: cyclic,p2i,seg,topo_loss");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_flag("--corrupt-grads", corrupt, "negative control: corrupt gradients");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_config(config_path, have_seed, seed);
    if (gen->parsed())
      return cmd_generate(cfg, out_dir, n_scenes >= 0 ? n_scenes : cfg.n_scenes);
    if (train->parsed()) return cmd_train(cfg, data_dir, out_dir);
    if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoint_path, data_dir, out_dir);
    if (ablate->parsed()) {
      std::vector<std::string> axes;
      std::stringstream ss(axes_arg);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) axes.push_back(item);
      return cmd_ablate(cfg, axes, data_dir, out_dir);
    }
    if (gradcheck->parsed()) return cmd_gradcheck(cfg, cfg.seed, corrupt, std::cout);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

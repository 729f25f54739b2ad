#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "lanetopo/harness.hpp"
#include "lanetopo/losses.hpp"
#include "lanetopo/masks.hpp"
#include "lanetopo/metrics.hpp"
#include "lanetopo/scene.hpp"

namespace py = pybind11;
using namespace lanetopo;

namespace {

std::vector<Point2> to_points(const std::vector<std::array<double, 2>>& pts) {
  std::vector<Point2> out;
  for (const auto& p : pts) out.push_back({p[0], p[1]});
  return out;
}

std::vector<std::vector<double>> tensor_to_list(const Tensor& t) {
  std::vector<std::vector<double>> out(t.rows, std::vector<double>(t.cols));
  for (int r = 0; r < t.rows; ++r)
    for (int c = 0; c < t.cols; ++c) out[r][c] = t.at(r, c);
  return out;
}

}  // namespace

PYBIND11_MODULE(_lanetopo, m) {
  m.doc() = "road-scene centerline detection and topology reasoning core";

  m.def(
      "generate_scene",
      [](uint64_t seed, const std::string& config_text) {
        RunConfig cfg = config_text.empty() ? RunConfig() : RunConfig::from_text(config_text);
        return scene_to_json(sample_scene(seed, cfg.gen));
      },
      py::arg("seed"), py::arg("config_text") = "",
      "Sample a procedural scene and return its JSON document.");

  m.def(
      "frechet",
      [](const std::vector<std::array<double, 2>>& a,
         const std::vector<std::array<double, 2>>& b) {
        return frechet(to_points(a), to_points(b));
      },
      py::arg("a"), py::arg("b"), "Discrete Frechet distance between two polylines.");

  m.def(
      "hungarian",
      [](const std::vector<std::vector<double>>& cost) {
        if (cost.empty()) return std::vector<int>{};
        Tensor c(static_cast<int>(cost.size()), static_cast<int>(cost[0].size()));
        for (int r = 0; r < c.rows; ++r) {
          if (static_cast<int>(cost[r].size()) != c.cols)
            throw InputError("hungarian: ragged cost matrix");
          for (int j = 0; j < c.cols; ++j) c.at(r, j) = cost[r][j];
        }
        return hungarian_solve(c);
      },
      py::arg("cost"), "Optimal rectangular assignment; returns row -> column.");

  m.def(
      "ddt_classes",
      [](const std::string& scene_json, int line_index) {
        SceneGraph s = scene_from_json(scene_json);
        if (line_index < 0 || line_index >= s.num_lines())
          throw InputError("ddt_classes: line index out of range");
        DDTMask m = ddt_mask(s.centerlines[line_index], s.spec);
        return std::vector<int>(m.classes.begin(), m.classes.end());
      },
      py::arg("scene_json"), py::arg("line_index"),
      "Discrete distance-transform classes (row-major) for one centerline.");

  m.def(
      "geometric_prior",
      [](const std::vector<std::vector<std::array<double, 2>>>& lines, int pts_per_instance,
         double sigma) {
        std::vector<std::vector<Point2>> ls;
        for (const auto& l : lines) ls.push_back(to_points(l));
        return tensor_to_list(lanetopo::geometric_prior(ls, pts_per_instance, sigma).t_i2i);
      },
      py::arg("lines"), py::arg("pts_per_instance") = 2, py::arg("sigma") = 2.0,
      "Endpoint-distance topology prior logits (N x N).");

  m.def(
      "average_precision",
      [](const std::vector<std::pair<double, bool>>& scored, int n_gt) {
        return average_precision(scored, n_gt);
      },
      py::arg("scored_tp"), py::arg("n_gt"));

  m.def(
      "normalize_config",
      [](const std::string& text) { return RunConfig::from_text(text).to_json(); },
      py::arg("text"), "Parse JSON or key=value configuration and return canonical JSON.");

  m.def(
      "generate",
      [](const std::string& config_text, const std::string& out_dir, int n_scenes) {
        RunConfig cfg = config_text.empty() ? RunConfig() : RunConfig::from_text(config_text);
        return cmd_generate(cfg, out_dir, n_scenes);
      },
      py::arg("config_text"), py::arg("out_dir"), py::arg("n_scenes"));

  m.def(
      "train",
      [](const std::string& config_text, const std::string& data_dir,
         const std::string& out_dir) {
        RunConfig cfg = config_text.empty() ? RunConfig() : RunConfig::from_text(config_text);
        return cmd_train(cfg, data_dir, out_dir);
      },
      py::arg("config_text"), py::arg("data_dir"), py::arg("out_dir"));

  m.def(
      "evaluate",
      [](const std::string& config_text, const std::string& checkpoint,
         const std::string& data_dir, const std::string& out_dir) {
        RunConfig cfg = config_text.empty() ? RunConfig() : RunConfig::from_text(config_text);
        return cmd_eval(cfg, checkpoint, data_dir, out_dir);
      },
      py::arg("config_text"), py::arg("checkpoint"), py::arg("data_dir"), py::arg("out_dir"));

  m.def(
      "gradcheck",
      [](uint64_t seed) {
        RunConfig cfg;
        std::ostringstream sink;
        return cmd_gradcheck(cfg, seed, false, sink) == 0;
      },
      py::arg("seed") = 3, "Finite-difference check of the analytic gradients.");

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<InputError>(m, "InputError");
}

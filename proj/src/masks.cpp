#include "lanetopo/masks.hpp"

#include <algorithm>
#include <cmath>

namespace lanetopo {

BlockMask build_p2p_mask(int n_instances, int pts_per_instance) {
  if (n_instances < 1 || pts_per_instance < 1)
    throw ConfigError("build_p2p_mask: N and P must be >= 1");
  int np = n_instances * pts_per_instance;
  std::vector<std::vector<int>> rows(np);
  for (int a = 0; a < np; ++a) {
    int inst = a / pts_per_instance;
    rows[a].reserve(pts_per_instance);
    for (int b = inst * pts_per_instance; b < (inst + 1) * pts_per_instance; ++b)
      rows[a].push_back(b);
  }
  return BlockMask::from_rows(np, std::move(rows));
}

TopoPrior geometric_prior(const std::vector<std::vector<Point2>>& pred_lines,
                          int pts_per_instance, double sigma) {
  int n = static_cast<int>(pred_lines.size());
  for (const auto& line : pred_lines)
    if (line.size() < 2) throw InputError("geometric_prior: polyline needs >= 2 points");
  auto logit = [](double s) { return std::log(s / (1.0 - s)); };
  const double lo = 1e-4, hi = 1.0 - 1e-4;
  TopoPrior prior;
  prior.t_i2i = Tensor(n, n);
  for (int i = 0; i < n; ++i) {
    const Point2& end_i = pred_lines[i].back();
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        prior.t_i2i.at(i, j) = logit(lo);
        continue;
      }
      const Point2& start_j = pred_lines[j].front();
      double d = std::hypot(end_i[0] - start_j[0], end_i[1] - start_j[1]);
      double s = std::exp(-d * d / (sigma * sigma));
      s = std::clamp(s, lo, hi);
      prior.t_i2i.at(i, j) = logit(s);
    }
  }
  prior.t_p2i = Tensor(n * pts_per_instance, n);
  for (int i = 0; i < n; ++i)
    for (int p = 0; p < pts_per_instance; ++p)
      for (int j = 0; j < n; ++j)
        prior.t_p2i.at(i * pts_per_instance + p, j) = prior.t_i2i.at(i, j);
  return prior;
}

Tape::Id relation_encoder(Graph& g, Tape::Id topo_logits, const std::string& prefix, int hidden) {
  Tape& t = g.tape();
  const int rows = t.val(topo_logits).rows, cols = t.val(topo_logits).cols;
  for (double x : t.val(topo_logits).data)
    if (!std::isfinite(x)) throw InputError("relation_encoder: non-finite topology logit");
  Tape::Id flat = t.reshape(t.sigmoid(topo_logits), rows * cols, 1);
  Tape::Id bias = g.mlp3(flat, prefix, hidden, 1);
  return t.reshape(bias, rows, cols);
}

BlockMask ddt_to_attention_mask(const Tensor& ddt_logits, int n_instances, int n_cells,
                                int k_attend) {
  if (k_attend < 0 || k_attend > 5)
    throw ConfigError("ddt_to_attention_mask: k_attend must be in 0..5");
  if (ddt_logits.rows != n_instances * n_cells || ddt_logits.cols != 6)
    throw ShapeError("ddt_to_attention_mask: expected (N*HW) x 6 logits");
  std::vector<std::vector<int>> rows(n_instances);
  for (int i = 0; i < n_instances; ++i) {
    auto& allowed = rows[i];
    for (int c = 0; c < n_cells; ++c) {
      int r = i * n_cells + c;
      int arg = 0;
      double best = ddt_logits.at(r, 0);
      for (int k = 1; k < 6; ++k)
        if (ddt_logits.at(r, k) > best) {
          best = ddt_logits.at(r, k);
          arg = k;
        }
      if (arg <= k_attend) allowed.push_back(c);
    }
    if (allowed.empty()) {  // fallback guarantee: never a fully blocked row
      allowed.resize(n_cells);
      for (int c = 0; c < n_cells; ++c) allowed[c] = c;
    }
  }
  return BlockMask::from_rows(n_cells, std::move(rows));
}

}  // namespace lanetopo

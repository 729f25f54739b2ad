#include "lanetopo/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lanetopo {

void LossConfig::validate() const {
  for (double v : {lambda_cls, lambda_reg, lambda_mask, lambda_neg, lambda_pos, focal_alpha,
                   focal_gamma, w_det, w_seg, w_topo})
    if (v < 0 || !std::isfinite(v)) throw ConfigError("loss config: weights must be >= 0");
}

SceneTargets build_targets(const SceneGraph& scene, int pts_per_line, bool need_distance_field) {
  SceneTargets t;
  const BEVSpec& spec = scene.spec;
  int hw = spec.height_cells * spec.width_cells;
  for (const auto& line : scene.centerlines) {
    auto pts = resample_polyline(line.points, pts_per_line);
    Tensor m(pts_per_line, 2);
    for (int p = 0; p < pts_per_line; ++p) {
      m.at(p, 0) = pts[p][0];
      m.at(p, 1) = pts[p][1];
    }
    t.gt_points.push_back(std::move(m));
    t.gt_ddt.push_back(ddt_mask(line, spec));
    if (need_distance_field) {
      auto dense = densify_polyline(line.points, spec.meters_per_cell);
      std::vector<double> dist(hw);
      for (int r = 0; r < spec.height_cells; ++r)
        for (int c = 0; c < spec.width_cells; ++c)
          dist[r * spec.width_cells + c] =
              polyline_min_point_distance(spec.cell_center(r, c), dense);
      t.gt_dist.push_back(std::move(dist));
    }
  }
  return t;
}

std::vector<int> hungarian_solve(const Tensor& cost, double* out_cost) {
  const int n = cost.rows, m = cost.cols;
  if (n > m) throw InputError("hungarian_solve: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j)
        if (!used[j]) {
          double cur = cost.at(i0 - 1, j - 1) - u[i0] - v[j];
          if (cur < minv[j]) {
            minv[j] = cur;
            way[j] = j0;
          }
          if (minv[j] < delta) {
            delta = minv[j];
            j1 = j;
          }
        }
      for (int j = 0; j <= m; ++j)
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(n, -1);
  double total = 0.0;
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) {
      row_to_col[p[j] - 1] = j - 1;
      total += cost.at(p[j] - 1, j - 1);
    }
  if (out_cost) *out_cost = total;
  return row_to_col;
}

namespace {

// CE(mean over cells) + smoothed macro dice between one query's softmax'd DDT
// logits and a ground-truth mask, on raw values (used for the matching cost).
double ddt_cost_value(const Tensor& logits, int q, int hw, const DDTMask& gt) {
  double ce = 0.0;
  double inter[6] = {0}, psum[6] = {0}, ysum[6] = {0};
  std::vector<double> prob(6);
  for (int c = 0; c < hw; ++c) {
    int r = q * hw + c;
    double mx = logits.at(r, 0);
    for (int k = 1; k < 6; ++k) mx = std::max(mx, logits.at(r, k));
    double z = 0.0;
    for (int k = 0; k < 6; ++k) {
      prob[k] = std::exp(logits.at(r, k) - mx);
      z += prob[k];
    }
    int y = gt.classes[c];
    ce -= std::log(prob[y] / z);
    for (int k = 0; k < 6; ++k) {
      double pk = prob[k] / z;
      psum[k] += pk;
      if (k == y) inter[k] += pk;
    }
    ysum[y] += 1.0;
  }
  ce /= hw;
  double dice = 0.0;
  for (int k = 0; k < 6; ++k)
    dice += 1.0 - (2.0 * inter[k] + 1.0) / (psum[k] + ysum[k] + 1.0);
  return ce + dice / 6.0;
}

Tape::Id abs_(Tape& t, Tape::Id x) { return t.add(t.relu(x), t.relu(t.scale(x, -1.0))); }

}  // namespace

Assignment hungarian_match(Tape& t, const LayerOutput& layer, const SceneTargets& targets,
                           const BEVSpec& spec, const LossConfig& cfg, bool use_mask_cost) {
  const Tensor& cls = t.val(layer.cls_logits);
  const Tensor& xy = t.val(layer.points_xy);
  const Tensor& ddt = t.val(layer.ddt_logits);
  const int n = cls.rows;
  const int g = static_cast<int>(targets.gt_points.size());
  const int p = g > 0 ? targets.gt_points[0].rows : 0;
  const int hw = spec.height_cells * spec.width_cells;
  Assignment a;
  if (g > n) throw ContractError("hungarian_match: more ground-truth lines than queries");
  if (g == 0) {
    for (int i = 0; i < n; ++i) a.unmatched_queries.push_back(i);
    return a;
  }
  Tensor cost(g, n);
  for (int j = 0; j < g; ++j) {
    const Tensor& gt = targets.gt_points[j];
    for (int i = 0; i < n; ++i) {
      double c = cfg.lambda_cls * (-1.0 / (1.0 + std::exp(-cls.at(i, 0))));
      double l1 = 0.0;
      for (int q = 0; q < p; ++q) {
        l1 += std::abs(xy.at(i * p + q, 0) - gt.at(q, 0)) / spec.extent_x();
        l1 += std::abs(xy.at(i * p + q, 1) - gt.at(q, 1)) / spec.extent_y();
      }
      c += cfg.lambda_reg * l1 / (2.0 * p);
      if (use_mask_cost) c += cfg.lambda_mask * ddt_cost_value(ddt, i, hw, targets.gt_ddt[j]);
      cost.at(j, i) = c;
    }
  }
  auto gt_to_query = hungarian_solve(cost);
  std::vector<char> matched(n, 0);
  for (int j = 0; j < g; ++j) {
    a.pairs.emplace_back(gt_to_query[j], j);
    matched[gt_to_query[j]] = 1;
  }
  std::sort(a.pairs.begin(), a.pairs.end());
  for (int i = 0; i < n; ++i)
    if (!matched[i]) a.unmatched_queries.push_back(i);
  return a;
}

Tape::Id focal_loss(Graph& g, Tape::Id cls_logits, const Assignment& a, double alpha,
                    double gamma) {
  Tape& t = g.tape();
  int n = t.val(cls_logits).rows;
  Tensor y(n, 1);
  for (const auto& pr : a.pairs) y.at(pr.first, 0) = 1.0;
  Tensor yneg(n, 1);
  for (int i = 0; i < n; ++i) yneg.at(i, 0) = 1.0 - y.at(i, 0);
  Tape::Id p = t.clamp(t.sigmoid(cls_logits), 1e-7, 1.0 - 1e-7);
  Tape::Id one_m_p = t.add_scalar(t.scale(p, -1.0), 1.0);
  Tape::Id pos = t.mul(t.powc(one_m_p, gamma), t.scale(t.log_(p), -alpha));
  Tape::Id neg = t.mul(t.powc(p, gamma), t.scale(t.log_(one_m_p), -(1.0 - alpha)));
  return t.mean_all(t.add(t.mul_const(pos, y), t.mul_const(neg, yneg)));
}

Tape::Id l1_reg_loss(Graph& g, const LayerOutput& layer, const Assignment& a,
                     const SceneTargets& targets, const BEVSpec& spec, int pts_per_line) {
  Tape& t = g.tape();
  if (a.pairs.empty()) return t.constant(Tensor::zeros(1, 1));
  const int p = pts_per_line;
  const int k = static_cast<int>(a.pairs.size());
  std::vector<int> rows;
  Tensor target(k * p, 2), inv_extent(k * p, 2);
  for (int m = 0; m < k; ++m) {
    auto [qi, gj] = a.pairs[m];
    const Tensor& gt = targets.gt_points[gj];
    for (int q = 0; q < p; ++q) {
      rows.push_back(qi * p + q);
      target.at(m * p + q, 0) = gt.at(q, 0);
      target.at(m * p + q, 1) = gt.at(q, 1);
      inv_extent.at(m * p + q, 0) = 1.0 / spec.extent_x();
      inv_extent.at(m * p + q, 1) = 1.0 / spec.extent_y();
    }
  }
  Tape::Id pred = t.select_rows(layer.points_xy, rows);
  Tape::Id diff = t.mul_const(t.sub(pred, t.constant(std::move(target))), inv_extent);
  Tape::Id loss = t.scale(t.sum_all(abs_(t, diff)), 1.0 / (k * p));
  Tape::Id z = t.select_rows(layer.points_z, rows);
  return t.add(loss, t.scale(t.sum_all(abs_(t, z)), 1.0 / (k * p)));
}

Tape::Id seg_loss(Graph& g, Tape::Id ddt_logits, const Assignment& a,
                  const std::vector<DDTMask>& gt_masks) {
  Tape& t = g.tape();
  if (a.pairs.empty()) return t.constant(Tensor::zeros(1, 1));
  int hw = gt_masks[0].height * gt_masks[0].width;
  std::vector<Tape::Id> per_pair;
  for (const auto& [qi, gj] : a.pairs) {
    const DDTMask& gt = gt_masks[gj];
    Tape::Id logits = t.slice_rows(ddt_logits, qi * hw, (qi + 1) * hw);
    Tensor onehot(hw, 6);
    double ysum[6] = {0};
    for (int c = 0; c < hw; ++c) {
      onehot.at(c, gt.classes[c]) = 1.0;
      ysum[gt.classes[c]] += 1.0;
    }
    Tape::Id ce =
        t.scale(t.sum_all(t.mul_const(t.log_softmax_rows(logits), onehot)), -1.0 / hw);
    Tape::Id probs = t.softmax_rows(logits);
    std::vector<Tape::Id> dice_terms;
    for (int k = 0; k < 6; ++k) {
      Tensor col(hw, 6), ycol(hw, 6);
      for (int c = 0; c < hw; ++c) {
        col.at(c, k) = 1.0;
        if (gt.classes[c] == k) ycol.at(c, k) = 1.0;
      }
      Tape::Id inter = t.sum_all(t.mul_const(probs, ycol));
      Tape::Id psum = t.sum_all(t.mul_const(probs, col));
      Tape::Id num = t.add_scalar(t.scale(inter, 2.0), 1.0);
      Tape::Id den = t.add_scalar(psum, ysum[k] + 1.0);
      dice_terms.push_back(t.add_scalar(t.scale(t.div(num, den), -1.0), 1.0));
    }
    per_pair.push_back(t.add(ce, t.scale(t.add_n(dice_terms), 1.0 / 6.0)));
  }
  return t.scale(t.add_n(per_pair), 1.0 / per_pair.size());
}

namespace {
void check_binary(const Tensor& labels) {
  for (double v : labels.data)
    if (v != 0.0 && v != 1.0) throw InputError("topology labels must be binary");
}
Tensor complement(const Tensor& y) {
  Tensor c(y.rows, y.cols);
  for (int i = 0; i < y.numel(); ++i) c.data[i] = 1.0 - y.data[i];
  return c;
}
}  // namespace

Tape::Id adaptive_topo_loss(Graph& g, Tape::Id logits, const Tensor& labels, double lambda_neg,
                            double lambda_pos) {
  Tape& t = g.tape();
  if (!t.val(logits).same_shape(labels))
    throw ShapeError("adaptive_topo_loss: logits/labels shape mismatch");
  check_binary(labels);
  Tape::Id x = t.clamp(t.sigmoid(logits), 1e-7, 1.0 - 1e-7);
  Tape::Id one_m_x = t.add_scalar(t.scale(x, -1.0), 1.0);
  Tape::Id pos = t.scale(t.log_(x), -lambda_pos);
  Tape::Id neg = t.mul(t.exp_(t.scale(x, lambda_neg)), t.scale(t.log_(one_m_x), -1.0));
  return t.mean_all(
      t.add(t.mul_const(pos, labels), t.mul_const(neg, complement(labels))));
}

Tape::Id focal_matrix_loss(Graph& g, Tape::Id logits, const Tensor& labels, double alpha,
                           double gamma) {
  Tape& t = g.tape();
  if (!t.val(logits).same_shape(labels))
    throw ShapeError("focal_matrix_loss: logits/labels shape mismatch");
  check_binary(labels);
  Tape::Id p = t.clamp(t.sigmoid(logits), 1e-7, 1.0 - 1e-7);
  Tape::Id one_m_p = t.add_scalar(t.scale(p, -1.0), 1.0);
  Tape::Id pos = t.mul(t.powc(one_m_p, gamma), t.scale(t.log_(p), -alpha));
  Tape::Id neg = t.mul(t.powc(p, gamma), t.scale(t.log_(one_m_p), -(1.0 - alpha)));
  return t.mean_all(
      t.add(t.mul_const(pos, labels), t.mul_const(neg, complement(labels))));
}

Tape::Id dice_matrix_loss(Graph& g, Tape::Id logits, const Tensor& labels) {
  Tape& t = g.tape();
  if (!t.val(logits).same_shape(labels))
    throw ShapeError("dice_matrix_loss: logits/labels shape mismatch");
  check_binary(labels);
  double ysum = 0.0;
  for (double v : labels.data) ysum += v;
  Tape::Id p = t.sigmoid(logits);
  Tape::Id inter = t.sum_all(t.mul_const(p, labels));
  Tape::Id num = t.add_scalar(t.scale(inter, 2.0), 1.0);
  Tape::Id den = t.add_scalar(t.sum_all(p), ysum + 1.0);
  return t.add_scalar(t.scale(t.div(num, den), -1.0), 1.0);
}

Tensor l2l_labels(const Assignment& a, const SceneGraph& scene, int n_queries) {
  Tensor y(n_queries, n_queries);
  for (const auto& [qi, gi] : a.pairs)
    for (const auto& [qj, gj] : a.pairs)
      y.at(qi, qj) = scene.adjacency[gi][gj];
  return y;
}

Tensor p2i_labels(const Assignment& a, const SceneGraph& scene, int n_queries,
                  int pts_per_instance) {
  Tensor base = l2l_labels(a, scene, n_queries);
  Tensor y(n_queries * pts_per_instance, n_queries);
  for (int i = 0; i < n_queries; ++i)
    for (int p = 0; p < pts_per_instance; ++p)
      for (int j = 0; j < n_queries; ++j) y.at(i * pts_per_instance + p, j) = base.at(i, j);
  return y;
}

Tensor l2t_labels(const Assignment& a, const SceneGraph& scene, int n_queries) {
  int m = scene.num_traffic();
  Tensor y(n_queries, m);
  for (const auto& [qi, gi] : a.pairs)
    for (int k = 0; k < m; ++k) y.at(qi, k) = scene.l2t[gi][k];
  return y;
}

Tensor p2t_labels(const Assignment& a, const SceneGraph& scene, int n_queries,
                  int pts_per_instance) {
  Tensor base = l2t_labels(a, scene, n_queries);
  Tensor y(n_queries * pts_per_instance, base.cols);
  for (int i = 0; i < n_queries; ++i)
    for (int p = 0; p < pts_per_instance; ++p)
      for (int k = 0; k < base.cols; ++k) y.at(i * pts_per_instance + p, k) = base.at(i, k);
  return y;
}

namespace {

Tape::Id topo_matrix_loss(Graph& g, Tape::Id logits, const Tensor& labels,
                          const ModelConfig& mcfg, const LossConfig& lcfg) {
  switch (mcfg.topo_loss) {
    case TopoLossKind::Focal:
      return focal_matrix_loss(g, logits, labels, lcfg.focal_alpha, lcfg.focal_gamma);
    case TopoLossKind::Dice:
      return dice_matrix_loss(g, logits, labels);
    default:
      return adaptive_topo_loss(g, logits, labels, lcfg.lambda_neg, lcfg.lambda_pos);
  }
}

// dt mode: L1 between sigmoid of the per-instance similarity field and the
// inverted normalized distance; binary mode: BCE against lane occupancy.
Tape::Id scalar_field_loss(Graph& g, const LayerOutput& layer, const Assignment& a,
                           const SceneTargets& targets, const BEVSpec& spec, bool binary) {
  Tape& t = g.tape();
  if (a.pairs.empty()) return t.constant(Tensor::zeros(1, 1));
  int hw = spec.height_cells * spec.width_cells;
  double half = spec.lane_width / 2.0;
  std::vector<Tape::Id> per_pair;
  for (const auto& [qi, gj] : a.pairs) {
    const auto& dist = targets.gt_dist[gj];
    Tensor target(1, hw);
    for (int c = 0; c < hw; ++c) {
      double u = std::min(dist[c], half) / half;
      target.data[c] = binary ? (dist[c] < half ? 1.0 : 0.0) : 1.0 - u;
    }
    Tape::Id p = t.clamp(t.sigmoid(t.slice_rows(layer.ddt_scalar, qi, qi + 1)), 1e-7,
                         1.0 - 1e-7);
    if (binary) {
      Tape::Id one_m_p = t.add_scalar(t.scale(p, -1.0), 1.0);
      Tape::Id term = t.add(t.mul_const(t.scale(t.log_(p), -1.0), target),
                            t.mul_const(t.scale(t.log_(one_m_p), -1.0), complement(target)));
      per_pair.push_back(t.mean_all(term));
    } else {
      per_pair.push_back(t.mean_all(abs_(t, t.sub(p, t.constant(std::move(target))))));
    }
  }
  return t.scale(t.add_n(per_pair), 1.0 / per_pair.size());
}

Tape::Id te_loss(Graph& g, const TrafficTokens& tok, const SceneGraph& scene) {
  Tape& t = g.tape();
  if (tok.count == 0) return t.constant(Tensor::zeros(1, 1));
  int kcat = static_cast<int>(traffic_categories().size());
  Tensor onehot(tok.count, kcat), boxes(tok.count, 4);
  for (int m = 0; m < tok.count; ++m) {
    onehot.at(m, traffic_category_index(scene.traffic[m].category)) = 1.0;
    for (int j = 0; j < 4; ++j) boxes.at(m, j) = scene.traffic[m].box[j];
  }
  Tape::Id ce = t.scale(t.sum_all(t.mul_const(t.log_softmax_rows(tok.cls_logits), onehot)),
                        -1.0 / tok.count);
  Tape::Id l1 = t.mean_all(abs_(t, t.sub(tok.box_pred, t.constant(std::move(boxes)))));
  return t.add(ce, l1);
}

}  // namespace

LossBreakdown total_loss(Graph& g, const DecoderOutput& out, const SceneGraph& scene,
                         const ModelConfig& mcfg, const LossConfig& lcfg) {
  lcfg.validate();
  Tape& t = g.tape();
  const BEVSpec& spec = scene.spec;
  bool need_dist = mcfg.seg_supervision == SegSupervision::Dt ||
                   mcfg.seg_supervision == SegSupervision::Binary;
  SceneTargets targets = build_targets(scene, mcfg.pts_per_line, need_dist);

  std::vector<Tape::Id> det_terms, seg_terms, topo_terms;
  LossBreakdown bd;
  for (const auto& layer : out.layers) {
    Assignment a = hungarian_match(t, layer, targets, spec, lcfg,
                                   mcfg.seg_supervision == SegSupervision::Ddt);
    // detection term weighted like the matching cost: lambda_cls and lambda_reg
    det_terms.push_back(t.add(
        t.scale(focal_loss(g, layer.cls_logits, a, lcfg.focal_alpha, lcfg.focal_gamma),
                lcfg.lambda_cls),
        t.scale(l1_reg_loss(g, layer, a, targets, spec, mcfg.pts_per_line), lcfg.lambda_reg)));
    switch (mcfg.seg_supervision) {
      case SegSupervision::Ddt:
        seg_terms.push_back(seg_loss(g, layer.ddt_logits, a, targets.gt_ddt));
        break;
      case SegSupervision::Dt:
        seg_terms.push_back(scalar_field_loss(g, layer, a, targets, spec, false));
        break;
      case SegSupervision::Binary:
        seg_terms.push_back(scalar_field_loss(g, layer, a, targets, spec, true));
        break;
      case SegSupervision::Off:
        break;
    }
    std::vector<Tape::Id> tt;
    tt.push_back(topo_matrix_loss(g, layer.topo.fused_l2l,
                                  l2l_labels(a, scene, mcfg.n_queries), mcfg, lcfg));
    if (layer.topo.t_p2i >= 0)
      tt.push_back(topo_matrix_loss(
          g, layer.topo.t_p2i, p2i_labels(a, scene, mcfg.n_queries, mcfg.pts_per_line), mcfg,
          lcfg));
    if (layer.topo.fused_l2t >= 0) {
      tt.push_back(topo_matrix_loss(g, layer.topo.fused_l2t,
                                    l2t_labels(a, scene, mcfg.n_queries), mcfg, lcfg));
      if (layer.topo.t_p2t >= 0)
        tt.push_back(topo_matrix_loss(
            g, layer.topo.t_p2t, p2t_labels(a, scene, mcfg.n_queries, mcfg.pts_per_line), mcfg,
            lcfg));
    }
    topo_terms.push_back(t.add_n(tt));
    bd.assignments.push_back(std::move(a));
  }
  det_terms.push_back(te_loss(g, out.traffic, scene));

  bd.det = t.add_n(det_terms);
  bd.seg = seg_terms.empty() ? t.constant(Tensor::zeros(1, 1)) : t.add_n(seg_terms);
  bd.topo = t.add_n(topo_terms);
  bd.total = t.add_n({t.scale(bd.det, lcfg.w_det), t.scale(bd.seg, lcfg.w_seg),
                      t.scale(bd.topo, lcfg.w_topo)});
  return bd;
}

}  // namespace lanetopo

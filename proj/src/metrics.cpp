#include "lanetopo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace lanetopo {

double frechet(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  if (a.empty() || b.empty()) throw InputError("frechet: empty polyline");
  const size_t n = a.size(), m = b.size();
  auto d = [&](size_t i, size_t j) {
    return std::hypot(a[i][0] - b[j][0], a[i][1] - b[j][1]);
  };
  std::vector<double> prev(m), cur(m);
  prev[0] = d(0, 0);
  for (size_t j = 1; j < m; ++j) prev[j] = std::max(prev[j - 1], d(0, j));
  for (size_t i = 1; i < n; ++i) {
    cur[0] = std::max(prev[0], d(i, 0));
    for (size_t j = 1; j < m; ++j)
      cur[j] = std::max(std::min({prev[j], prev[j - 1], cur[j - 1]}), d(i, j));
    std::swap(prev, cur);
  }
  return prev[m - 1];
}

double average_precision(const std::vector<std::pair<double, bool>>& scored_tp, int n_gt) {
  if (n_gt == 0) return scored_tp.empty() ? 1.0 : 0.0;
  std::vector<int> order(scored_tp.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return scored_tp[x].first > scored_tp[y].first;
  });
  std::vector<double> prec, rec;
  int tp = 0, fp = 0;
  for (int idx : order) {
    if (scored_tp[idx].second) ++tp; else ++fp;
    prec.push_back(static_cast<double>(tp) / (tp + fp));
    rec.push_back(static_cast<double>(tp) / n_gt);
  }
  // precision envelope from the right, then all-point integration
  for (int i = static_cast<int>(prec.size()) - 2; i >= 0; --i)
    prec[i] = std::max(prec[i], prec[i + 1]);
  double ap = 0.0, last_r = 0.0;
  for (size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - last_r) * prec[i];
    last_r = rec[i];
  }
  return ap;
}

std::vector<int> match_lines(const std::vector<PredLine>& preds,
                             const std::vector<std::vector<Point2>>& gts, double threshold) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return preds[x].score > preds[y].score; });
  std::vector<int> pred_to_gt(preds.size(), -1);
  std::vector<char> used(gts.size(), 0);
  for (int pi : order) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi]) continue;
      double d = frechet(preds[pi].points, gts[gi]);
      if (d <= threshold && d < best_d) {
        best_d = d;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      pred_to_gt[pi] = best;
      used[best] = 1;
    }
  }
  return pred_to_gt;
}

double det_l(const std::vector<PredLine>& preds, const std::vector<std::vector<Point2>>& gts,
             const std::vector<double>& thresholds, std::vector<double>* per_threshold) {
  if (per_threshold) per_threshold->clear();
  double sum = 0.0;
  for (double th : thresholds) {
    auto m = match_lines(preds, gts, th);
    std::vector<std::pair<double, bool>> scored;
    for (size_t i = 0; i < preds.size(); ++i) scored.push_back({preds[i].score, m[i] >= 0});
    double ap = average_precision(scored, static_cast<int>(gts.size()));
    if (per_threshold) per_threshold->push_back(ap);
    sum += ap;
  }
  return thresholds.empty() ? 0.0 : sum / thresholds.size();
}

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b) {
  double ix = std::max(0.0, std::min(a[2], b[2]) - std::max(a[0], b[0]));
  double iy = std::max(0.0, std::min(a[3], b[3]) - std::max(a[1], b[1]));
  double inter = ix * iy;
  double area_a = std::max(0.0, a[2] - a[0]) * std::max(0.0, a[3] - a[1]);
  double area_b = std::max(0.0, b[2] - b[0]) * std::max(0.0, b[3] - b[1]);
  double uni = area_a + area_b - inter;
  return uni <= 0.0 ? 0.0 : inter / uni;
}

std::vector<int> match_boxes(const std::vector<PredBox>& preds,
                             const std::vector<TrafficElement>& gts, double iou_thresh) {
  std::vector<int> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int x, int y) { return preds[x].score > preds[y].score; });
  std::vector<int> pred_to_gt(preds.size(), -1);
  std::vector<char> used(gts.size(), 0);
  for (int pi : order) {
    int best = -1;
    double best_iou = iou_thresh;
    for (size_t gi = 0; gi < gts.size(); ++gi) {
      if (used[gi]) continue;
      if (preds[pi].category != traffic_category_index(gts[gi].category)) continue;
      double iou = box_iou(preds[pi].box, gts[gi].box);
      if (iou >= best_iou) {
        best_iou = iou;
        best = static_cast<int>(gi);
      }
    }
    if (best >= 0) {
      pred_to_gt[pi] = best;
      used[best] = 1;
    }
  }
  return pred_to_gt;
}

double det_t(const std::vector<PredBox>& preds, const std::vector<TrafficElement>& gts,
             double iou_thresh) {
  int kcat = static_cast<int>(traffic_categories().size());
  auto m = match_boxes(preds, gts, iou_thresh);
  double sum = 0.0;
  int counted = 0;
  for (int k = 0; k < kcat; ++k) {
    int n_gt = 0;
    for (const auto& g : gts)
      if (traffic_category_index(g.category) == k) ++n_gt;
    if (n_gt == 0) continue;
    std::vector<std::pair<double, bool>> scored;
    for (size_t i = 0; i < preds.size(); ++i)
      if (preds[i].category == k) scored.push_back({preds[i].score, m[i] >= 0});
    sum += average_precision(scored, n_gt);
    ++counted;
  }
  return counted == 0 ? 1.0 : sum / counted;
}

namespace {

// ranked-list AP for one GT vertex: candidates are (probability, relevant)
// with ties broken by the caller's candidate ordering (ascending index).
double vertex_ap(const std::vector<std::pair<double, bool>>& candidates, int n_rel) {
  if (n_rel == 0) return 1.0;
  std::vector<int> order(candidates.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    return candidates[x].first > candidates[y].first;
  });
  double ap = 0.0;
  int hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (candidates[order[rank]].second) {
      ++hits;
      ap += static_cast<double>(hits) / (rank + 1);
    }
  }
  return ap / n_rel;
}

}  // namespace

double top_ll(const Tensor& pred_adj_probs, const std::vector<int>& pred_to_gt,
              const std::vector<std::vector<int>>& gt_adj) {
  const int g = static_cast<int>(gt_adj.size());
  std::vector<int> gt_to_pred(g, -1);
  for (size_t p = 0; p < pred_to_gt.size(); ++p)
    if (pred_to_gt[p] >= 0) gt_to_pred[pred_to_gt[p]] = static_cast<int>(p);
  double sum = 0.0;
  int counted = 0;
  for (int gi = 0; gi < g; ++gi) {
    int n_rel = 0;
    for (int gj = 0; gj < g; ++gj) n_rel += gt_adj[gi][gj];
    if (n_rel == 0) continue;
    ++counted;
    if (gt_to_pred[gi] < 0) continue;  // unmatched vertex contributes AP 0
    std::vector<std::pair<double, bool>> cand;
    for (int gj = 0; gj < g; ++gj) {
      if (gt_to_pred[gj] < 0) continue;
      cand.push_back({pred_adj_probs.at(gt_to_pred[gi], gt_to_pred[gj]),
                      gt_adj[gi][gj] != 0});
    }
    sum += vertex_ap(cand, n_rel);
  }
  return counted == 0 ? 1.0 : sum / counted;
}

double top_lt(const Tensor& pred_l2t_probs, const std::vector<int>& pred_to_gt,
              const std::vector<int>& te_pred_to_gt,
              const std::vector<std::vector<int>>& gt_l2t) {
  const int g = static_cast<int>(gt_l2t.size());
  const int m = g > 0 ? static_cast<int>(gt_l2t[0].size()) : 0;
  std::vector<int> gt_to_pred(g, -1), te_gt_to_pred(m, -1);
  for (size_t p = 0; p < pred_to_gt.size(); ++p)
    if (pred_to_gt[p] >= 0) gt_to_pred[pred_to_gt[p]] = static_cast<int>(p);
  for (size_t p = 0; p < te_pred_to_gt.size(); ++p)
    if (te_pred_to_gt[p] >= 0) te_gt_to_pred[te_pred_to_gt[p]] = static_cast<int>(p);
  double sum = 0.0;
  int counted = 0;
  for (int gi = 0; gi < g; ++gi) {
    int n_rel = 0;
    for (int k = 0; k < m; ++k) n_rel += gt_l2t[gi][k];
    if (n_rel == 0) continue;
    ++counted;
    if (gt_to_pred[gi] < 0) continue;
    std::vector<std::pair<double, bool>> cand;
    for (int k = 0; k < m; ++k) {
      if (te_gt_to_pred[k] < 0) continue;
      cand.push_back({pred_l2t_probs.at(gt_to_pred[gi], te_gt_to_pred[k]),
                      gt_l2t[gi][k] != 0});
    }
    sum += vertex_ap(cand, n_rel);
  }
  return counted == 0 ? 1.0 : sum / counted;
}

double ols_mean(double det_l, double det_t, double top_ll, double top_lt) {
  return (det_l + det_t + top_ll + top_lt) / 4.0;
}

double ols_sqrt(double det_l, double det_t, double top_ll, double top_lt) {
  return (det_l + det_t + std::sqrt(top_ll) + std::sqrt(top_lt)) / 4.0;
}

void EvalReport::finalize() {
  ols_mean = lanetopo::ols_mean(det_l, det_t, top_ll, top_lt);
  ols_sqrt = lanetopo::ols_sqrt(det_l, det_t, top_ll, top_lt);
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["det_l"] = det_l;
  j["det_t"] = det_t;
  j["top_ll"] = top_ll;
  j["top_lt"] = top_lt;
  j["ols_mean"] = ols_mean;
  j["ols_sqrt"] = ols_sqrt;
  j["det_l_per_threshold"] = det_l_per_threshold;
  j["n_scenes"] = n_scenes;
  return j.dump(2);
}

}  // namespace lanetopo

#pragma once

#include <array>
#include <string>
#include <vector>

#include "lanetopo/scene.hpp"

namespace lanetopo {

struct PredLine {
  std::vector<Point2> points;
  double score = 0.0;
};

struct PredBox {
  std::array<double, 4> box{};
  int category = 0;
  double score = 0.0;
};

// Discrete Frechet distance between two polylines (dynamic programming).
double frechet(const std::vector<Point2>& a, const std::vector<Point2>& b);

// All-point interpolated AP from per-prediction (score, is_tp) flags.
// Predictions are ranked by descending score, ties broken by ascending index.
double average_precision(const std::vector<std::pair<double, bool>>& scored_tp, int n_gt);

// Greedy confidence-descending one-to-one matching; pred i matches the nearest
// unmatched GT with frechet <= threshold. Returns pred index -> gt index or -1.
std::vector<int> match_lines(const std::vector<PredLine>& preds,
                             const std::vector<std::vector<Point2>>& gts, double threshold);

double det_l(const std::vector<PredLine>& preds, const std::vector<std::vector<Point2>>& gts,
             const std::vector<double>& thresholds, std::vector<double>* per_threshold = nullptr);

double box_iou(const std::array<double, 4>& a, const std::array<double, 4>& b);
std::vector<int> match_boxes(const std::vector<PredBox>& preds,
                             const std::vector<TrafficElement>& gts, double iou_thresh);
double det_t(const std::vector<PredBox>& preds, const std::vector<TrafficElement>& gts,
             double iou_thresh = 0.75);

// Ranked-edge AP over GT vertices with at least one outgoing GT edge.
// pred_to_gt maps pred instance -> gt instance (-1 unmatched).
double top_ll(const Tensor& pred_adj_probs, const std::vector<int>& pred_to_gt,
              const std::vector<std::vector<int>>& gt_adj);

// Bipartite variant; te_pred_to_gt maps pred TE -> gt TE (-1 unmatched).
double top_lt(const Tensor& pred_l2t_probs, const std::vector<int>& pred_to_gt,
              const std::vector<int>& te_pred_to_gt, const std::vector<std::vector<int>>& gt_l2t);

struct EvalReport {
  double det_l = 0.0;
  double det_t = 0.0;
  double top_ll = 0.0;
  double top_lt = 0.0;
  double ols_mean = 0.0;
  double ols_sqrt = 0.0;
  std::vector<double> det_l_per_threshold;
  int n_scenes = 0;

  void finalize();  // fills both OLS variants from the four scores
  std::string to_json() const;
};

double ols_mean(double det_l, double det_t, double top_ll, double top_lt);
double ols_sqrt(double det_l, double det_t, double top_ll, double top_lt);

inline const std::vector<double>& frechet_thresholds() {
  static const std::vector<double> th = {1.0, 1.5, 2.0};
  return th;
}

}  // namespace lanetopo

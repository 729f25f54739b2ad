#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "lanetopo/metrics.hpp"

using namespace lanetopo;

namespace {
double dist(const Point2& a, const Point2& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

// independent oracle: explicit enumeration of every monotone coupling
double frechet_enum(const std::vector<Point2>& a, const std::vector<Point2>& b, size_t i,
                    size_t j) {
  double here = dist(a[i], b[j]);
  if (i == 0 && j == 0) return here;
  double best = std::numeric_limits<double>::infinity();
  if (i > 0) best = std::min(best, frechet_enum(a, b, i - 1, j));
  if (j > 0) best = std::min(best, frechet_enum(a, b, i, j - 1));
  if (i > 0 && j > 0) best = std::min(best, frechet_enum(a, b, i - 1, j - 1));
  return std::max(here, best);
}

std::vector<Point2> random_polyline(Rng& rng, int max_pts) {
  int n = 1 + static_cast<int>(rng.uniform() * max_pts);
  std::vector<Point2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({rng.uniform() * 10, rng.uniform() * 10});
  return pts;
}
}  // namespace

TEST_CASE("frechet: trivial values, symmetry, enumeration oracle") {
  std::vector<Point2> a = {{0, 0}, {1, 0}};
  CHECK(frechet(a, a) == 0.0);
  std::vector<Point2> shifted = {{0, 2}, {1, 2}};
  CHECK(frechet(a, shifted) == doctest::Approx(2.0));
  std::vector<Point2> single = {{3, 4}};
  CHECK(frechet(single, {{0, 0}}) == doctest::Approx(5.0));
  CHECK_THROWS_AS(frechet({}, a), InputError);

  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    auto p = random_polyline(rng, 6);
    auto q = random_polyline(rng, 6);
    double got = frechet(p, q);
    double want = frechet_enum(p, q, p.size() - 1, q.size() - 1);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(frechet(q, p) == doctest::Approx(got).epsilon(1e-12));
    // lower-bounded by the larger endpoint distance
    CHECK(got >= dist(p.front(), q.front()) - 1e-12);
    CHECK(got >= dist(p.back(), q.back()) - 1e-12);
  }
}

TEST_CASE("average_precision: hand case, edge cases, monotone in score quality") {
  // ranked TP, FP, TP over 2 GT: prec 1, 1/2, 2/3 -> envelope 1, 2/3, 2/3
  // AP = 0.5 * 1 + 0.5 * 2/3
  std::vector<std::pair<double, bool>> s = {{0.9, true}, {0.8, false}, {0.7, true}};
  CHECK(average_precision(s, 2) == doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-12));

  CHECK(average_precision({}, 0) == 1.0);
  CHECK(average_precision({{0.5, false}}, 0) == 0.0);
  CHECK(average_precision({}, 3) == 0.0);
  CHECK(average_precision({{0.9, true}, {0.8, true}}, 2) == doctest::Approx(1.0));

  // moving a TP above an FP can only improve AP
  std::vector<std::pair<double, bool>> worse = {{0.9, false}, {0.8, true}, {0.7, true}};
  CHECK(average_precision(worse, 2) < average_precision(s, 2));
}

TEST_CASE("match_lines: greedy by confidence, threshold enforced") {
  std::vector<std::vector<Point2>> gts = {{{0, 0}, {5, 0}}, {{0, 3}, {5, 3}}};
  PredLine low, high;
  low.points = {{0, 1.4}, {5, 1.4}};  // 1.4 from gt0, 1.6 from gt1
  low.score = 0.2;
  high.points = {{0, 1.0}, {5, 1.0}};  // 1.0 from gt0, 2.0 from gt1
  high.score = 0.9;
  auto m = match_lines({low, high}, gts, 1.5);
  CHECK(m[1] == 0);   // confident prediction claims the nearest gt first
  CHECK(m[0] == -1);  // leftover gt1 is 1.6 away, above the threshold
  auto loose = match_lines({low, high}, gts, 2.5);
  CHECK(loose[1] == 0);
  CHECK(loose[0] == 1);
}

TEST_CASE("det_l: perfect predictions give 1, per-threshold breakdown is monotone") {
  std::vector<std::vector<Point2>> gts = {{{0, 0}, {4, 0}}, {{0, 5}, {4, 5}}};
  std::vector<PredLine> preds(2);
  preds[0].points = gts[0];
  preds[0].score = 0.9;
  preds[1].points = gts[1];
  preds[1].score = 0.8;
  std::vector<double> per;
  CHECK(det_l(preds, gts, frechet_thresholds(), &per) == doctest::Approx(1.0));
  REQUIRE(per.size() == 3);

  preds[1].points = {{0, 6.2}, {4, 6.2}};  // 1.2 off: passes 1.5 and 2.0 only
  double mean = det_l(preds, gts, frechet_thresholds(), &per);
  CHECK(per[0] == doctest::Approx(0.5));
  CHECK(per[1] == doctest::Approx(1.0));
  CHECK(per[2] == doctest::Approx(1.0));
  CHECK(mean == doctest::Approx((per[0] + per[1] + per[2]) / 3.0));
  for (size_t i = 1; i < per.size(); ++i) CHECK(per[i] >= per[i - 1]);
}

TEST_CASE("box_iou and det_t category handling") {
  std::array<double, 4> a = {0, 0, 2, 2};
  CHECK(box_iou(a, a) == doctest::Approx(1.0));
  std::array<double, 4> b = {1, 0, 3, 2};  // overlap 2, union 6
  CHECK(box_iou(a, b) == doctest::Approx(2.0 / 6.0));
  std::array<double, 4> c = {5, 5, 6, 6};
  CHECK(box_iou(a, c) == 0.0);

  TrafficElement g1, g2;
  g1.box = {0.1, 0.1, 0.3, 0.3};
  g1.category = traffic_categories()[0];
  g2.box = {0.6, 0.6, 0.8, 0.8};
  g2.category = traffic_categories()[1];
  PredBox p1, p2;
  p1.box = g1.box;
  p1.category = 0;
  p1.score = 0.9;
  p2.box = g2.box;
  p2.category = 0;  // wrong category: cannot match g2
  p2.score = 0.8;
  auto m = match_boxes({p1, p2}, {g1, g2}, 0.75);
  CHECK(m[0] == 0);
  CHECK(m[1] == -1);
  // category 0 AP: one TP one FP over one gt; category 1 AP: no preds over one gt
  double want = (average_precision({{0.9, true}, {0.8, false}}, 1) + 0.0) / 2.0;
  CHECK(det_t({p1, p2}, {g1, g2}) == doctest::Approx(want));
  CHECK(det_t({}, {}) == 1.0);  // vacuous
  p2.category = 1;
  CHECK(det_t({p1, p2}, {g1, g2}) == doctest::Approx(1.0));
}

TEST_CASE("top_ll: perfect ranking, half-credit case, unmatched vertex penalty") {
  // gt: 0 -> 1, 0 -> 2
  std::vector<std::vector<int>> adj = {{0, 1, 1}, {0, 0, 0}, {0, 0, 0}};
  std::vector<int> ident = {0, 1, 2};
  Tensor probs(3, 3);
  probs.at(0, 1) = 0.9;
  probs.at(0, 2) = 0.8;
  probs.at(0, 0) = 0.1;
  CHECK(top_ll(probs, ident, adj) == doctest::Approx(1.0));

  // one FP ranked above the single TP: AP = 1/2
  std::vector<std::vector<int>> one = {{0, 1}, {0, 0}};
  Tensor p2(2, 2);
  p2.at(0, 0) = 0.9;  // false edge outranks
  p2.at(0, 1) = 0.5;
  CHECK(top_ll(p2, {0, 1}, one) == doctest::Approx(0.5));

  // the source vertex is unmatched: counted with AP 0
  CHECK(top_ll(p2, {-1, 1}, one) == doctest::Approx(0.0));
  // no gt edges at all: vacuous 1
  std::vector<std::vector<int>> none = {{0, 0}, {0, 0}};
  CHECK(top_ll(p2, {0, 1}, none) == 1.0);

  // rank invariance: scaling probabilities preserves the score
  Tensor scaled = p2;
  for (auto& v : scaled.data) v *= 0.3;
  CHECK(top_ll(scaled, {0, 1}, one) == top_ll(p2, {0, 1}, one));
}

TEST_CASE("top_ll tie handling follows candidate index order") {
  // two outgoing edges, all probabilities equal; candidates in index order are
  // (0: FP), (1: TP), (2: TP) -> hits at ranks 2 and 3
  std::vector<std::vector<int>> adj = {{0, 1, 1}, {0, 0, 0}, {0, 0, 0}};
  Tensor p(3, 3);
  for (auto& v : p.data) v = 0.5;
  double want = (1.0 / 2.0 + 2.0 / 3.0) / 2.0;
  CHECK(top_ll(p, {0, 1, 2}, adj) == doctest::Approx(want));
}

TEST_CASE("top_lt mirrors the bipartite projection") {
  std::vector<std::vector<int>> l2t = {{1, 0}, {0, 0}};
  Tensor p(2, 2);
  p.at(0, 0) = 0.9;
  p.at(0, 1) = 0.1;
  CHECK(top_lt(p, {0, 1}, {0, 1}, l2t) == doctest::Approx(1.0));
  // the linked traffic element is unmatched: its candidate disappears, AP 0
  CHECK(top_lt(p, {0, 1}, {-1, 1}, l2t) == doctest::Approx(0.0));
  std::vector<std::vector<int>> none = {{0, 0}, {0, 0}};
  CHECK(top_lt(p, {0, 1}, {0, 1}, none) == 1.0);
}

TEST_CASE("ols variants and the published headline row") {
  CHECK(ols_mean(1, 1, 1, 1) == 1.0);
  CHECK(ols_mean(1, 0, 0, 1) == 0.5);
  CHECK(ols_sqrt(0, 0, 0.25, 0.25) == doctest::Approx(0.25));
  CHECK(ols_sqrt(0.361, 0.483, 0.318, 0.346) == doctest::Approx(0.499).epsilon(2e-3));

  EvalReport r;
  r.det_l = 0.8;
  r.det_t = 0.6;
  r.top_ll = 0.49;
  r.top_lt = 0.25;
  r.finalize();
  CHECK(r.ols_mean == doctest::Approx((0.8 + 0.6 + 0.49 + 0.25) / 4.0));
  CHECK(r.ols_sqrt == doctest::Approx((0.8 + 0.6 + 0.7 + 0.5) / 4.0));
  std::string j = r.to_json();
  CHECK(j.find("\"det_l\"") != std::string::npos);
  CHECK(j.find("\"ols_sqrt\"") != std::string::npos);
}

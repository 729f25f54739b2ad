#include <cmath>

#include "doctest.h"
#include "lanetopo/masks.hpp"

using namespace lanetopo;

TEST_CASE("p2p mask: structure, counts, brute force") {
  BlockMask m1 = build_p2p_mask(1, 3);
  for (int r = 0; r < 3; ++r) CHECK(m1.allowed_count(r) == 3);

  BlockMask m = build_p2p_mask(2, 2);
  CHECK_FALSE(m.is_allowed(0, 3));
  CHECK(m.is_allowed(0, 1));
  CHECK(m.is_allowed(3, 2));

  for (int n = 1; n <= 4; ++n)
    for (int p = 1; p <= 4; ++p) {
      BlockMask bm = build_p2p_mask(n, p);
      int count = 0;
      for (int a = 0; a < n * p; ++a)
        for (int b = 0; b < n * p; ++b) {
          bool same = (a / p) == (b / p);
          CHECK(bm.is_allowed(a, b) == same);
          if (bm.is_allowed(a, b)) ++count;
        }
      CHECK(count == n * p * p);
    }
}

TEST_CASE("geometric prior: arithmetic oracles and monotonicity") {
  double sigma = 2.0;
  // line 0 ends at (0,0); line 1 starts at (0,0); line 2 starts at (2,0) = sigma away
  std::vector<std::vector<Point2>> lines = {
      {{-5, 0}, {0, 0}}, {{0, 0}, {5, 0}}, {{2, 0}, {7, 0}}};
  TopoPrior pr = geometric_prior(lines, 3, sigma);
  CHECK(pr.t_i2i.at(0, 1) == doctest::Approx(std::log(0.9999 / 0.0001)).epsilon(1e-10));
  CHECK(pr.t_i2i.at(0, 1) == doctest::Approx(9.21024).epsilon(1e-4));
  double s = std::exp(-1.0);
  CHECK(pr.t_i2i.at(0, 2) == doctest::Approx(std::log(s / (1 - s))).epsilon(1e-10));
  CHECK(pr.t_i2i.at(0, 2) == doctest::Approx(-0.5413).epsilon(1e-3));
  for (int i = 0; i < 3; ++i)
    CHECK(pr.t_i2i.at(i, i) == doctest::Approx(std::log(1e-4 / (1 - 1e-4))).epsilon(1e-10));

  // t_p2i broadcast
  REQUIRE(pr.t_p2i.rows == 9);
  for (int i = 0; i < 3; ++i)
    for (int p = 0; p < 3; ++p)
      for (int j = 0; j < 3; ++j) CHECK(pr.t_p2i.at(i * 3 + p, j) == pr.t_i2i.at(i, j));

  // closer endpoint pairs get strictly larger logits (off-diagonal)
  CHECK(pr.t_i2i.at(0, 1) > pr.t_i2i.at(0, 2));
  CHECK(pr.t_i2i.at(0, 2) > pr.t_i2i.at(2, 1));  // d(end2=(7,0), start1=(0,0)) = 7 > 2

  std::vector<std::vector<Point2>> bad = {{{0, 0}}};
  CHECK_THROWS_AS(geometric_prior(bad, 2, sigma), InputError);
}

TEST_CASE("relation encoder: zero init constant, purity, scalar oracle") {
  ParamStore store;
  {
    Graph g(store);
    Tensor logits(2, 2);
    relation_encoder(g, g.tape().constant(logits), "re", 2);
  }
  for (auto& e : store.entries())
    for (auto& v : e.value.data) v = 0.0;
  Tensor fb(1, 1);
  fb.at(0, 0) = 0.7;
  store.set("re.l3.b", fb);
  {
    Graph g(store);
    Tensor logits(2, 3);
    logits.at(0, 0) = 5;
    logits.at(1, 2) = -3;
    Tape::Id bias = relation_encoder(g, g.tape().constant(logits), "re", 2);
    REQUIRE(g.tape().val(bias).rows == 2);
    REQUIRE(g.tape().val(bias).cols == 3);
    for (double v : g.tape().val(bias).data) CHECK(v == doctest::Approx(0.7));
  }

  // elementwise purity: equal logits give equal biases; permutation permutes
  Rng rng(6);
  for (auto& e : store.entries())
    for (auto& v : e.value.data) v = rng.normal() * 0.4;
  Tensor logits(2, 2);
  logits.at(0, 0) = 1.5;
  logits.at(0, 1) = -0.2;
  logits.at(1, 0) = 1.5;  // duplicate of (0,0)
  logits.at(1, 1) = 0.9;
  Graph g(store);
  Tape::Id b1 = relation_encoder(g, g.tape().constant(logits), "re", 2);
  CHECK(g.tape().val(b1).at(0, 0) == g.tape().val(b1).at(1, 0));
  Tensor perm(2, 2);  // swap the two columns
  perm.at(0, 0) = logits.at(0, 1);
  perm.at(0, 1) = logits.at(0, 0);
  perm.at(1, 0) = logits.at(1, 1);
  perm.at(1, 1) = logits.at(1, 0);
  Tape::Id b2 = relation_encoder(g, g.tape().constant(perm), "re", 2);
  CHECK(g.tape().val(b2).at(0, 1) == g.tape().val(b1).at(0, 0));
  CHECK(g.tape().val(b2).at(1, 0) == g.tape().val(b1).at(1, 1));

  Tensor nonfinite(1, 1);
  nonfinite.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(relation_encoder(g, g.tape().constant(nonfinite), "re", 2), InputError);
}

TEST_CASE("relation encoder matches hand scalar chain") {
  ParamStore store;
  {
    Graph g(store);
    Tensor l(1, 1);
    relation_encoder(g, g.tape().constant(l), "rx", 2);
  }
  // hand-set 1->2->2->1 weights, identity-ish norms
  auto setv = [&](const std::string& n, std::vector<double> v, int r, int c) {
    Tensor t(r, c);
    t.data = v;
    store.set(n, t);
  };
  setv("rx.l1.w", {0.5, -1.0}, 1, 2);
  setv("rx.l1.b", {0.1, 0.2}, 1, 2);
  setv("rx.n1.g", {1.0, 1.0}, 1, 2);
  setv("rx.n1.b", {0.0, 0.0}, 1, 2);
  setv("rx.l2.w", {1.0, 0.5, -0.5, 2.0}, 2, 2);
  setv("rx.l2.b", {0.0, -0.1}, 1, 2);
  setv("rx.n2.g", {2.0, 1.0}, 1, 2);
  setv("rx.n2.b", {0.1, 0.0}, 1, 2);
  setv("rx.l3.w", {1.5, -2.0}, 2, 1);
  setv("rx.l3.b", {0.25}, 1, 1);

  double logit = 0.8;
  double x = 1.0 / (1.0 + std::exp(-logit));
  double h1[2] = {x * 0.5 + 0.1, x * -1.0 + 0.2};
  auto lnorm = [](double* v, const double* gg, const double* bb) {
    double mean = (v[0] + v[1]) / 2.0;
    double var = ((v[0] - mean) * (v[0] - mean) + (v[1] - mean) * (v[1] - mean)) / 2.0;
    double inv = 1.0 / std::sqrt(var + 1e-5);
    for (int i = 0; i < 2; ++i) v[i] = (v[i] - mean) * inv * gg[i] + bb[i];
  };
  double g1[2] = {1, 1}, z1[2] = {0, 0};
  lnorm(h1, g1, z1);
  for (double& v : h1) v = std::max(0.0, v);
  double h2[2] = {h1[0] * 1.0 + h1[1] * -0.5 + 0.0, h1[0] * 0.5 + h1[1] * 2.0 - 0.1};
  double g2[2] = {2, 1}, z2[2] = {0.1, 0};
  lnorm(h2, g2, z2);
  for (double& v : h2) v = std::max(0.0, v);
  double want = h2[0] * 1.5 + h2[1] * -2.0 + 0.25;

  Graph g(store);
  Tensor l(1, 1);
  l.at(0, 0) = logit;
  Tape::Id out = relation_encoder(g, g.tape().constant(l), "rx", 2);
  CHECK(g.tape().val(out).at(0, 0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("ddt_to_attention_mask: layer-0 ties, fallback, hand grid") {
  int n = 1, hw = 4;
  Tensor zeros(n * hw, 6);
  BlockMask all = ddt_to_attention_mask(zeros, n, hw, 3);
  CHECK(all.allowed_count(0) == hw);  // zero logits: argmax ties to class 0, all allowed

  Tensor five(n * hw, 6);
  for (int r = 0; r < n * hw; ++r) five.at(r, 5) = 10.0;
  BlockMask fb = ddt_to_attention_mask(five, n, hw, 3);
  CHECK(fb.allowed_count(0) == hw);  // empty set falls back to all-allowed

  // 2x2 grid, classes [[0,5],[3,2]], k_attend=3 -> allowed {0,2,3}
  Tensor grid(n * hw, 6);
  int cls[4] = {0, 5, 3, 2};
  for (int c = 0; c < 4; ++c) grid.at(c, cls[c]) = 4.0;
  BlockMask hm = ddt_to_attention_mask(grid, n, hw, 3);
  CHECK(hm.is_allowed(0, 0));
  CHECK_FALSE(hm.is_allowed(0, 1));
  CHECK(hm.is_allowed(0, 2));
  CHECK(hm.is_allowed(0, 3));

  CHECK_THROWS_AS(ddt_to_attention_mask(grid, n, hw, 7), ConfigError);
  CHECK_THROWS_AS(ddt_to_attention_mask(grid, 2, hw, 3), ShapeError);
}

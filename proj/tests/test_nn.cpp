#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "lanetopo/nn.hpp"

using namespace lanetopo;

TEST_CASE("linear: identity, hand case, oracle") {
  ParamStore store;
  Graph g(store);
  Tensor x(1, 2);
  x.at(0, 0) = 1;
  x.at(0, 1) = 2;
  Tape::Id y = g.linear(g.tape().constant(x), "lin", 2);
  Tensor w(2, 2);
  w.at(0, 0) = 1;
  w.at(1, 1) = 1;
  store.set("lin.w", w);
  Tensor b(1, 2);
  b.at(0, 0) = 3;
  b.at(0, 1) = 4;
  store.set("lin.b", b);
  Graph g2(store);
  Tape::Id y2 = g2.linear(g2.tape().constant(x), "lin", 2);
  CHECK(g2.tape().val(y2).at(0, 0) == doctest::Approx(4).epsilon(1e-12));
  CHECK(g2.tape().val(y2).at(0, 1) == doctest::Approx(6).epsilon(1e-12));
  (void)y;
}

namespace {
// independent mlp3 forward: linear, LN(eps 1e-5), relu twice, then linear
std::vector<double> mlp3_oracle(const std::vector<double>& x, const ParamStore& s,
                                const std::string& p, int in, int h, int out) {
  auto lin = [&](const std::vector<double>& v, const std::string& name, int ni, int no) {
    const Tensor& w = s.value(name + ".w");
    const Tensor& b = s.value(name + ".b");
    std::vector<double> y(no);
    for (int j = 0; j < no; ++j) {
      y[j] = b.at(0, j);
      for (int i = 0; i < ni; ++i) y[j] += v[i] * w.at(i, j);
    }
    return y;
  };
  auto ln = [&](std::vector<double> v, const std::string& name) {
    const Tensor& gg = s.value(name + ".g");
    const Tensor& bb = s.value(name + ".b");
    double mean = 0;
    for (double z : v) mean += z;
    mean /= v.size();
    double var = 0;
    for (double z : v) var += (z - mean) * (z - mean);
    var /= v.size();
    double inv = 1.0 / std::sqrt(var + 1e-5);
    for (size_t i = 0; i < v.size(); ++i)
      v[i] = (v[i] - mean) * inv * gg.at(0, i) + bb.at(0, i);
    return v;
  };
  auto relu = [](std::vector<double> v) {
    for (double& z : v) z = std::max(0.0, z);
    return v;
  };
  auto a = relu(ln(lin(x, p + ".l1", in, h), p + ".n1"));
  auto b = relu(ln(lin(a, p + ".l2", h, h), p + ".n2"));
  return lin(b, p + ".l3", h, out);
}
}  // namespace

TEST_CASE("mlp3: zero weights give final bias; random case matches oracle") {
  ParamStore store;
  {
    Graph g(store);
    Tensor x(3, 2);
    Rng rng(4);
    for (auto& v : x.data) v = rng.normal();
    Tape::Id y = g.mlp3(g.tape().constant(x), "m", 4, 3);
    (void)y;
  }
  // zero all weights, set final bias
  for (auto& e : store.entries())
    for (auto& v : e.value.data) v = 0.0;
  Tensor fb(1, 3);
  fb.at(0, 0) = 0.25;
  fb.at(0, 1) = -1;
  fb.at(0, 2) = 2;
  store.set("m.l3.b", fb);
  {
    Graph g(store);
    Tensor x(2, 2);
    x.at(0, 0) = 5;
    x.at(1, 1) = -3;
    Tape::Id y = g.mlp3(g.tape().constant(x), "m", 4, 3);
    for (int r = 0; r < 2; ++r) {
      CHECK(g.tape().val(y).at(r, 0) == doctest::Approx(0.25));
      CHECK(g.tape().val(y).at(r, 1) == doctest::Approx(-1));
      CHECK(g.tape().val(y).at(r, 2) == doctest::Approx(2));
    }
  }
  // randomize and compare against the oracle
  Rng rng(17);
  for (auto& e : store.entries())
    for (auto& v : e.value.data) v = rng.normal() * 0.5;
  Graph g(store);
  Tensor x(1, 2);
  x.at(0, 0) = 0.3;
  x.at(0, 1) = -0.8;
  Tape::Id y = g.mlp3(g.tape().constant(x), "m", 4, 3);
  auto want = mlp3_oracle({0.3, -0.8}, store, "m", 2, 4, 3);
  for (int j = 0; j < 3; ++j) CHECK(g.tape().val(y).at(0, j) == doctest::Approx(want[j]).epsilon(1e-10));
}

TEST_CASE("grad_check: quadratic exact, mlp3+softmax, corrupted negative control") {
  ParamStore store;
  Rng rng(8);
  store.ensure("W", 3, 3, Init::Xavier, rng);
  auto quad = [&](bool wg) {
    if (wg) store.zero_grads();
    Tape t;
    Tape::Id w = t.leaf(store.value("W"));
    Tape::Id s = t.sum_all(t.mul(w, w));
    double v = t.val(s).at(0, 0);
    if (wg) {
      t.backward(s);
      store.grad("W") = t.grad(w);
    }
    return v;
  };
  auto rep = grad_check(store, quad, 1e-5, 1e-3);
  CHECK(rep.pass);
  CHECK(rep.worst < 1e-6);

  ParamStore store2;
  auto net = [&](bool wg) {
    if (wg) store2.zero_grads();
    Graph g(store2);
    Tensor x(2, 3);
    x.at(0, 0) = 1;
    x.at(1, 2) = -1;
    Tape::Id y = g.mlp3(g.tape().constant(x), "net", 4, 4);
    Tape::Id s = g.tape().sum_all(g.tape().mul(g.tape().softmax_rows(y), y));
    double v = g.tape().val(s).at(0, 0);
    if (wg) g.backward_to_store(s);
    return v;
  };
  net(true);
  CHECK(grad_check(store2, net, 1e-5, 1e-3).pass);

  auto corrupted = [&](bool wg) {
    double v = net(wg);
    if (wg) store2.scale_grads(1.10);
    return v;
  };
  CHECK_FALSE(grad_check(store2, corrupted, 1e-5, 1e-3).pass);
}

TEST_CASE("adamw: decay applies to weights, skips biases/norms/queries") {
  ParamStore store;
  Rng rng(2);
  store.ensure("x.w", 1, 1, Init::Ones, rng);
  store.ensure("x.b", 1, 1, Init::Ones, rng);
  store.ensure("n.g", 1, 1, Init::Ones, rng);
  store.ensure("query.ins", 1, 1, Init::Ones, rng);
  store.zero_grads();  // zero gradients: only decay moves parameters
  store.adamw_step(0.1, 0.5);
  CHECK(store.value("x.w").at(0, 0) < 1.0);
  CHECK(store.value("x.b").at(0, 0) == 1.0);
  CHECK(store.value("n.g").at(0, 0) == 1.0);
  CHECK(store.value("query.ins").at(0, 0) == 1.0);
}

TEST_CASE("checkpoint round-trips bit-exactly including moments") {
  ParamStore store;
  Rng rng(77);
  store.ensure("a.w", 3, 5, Init::Xavier, rng);
  store.ensure("b.b", 1, 4, Init::Xavier, rng);
  for (auto& e : store.entries()) {
    for (auto& v : e.grad.data) v = rng.normal();
  }
  store.adamw_step(1e-3, 0.01);
  store.adamw_step(1e-3, 0.01);
  auto path = std::filesystem::temp_directory_path() / "lanetopo_ckpt_test.bin";
  store.save(path.string(), "{\"note\":1}");

  ParamStore loaded;
  std::string extra = loaded.load(path.string());
  CHECK(extra.find("note") != std::string::npos);
  CHECK(loaded.step_count() == store.step_count());
  REQUIRE(loaded.size() == store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    const auto& a = store.entries()[i];
    const auto& b = loaded.entries()[i];
    CHECK(a.name == b.name);
    for (int k = 0; k < a.value.numel(); ++k) {
      CHECK(a.value.data[k] == b.value.data[k]);
      CHECK(a.m.data[k] == b.m.data[k]);
      CHECK(a.v.data[k] == b.v.data[k]);
    }
  }
  std::filesystem::remove(path);
}

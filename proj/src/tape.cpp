#include "lanetopo/tape.hpp"

#include <algorithm>
#include <cmath>

namespace lanetopo {

namespace {
constexpr double kLnEps = 1e-5;  // layer-norm variance epsilon

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}
}  // namespace

Tape::Id Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::leaf(Tensor value) { return push(std::move(value), true, nullptr); }
Tape::Id Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Tape::Id Tape::add(Id a, Id b) {
  check_same_shape(val(a), val(b), "add");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a))
        for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i];
      if (t.needs_grad(b))
        for (int i = 0; i < g.numel(); ++i) t.grad(b).data[i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::add_n(const std::vector<Id>& ids) {
  if (ids.empty()) throw InputError("add_n: empty input list");
  Id acc = ids[0];
  for (size_t i = 1; i < ids.size(); ++i) acc = add(acc, ids[i]);
  return acc;
}

Tape::Id Tape::sub(Id a, Id b) {
  check_same_shape(val(a), val(b), "sub");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a))
        for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i];
      if (t.needs_grad(b))
        for (int i = 0; i < g.numel(); ++i) t.grad(b).data[i] -= g.data[i];
    };
  return self;
}

Tape::Id Tape::mul(Id a, Id b) {
  check_same_shape(val(a), val(b), "mul");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      const Tensor& vb2 = t.val(b);
      if (t.needs_grad(a))
        for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i] * vb2.data[i];
      if (t.needs_grad(b))
        for (int i = 0; i < g.numel(); ++i) t.grad(b).data[i] += g.data[i] * va.data[i];
    };
  return self;
}

Tape::Id Tape::div(Id a, Id b) {
  check_same_shape(val(a), val(b), "div");
  Tensor out = val(a);
  const Tensor& vb = val(b);
  for (int i = 0; i < out.numel(); ++i) out.data[i] /= vb.data[i];
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      const Tensor& vb2 = t.val(b);
      if (t.needs_grad(a))
        for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i] / vb2.data[i];
      if (t.needs_grad(b))
        for (int i = 0; i < g.numel(); ++i)
          t.grad(b).data[i] -= g.data[i] * va.data[i] / (vb2.data[i] * vb2.data[i]);
    };
  return self;
}

Tape::Id Tape::add_row(Id a, Id bias) {
  const Tensor& va = val(a);
  const Tensor& vb = val(bias);
  if (vb.rows != 1 || vb.cols != va.cols)
    throw ShapeError("add_row: bias must be 1 x cols");
  Tensor out = va;
  for (int i = 0; i < out.rows; ++i)
    for (int j = 0; j < out.cols; ++j) out.at(i, j) += vb.at(0, j);
  bool ng = needs_grad(a) || needs_grad(bias);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, bias](Tape& t) {
      const Tensor& g = t.grad(self);
      if (t.needs_grad(a))
        for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i];
      if (t.needs_grad(bias)) {
        Tensor& gb = t.grad(bias);
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < g.cols; ++j) gb.at(0, j) += g.at(i, j);
      }
    };
  return self;
}

Tape::Id Tape::scale(Id a, double s) {
  Tensor out = val(a);
  for (auto& x : out.data) x *= s;
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, s](Tape& t) {
      const Tensor& g = t.grad(self);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += s * g.data[i];
    };
  return self;
}

Tape::Id Tape::add_scalar(Id a, double s) {
  Tensor out = val(a);
  for (auto& x : out.data) x += s;
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::mul_const(Id a, const Tensor& c) {
  check_same_shape(val(a), c, "mul_const");
  Tensor out = val(a);
  for (int i = 0; i < out.numel(); ++i) out.data[i] *= c.data[i];
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, c](Tape& t) {
      const Tensor& g = t.grad(self);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i] * c.data[i];
    };
  return self;
}

Tape::Id Tape::relu(Id a) {
  Tensor out = val(a);
  for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      for (int i = 0; i < g.numel(); ++i)
        if (va.data[i] > 0.0) t.grad(a).data[i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::sigmoid(Id a) {
  Tensor out = val(a);
  for (auto& x : out.data) x = 1.0 / (1.0 + std::exp(-x));
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      for (int i = 0; i < g.numel(); ++i)
        t.grad(a).data[i] += g.data[i] * y.data[i] * (1.0 - y.data[i]);
    };
  return self;
}

Tape::Id Tape::log_(Id a) {
  Tensor out = val(a);
  for (auto& x : out.data) x = std::log(x);
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i] / va.data[i];
    };
  return self;
}

Tape::Id Tape::exp_(Id a) {
  Tensor out = val(a);
  for (auto& x : out.data) x = std::exp(x);
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i] * y.data[i];
    };
  return self;
}

Tape::Id Tape::powc(Id a, double e) {
  Tensor out = val(a);
  for (auto& x : out.data) x = std::pow(x, e);
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, e](Tape& t) {
      if (e == 0.0) return;
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      for (int i = 0; i < g.numel(); ++i)
        t.grad(a).data[i] += g.data[i] * e * std::pow(va.data[i], e - 1.0);
    };
  return self;
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  Tensor out = val(a);
  for (auto& x : out.data) x = std::min(hi, std::max(lo, x));
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, lo, hi](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va = t.val(a);
      for (int i = 0; i < g.numel(); ++i)
        if (va.data[i] >= lo && va.data[i] <= hi) t.grad(a).data[i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::transpose(Id a) {
  const Tensor& va = val(a);
  Tensor out(va.cols, va.rows);
  for (int i = 0; i < va.rows; ++i)
    for (int j = 0; j < va.cols; ++j) out.at(j, i) = va.at(i, j);
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad(a);
      for (int i = 0; i < g.rows; ++i)
        for (int j = 0; j < g.cols; ++j) ga.at(j, i) += g.at(i, j);
    };
  return self;
}

Tape::Id Tape::reshape(Id a, int r, int c) {
  const Tensor& va = val(a);
  if (r * c != va.numel()) throw ShapeError("reshape: element count mismatch");
  Tensor out(r, c);
  out.data = va.data;
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      for (int i = 0; i < g.numel(); ++i) t.grad(a).data[i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::concat_rows(const std::vector<Id>& ids) {
  if (ids.empty()) throw InputError("concat_rows: empty list");
  int cols = val(ids[0]).cols;
  int rows = 0;
  bool ng = false;
  for (Id id : ids) {
    if (val(id).cols != cols) throw ShapeError("concat_rows: column mismatch");
    rows += val(id).rows;
    ng = ng || needs_grad(id);
  }
  Tensor out(rows, cols);
  int r = 0;
  for (Id id : ids) {
    const Tensor& v = val(id);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + static_cast<size_t>(r) * cols);
    r += v.rows;
  }
  Id self = push(std::move(out), ng, nullptr);
  if (ng) {
    std::vector<Id> parts = ids;
    nodes_[self].backprop = [self, parts](Tape& t) {
      const Tensor& g = t.grad(self);
      int r0 = 0;
      for (Id id : parts) {
        int nr = t.val(id).rows;
        if (t.needs_grad(id)) {
          Tensor& gi = t.grad(id);
          for (int i = 0; i < nr * g.cols; ++i)
            gi.data[i] += g.data[static_cast<size_t>(r0) * g.cols + i];
        }
        r0 += nr;
      }
    };
  }
  return self;
}

Tape::Id Tape::slice_rows(Id a, int r0, int r1) {
  const Tensor& va = val(a);
  if (r0 < 0 || r1 > va.rows || r0 > r1) throw ShapeError("slice_rows: bad range");
  Tensor out(r1 - r0, va.cols);
  std::copy(va.data.begin() + static_cast<size_t>(r0) * va.cols,
            va.data.begin() + static_cast<size_t>(r1) * va.cols, out.data.begin());
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, r0](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad(a);
      for (int i = 0; i < g.numel(); ++i)
        ga.data[static_cast<size_t>(r0) * g.cols + i] += g.data[i];
    };
  return self;
}

Tape::Id Tape::select_rows(Id a, const std::vector<int>& idx) {
  const Tensor& va = val(a);
  Tensor out(static_cast<int>(idx.size()), va.cols);
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= va.rows) throw ShapeError("select_rows: index out of range");
    for (int j = 0; j < va.cols; ++j) out.at(static_cast<int>(i), j) = va.at(idx[i], j);
  }
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng) {
    std::vector<int> ix = idx;
    nodes_[self].backprop = [self, a, ix](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad(a);
      for (size_t i = 0; i < ix.size(); ++i)
        for (int j = 0; j < g.cols; ++j) ga.at(ix[i], j) += g.at(static_cast<int>(i), j);
    };
  }
  return self;
}

Tape::Id Tape::sum_all(Id a) {
  double s = 0.0;
  for (double x : val(a).data) s += x;
  Tensor out(1, 1);
  out.data[0] = s;
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      double g = t.grad(self).data[0];
      Tensor& ga = t.grad(a);
      for (auto& x : ga.data) x += g;
    };
  return self;
}

Tape::Id Tape::mean_all(Id a) {
  int n = val(a).numel();
  if (n == 0) throw InputError("mean_all: empty tensor");
  return scale(sum_all(a), 1.0 / n);
}

Tape::Id Tape::col_sums(Id a) {
  const Tensor& va = val(a);
  Tensor out(1, va.cols);
  for (int i = 0; i < va.rows; ++i)
    for (int j = 0; j < va.cols; ++j) out.at(0, j) += va.at(i, j);
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& ga = t.grad(a);
      for (int i = 0; i < ga.rows; ++i)
        for (int j = 0; j < ga.cols; ++j) ga.at(i, j) += g.at(0, j);
    };
  return self;
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.cols != vb.rows)
    throw ShapeError("matmul: inner dimension mismatch " + va.shape_str() + " * " + vb.shape_str());
  Tensor out(va.rows, vb.cols);
  for (int i = 0; i < va.rows; ++i) {
    const double* ai = &va.data[static_cast<size_t>(i) * va.cols];
    double* oi = &out.data[static_cast<size_t>(i) * out.cols];
    for (int k = 0; k < va.cols; ++k) {
      double av = ai[k];
      if (av == 0.0) continue;
      const double* bk = &vb.data[static_cast<size_t>(k) * vb.cols];
      for (int j = 0; j < vb.cols; ++j) oi[j] += av * bk[j];
    }
  }
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va2 = t.val(a);
      const Tensor& vb2 = t.val(b);
      if (t.needs_grad(a)) {  // dA += G * B^T
        Tensor& ga = t.grad(a);
        for (int i = 0; i < ga.rows; ++i)
          for (int k = 0; k < ga.cols; ++k) {
            double s = 0.0;
            const double* gi = &g.data[static_cast<size_t>(i) * g.cols];
            const double* bk = &vb2.data[static_cast<size_t>(k) * vb2.cols];
            for (int j = 0; j < g.cols; ++j) s += gi[j] * bk[j];
            ga.at(i, k) += s;
          }
      }
      if (t.needs_grad(b)) {  // dB += A^T * G
        Tensor& gb = t.grad(b);
        for (int i = 0; i < va2.rows; ++i) {
          const double* ai = &va2.data[static_cast<size_t>(i) * va2.cols];
          const double* gi = &g.data[static_cast<size_t>(i) * g.cols];
          for (int k = 0; k < va2.cols; ++k) {
            double av = ai[k];
            if (av == 0.0) continue;
            double* bk = &gb.data[static_cast<size_t>(k) * gb.cols];
            for (int j = 0; j < g.cols; ++j) bk[j] += av * gi[j];
          }
        }
      }
    };
  return self;
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  const Tensor& va = val(a);
  const Tensor& vb = val(b);
  if (va.cols != vb.cols)
    throw ShapeError("matmul_nt: inner dimension mismatch " + va.shape_str() + " * " +
                     vb.shape_str() + "^T");
  Tensor out(va.rows, vb.rows);
  for (int i = 0; i < va.rows; ++i) {
    const double* ai = &va.data[static_cast<size_t>(i) * va.cols];
    for (int j = 0; j < vb.rows; ++j) {
      const double* bj = &vb.data[static_cast<size_t>(j) * vb.cols];
      double s = 0.0;
      for (int k = 0; k < va.cols; ++k) s += ai[k] * bj[k];
      out.at(i, j) = s;
    }
  }
  bool ng = needs_grad(a) || needs_grad(b);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a, b](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& va2 = t.val(a);
      const Tensor& vb2 = t.val(b);
      if (t.needs_grad(a)) {  // dA += G * B
        Tensor& ga = t.grad(a);
        for (int i = 0; i < ga.rows; ++i) {
          const double* gi = &g.data[static_cast<size_t>(i) * g.cols];
          double* ai = &ga.data[static_cast<size_t>(i) * ga.cols];
          for (int j = 0; j < g.cols; ++j) {
            double gv = gi[j];
            if (gv == 0.0) continue;
            const double* bj = &vb2.data[static_cast<size_t>(j) * vb2.cols];
            for (int k = 0; k < ga.cols; ++k) ai[k] += gv * bj[k];
          }
        }
      }
      if (t.needs_grad(b)) {  // dB += G^T * A
        Tensor& gb = t.grad(b);
        for (int i = 0; i < va2.rows; ++i) {
          const double* gi = &g.data[static_cast<size_t>(i) * g.cols];
          const double* ai = &va2.data[static_cast<size_t>(i) * va2.cols];
          for (int j = 0; j < g.cols; ++j) {
            double gv = gi[j];
            if (gv == 0.0) continue;
            double* bj = &gb.data[static_cast<size_t>(j) * gb.cols];
            for (int k = 0; k < va2.cols; ++k) bj[k] += gv * ai[k];
          }
        }
      }
    };
  return self;
}

Tape::Id Tape::layer_norm(Id a, Id gamma, Id beta) {
  const Tensor& va = val(a);
  const Tensor& vg = val(gamma);
  const Tensor& vb = val(beta);
  if (vg.rows != 1 || vg.cols != va.cols || vb.rows != 1 || vb.cols != va.cols)
    throw ShapeError("layer_norm: gamma/beta must be 1 x cols");
  int C = va.cols;
  Tensor out(va.rows, C);
  Tensor xhat(va.rows, C);
  std::vector<double> inv_sigma(va.rows);
  for (int i = 0; i < va.rows; ++i) {
    double mu = 0.0;
    for (int j = 0; j < C; ++j) mu += va.at(i, j);
    mu /= C;
    double var = 0.0;
    for (int j = 0; j < C; ++j) {
      double d = va.at(i, j) - mu;
      var += d * d;
    }
    var /= C;
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv_sigma[i] = is;
    for (int j = 0; j < C; ++j) {
      double h = (va.at(i, j) - mu) * is;
      xhat.at(i, j) = h;
      out.at(i, j) = h * vg.at(0, j) + vb.at(0, j);
    }
  }
  bool ng = needs_grad(a) || needs_grad(gamma) || needs_grad(beta);
  Id self = push(std::move(out), ng, nullptr);
  if (ng) {
    auto cache = std::make_shared<std::pair<Tensor, std::vector<double>>>(std::move(xhat),
                                                                          std::move(inv_sigma));
    nodes_[self].backprop = [self, a, gamma, beta, cache](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& vg2 = t.val(gamma);
      const Tensor& xh = cache->first;
      const std::vector<double>& is = cache->second;
      int C = g.cols;
      if (t.needs_grad(gamma) || t.needs_grad(beta)) {
        for (int i = 0; i < g.rows; ++i)
          for (int j = 0; j < C; ++j) {
            if (t.needs_grad(gamma)) t.grad(gamma).at(0, j) += g.at(i, j) * xh.at(i, j);
            if (t.needs_grad(beta)) t.grad(beta).at(0, j) += g.at(i, j);
          }
      }
      if (t.needs_grad(a)) {
        Tensor& ga = t.grad(a);
        for (int i = 0; i < g.rows; ++i) {
          double m1 = 0.0, m2 = 0.0;
          for (int j = 0; j < C; ++j) {
            double dxh = g.at(i, j) * vg2.at(0, j);
            m1 += dxh;
            m2 += dxh * xh.at(i, j);
          }
          m1 /= C;
          m2 /= C;
          for (int j = 0; j < C; ++j) {
            double dxh = g.at(i, j) * vg2.at(0, j);
            ga.at(i, j) += is[i] * (dxh - m1 - xh.at(i, j) * m2);
          }
        }
      }
    };
  }
  return self;
}

Tape::Id Tape::softmax_rows(Id a) {
  const Tensor& va = val(a);
  Tensor out(va.rows, va.cols);
  for (int i = 0; i < va.rows; ++i) {
    double mx = va.at(i, 0);
    for (int j = 1; j < va.cols; ++j) mx = std::max(mx, va.at(i, j));
    double z = 0.0;
    for (int j = 0; j < va.cols; ++j) {
      double e = std::exp(va.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < va.cols; ++j) out.at(i, j) /= z;
  }
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      Tensor& ga = t.grad(a);
      for (int i = 0; i < g.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols; ++j) s += g.at(i, j) * y.at(i, j);
        for (int j = 0; j < g.cols; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - s);
      }
    };
  return self;
}

Tape::Id Tape::log_softmax_rows(Id a) {
  const Tensor& va = val(a);
  Tensor out(va.rows, va.cols);
  for (int i = 0; i < va.rows; ++i) {
    double mx = va.at(i, 0);
    for (int j = 1; j < va.cols; ++j) mx = std::max(mx, va.at(i, j));
    double z = 0.0;
    for (int j = 0; j < va.cols; ++j) z += std::exp(va.at(i, j) - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < va.cols; ++j) out.at(i, j) = va.at(i, j) - lz;
  }
  bool ng = needs_grad(a);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, a](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      Tensor& ga = t.grad(a);
      for (int i = 0; i < g.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < g.cols; ++j) s += g.at(i, j);
        for (int j = 0; j < g.cols; ++j)
          ga.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * s;
      }
    };
  return self;
}

Tape::Id Tape::group_weighted_sum(Id x, Id w, int n, int p) {
  const Tensor& vx = val(x);
  const Tensor& vw = val(w);
  if (vx.rows != n * p) throw ShapeError("group_weighted_sum: rows != n*p");
  if (vw.rows != 1 || vw.cols != p) throw ShapeError("group_weighted_sum: w must be 1 x p");
  int C = vx.cols;
  Tensor out(n, C);
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < p; ++q) {
      double wq = vw.at(0, q);
      for (int j = 0; j < C; ++j) out.at(i, j) += wq * vx.at(i * p + q, j);
    }
  bool ng = needs_grad(x) || needs_grad(w);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, x, w, n, p](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& vx2 = t.val(x);
      const Tensor& vw2 = t.val(w);
      int C = g.cols;
      if (t.needs_grad(x)) {
        Tensor& gx = t.grad(x);
        for (int i = 0; i < n; ++i)
          for (int q = 0; q < p; ++q) {
            double wq = vw2.at(0, q);
            for (int j = 0; j < C; ++j) gx.at(i * p + q, j) += wq * g.at(i, j);
          }
      }
      if (t.needs_grad(w)) {
        Tensor& gw = t.grad(w);
        for (int q = 0; q < p; ++q) {
          double s = 0.0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < C; ++j) s += g.at(i, j) * vx2.at(i * p + q, j);
          gw.at(0, q) += s;
        }
      }
    };
  return self;
}

Tape::Id Tape::group_mean_rows(Id x, int n, int p) {
  const Tensor& vx = val(x);
  if (vx.rows != n * p) throw ShapeError("group_mean_rows: rows != n*p");
  int C = vx.cols;
  Tensor out(n, C);
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < p; ++q)
      for (int j = 0; j < C; ++j) out.at(i, j) += vx.at(i * p + q, j) / p;
  bool ng = needs_grad(x);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, x, n, p](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& gx = t.grad(x);
      for (int i = 0; i < n; ++i)
        for (int q = 0; q < p; ++q)
          for (int j = 0; j < g.cols; ++j) gx.at(i * p + q, j) += g.at(i, j) / p;
    };
  return self;
}

Tape::Id Tape::heads_to_pairs(Id w, int heads) {
  const Tensor& vw = val(w);
  if (vw.rows % heads != 0) throw ShapeError("heads_to_pairs: rows not divisible by heads");
  int n = vw.rows / heads;
  int m = vw.cols;
  Tensor out(n * m, heads);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) out.at(i * m + j, h) = vw.at(h * n + i, j);
  bool ng = needs_grad(w);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, w, heads, n, m](Tape& t) {
      const Tensor& g = t.grad(self);
      Tensor& gw = t.grad(w);
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gw.at(h * n + i, j) += g.at(i * m + j, h);
    };
  return self;
}

namespace {
// Shared logits/softmax kernel for the attention ops.
struct RowSoftmax {
  std::vector<int> keys;        // allowed key indices
  std::vector<double> probs;    // matching probabilities
};

void softmax_over_keys(const double* qrow, const Tensor& kh, int h, int d, double sc,
                       const Tensor* bias, int qi, const std::vector<int>& keys,
                       std::vector<double>& probs) {
  size_t nk = keys.size();
  probs.resize(nk);
  double mx = -1e300;
  for (size_t a = 0; a < nk; ++a) {
    int j = keys[a];
    const double* krow = &kh.data[static_cast<size_t>(j) * kh.cols + h * d];
    double s = 0.0;
    for (int t = 0; t < d; ++t) s += qrow[t] * krow[t];
    s *= sc;
    if (bias) s += bias->at(qi, j);
    probs[a] = s;
    mx = std::max(mx, s);
  }
  double z = 0.0;
  for (size_t a = 0; a < nk; ++a) {
    double e = std::exp(probs[a] - mx);
    probs[a] = e;
    z += e;
  }
  for (size_t a = 0; a < nk; ++a) probs[a] /= z;
}

std::vector<int> all_keys(int nk) {
  std::vector<int> v(nk);
  for (int i = 0; i < nk; ++i) v[i] = i;
  return v;
}
}  // namespace

Tape::Id Tape::attention_probs(Id qh, Id kh, Id bias, const BlockMask* block, int heads) {
  const Tensor& vq = val(qh);
  const Tensor& vk = val(kh);
  if (vq.cols != vk.cols) throw ShapeError("attention_probs: channel mismatch");
  if (vq.cols % heads != 0) throw ShapeError("attention_probs: channels not divisible by heads");
  int nq = vq.rows, nk = vk.rows, C = vq.cols, d = C / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor* bptr = bias >= 0 ? &val(bias) : nullptr;
  if (bptr) {
    if (bptr->rows != nq || bptr->cols != nk) throw ShapeError("attention_probs: bias shape");
    for (double x : bptr->data)
      if (!std::isfinite(x)) throw InputError("attention_probs: non-finite bias");
  }
  auto blk = std::make_shared<BlockMask>(block ? *block : BlockMask::all_allowed(nq, nk));
  Tensor out(heads * nq, nk);
  std::vector<int> fullkeys = all_keys(nk);
  std::vector<double> probs;
  for (int i = 0; i < nq; ++i) {
    const std::vector<int>& keys = blk->all ? fullkeys : blk->allowed[i];
    if (keys.empty())
      throw ContractError("attention_probs: fully blocked query row " + std::to_string(i));
    for (int h = 0; h < heads; ++h) {
      const double* qrow = &vq.data[static_cast<size_t>(i) * C + h * d];
      softmax_over_keys(qrow, vk, h, d, sc, bptr, i, keys, probs);
      for (size_t a = 0; a < keys.size(); ++a) out.at(h * nq + i, keys[a]) = probs[a];
    }
  }
  bool ng = needs_grad(qh) || needs_grad(kh) || (bias >= 0 && needs_grad(bias));
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, qh, kh, bias, blk, heads](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& y = t.val(self);
      const Tensor& vq2 = t.val(qh);
      const Tensor& vk2 = t.val(kh);
      int C = vq2.cols, d = C / heads, nq = vq2.rows, nk = vk2.rows;
      double sc = 1.0 / std::sqrt(static_cast<double>(d));
      std::vector<int> fullkeys = all_keys(nk);
      for (int i = 0; i < nq; ++i) {
        const std::vector<int>& keys = blk->all ? fullkeys : blk->allowed[i];
        for (int h = 0; h < heads; ++h) {
          int r = h * nq + i;
          double s = 0.0;
          for (int j : keys) s += g.at(r, j) * y.at(r, j);
          for (int j : keys) {
            double dl = y.at(r, j) * (g.at(r, j) - s);  // d logits
            if (dl == 0.0) continue;
            if (t.needs_grad(qh)) {
              double* gq = &t.grad(qh).data[static_cast<size_t>(i) * C + h * d];
              const double* kr = &vk2.data[static_cast<size_t>(j) * C + h * d];
              for (int u = 0; u < d; ++u) gq[u] += sc * dl * kr[u];
            }
            if (t.needs_grad(kh)) {
              double* gk = &t.grad(kh).data[static_cast<size_t>(j) * C + h * d];
              const double* qr = &vq2.data[static_cast<size_t>(i) * C + h * d];
              for (int u = 0; u < d; ++u) gk[u] += sc * dl * qr[u];
            }
            if (bias >= 0 && t.needs_grad(bias)) t.grad(bias).at(i, j) += dl;
          }
        }
      }
    };
  return self;
}

Tape::Id Tape::attention_apply(Id probs, Id vh, int heads) {
  const Tensor& vp = val(probs);
  const Tensor& vv = val(vh);
  if (vp.rows % heads != 0) throw ShapeError("attention_apply: probs rows not divisible by heads");
  int nq = vp.rows / heads, nk = vp.cols, C = vv.cols, d = C / heads;
  if (vv.rows != nk) throw ShapeError("attention_apply: value rows mismatch");
  if (C % heads != 0) throw ShapeError("attention_apply: channels not divisible by heads");
  Tensor out(nq, C);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < nq; ++i) {
      double* orow = &out.data[static_cast<size_t>(i) * C + h * d];
      for (int j = 0; j < nk; ++j) {
        double p = vp.at(h * nq + i, j);
        if (p == 0.0) continue;
        const double* vrow = &vv.data[static_cast<size_t>(j) * C + h * d];
        for (int u = 0; u < d; ++u) orow[u] += p * vrow[u];
      }
    }
  bool ng = needs_grad(probs) || needs_grad(vh);
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, probs, vh, heads](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& vp2 = t.val(probs);
      const Tensor& vv2 = t.val(vh);
      int nq = vp2.rows / heads, nk = vp2.cols, C = vv2.cols, d = C / heads;
      for (int h = 0; h < heads; ++h)
        for (int i = 0; i < nq; ++i) {
          const double* grow = &g.data[static_cast<size_t>(i) * C + h * d];
          for (int j = 0; j < nk; ++j) {
            const double* vrow = &vv2.data[static_cast<size_t>(j) * C + h * d];
            if (t.needs_grad(probs)) {
              double s = 0.0;
              for (int u = 0; u < d; ++u) s += grow[u] * vrow[u];
              t.grad(probs).at(h * nq + i, j) += s;
            }
            if (t.needs_grad(vh)) {
              double p = vp2.at(h * nq + i, j);
              if (p != 0.0) {
                double* gv = &t.grad(vh).data[static_cast<size_t>(j) * C + h * d];
                for (int u = 0; u < d; ++u) gv[u] += p * grow[u];
              }
            }
          }
        }
    };
  return self;
}

Tape::Id Tape::attention_fused(Id qh, Id kh, Id vh, Id bias, const BlockMask* block, int heads) {
  const Tensor& vq = val(qh);
  const Tensor& vk = val(kh);
  const Tensor& vv = val(vh);
  if (vq.cols != vk.cols || vk.rows != vv.rows || vq.cols != vv.cols)
    throw ShapeError("attention_fused: shape mismatch");
  if (vq.cols % heads != 0) throw ShapeError("attention_fused: channels not divisible by heads");
  int nq = vq.rows, nk = vk.rows, C = vq.cols, d = C / heads;
  double sc = 1.0 / std::sqrt(static_cast<double>(d));
  const Tensor* bptr = bias >= 0 ? &val(bias) : nullptr;
  auto blk = std::make_shared<BlockMask>(block ? *block : BlockMask::all_allowed(nq, nk));
  // probs stored sparsely per (head, query): aligned with the row's key list
  auto cache = std::make_shared<std::vector<std::vector<double>>>(
      static_cast<size_t>(heads) * nq);
  std::vector<int> fullkeys = all_keys(nk);
  Tensor out(nq, C);
  for (int i = 0; i < nq; ++i) {
    const std::vector<int>& keys = blk->all ? fullkeys : blk->allowed[i];
    if (keys.empty())
      throw ContractError("attention_fused: fully blocked query row " + std::to_string(i));
    for (int h = 0; h < heads; ++h) {
      std::vector<double>& probs = (*cache)[static_cast<size_t>(h) * nq + i];
      const double* qrow = &vq.data[static_cast<size_t>(i) * C + h * d];
      softmax_over_keys(qrow, vk, h, d, sc, bptr, i, keys, probs);
      double* orow = &out.data[static_cast<size_t>(i) * C + h * d];
      for (size_t a = 0; a < keys.size(); ++a) {
        const double* vrow = &vv.data[static_cast<size_t>(keys[a]) * C + h * d];
        for (int u = 0; u < d; ++u) orow[u] += probs[a] * vrow[u];
      }
    }
  }
  bool ng = needs_grad(qh) || needs_grad(kh) || needs_grad(vh) ||
            (bias >= 0 && needs_grad(bias));
  Id self = push(std::move(out), ng, nullptr);
  if (ng)
    nodes_[self].backprop = [self, qh, kh, vh, bias, blk, cache, heads](Tape& t) {
      const Tensor& g = t.grad(self);
      const Tensor& vq2 = t.val(qh);
      const Tensor& vk2 = t.val(kh);
      const Tensor& vv2 = t.val(vh);
      int nq = vq2.rows, nk = vk2.rows, C = vq2.cols, d = C / heads;
      double sc = 1.0 / std::sqrt(static_cast<double>(d));
      std::vector<int> fullkeys = all_keys(nk);
      std::vector<double> dp;
      for (int i = 0; i < nq; ++i) {
        const std::vector<int>& keys = blk->all ? fullkeys : blk->allowed[i];
        for (int h = 0; h < heads; ++h) {
          const std::vector<double>& probs = (*cache)[static_cast<size_t>(h) * nq + i];
          const double* grow = &g.data[static_cast<size_t>(i) * C + h * d];
          size_t m = keys.size();
          dp.resize(m);
          // dP and dV
          for (size_t a = 0; a < m; ++a) {
            int j = keys[a];
            const double* vrow = &vv2.data[static_cast<size_t>(j) * C + h * d];
            double s = 0.0;
            for (int u = 0; u < d; ++u) s += grow[u] * vrow[u];
            dp[a] = s;
            if (t.needs_grad(vh)) {
              double p = probs[a];
              if (p != 0.0) {
                double* gv = &t.grad(vh).data[static_cast<size_t>(j) * C + h * d];
                for (int u = 0; u < d; ++u) gv[u] += p * grow[u];
              }
            }
          }
          // softmax backward -> d logits, then dq/dk/dbias
          double s = 0.0;
          for (size_t a = 0; a < m; ++a) s += dp[a] * probs[a];
          for (size_t a = 0; a < m; ++a) {
            double dl = probs[a] * (dp[a] - s);
            if (dl == 0.0) continue;
            int j = keys[a];
            if (t.needs_grad(qh)) {
              double* gq = &t.grad(qh).data[static_cast<size_t>(i) * C + h * d];
              const double* kr = &vk2.data[static_cast<size_t>(j) * C + h * d];
              for (int u = 0; u < d; ++u) gq[u] += sc * dl * kr[u];
            }
            if (t.needs_grad(kh)) {
              double* gk = &t.grad(kh).data[static_cast<size_t>(j) * C + h * d];
              const double* qr = &vq2.data[static_cast<size_t>(i) * C + h * d];
              for (int u = 0; u < d; ++u) gk[u] += sc * dl * qr[u];
            }
            if (bias >= 0 && t.needs_grad(bias)) t.grad(bias).at(i, j) += dl;
          }
        }
      }
    };
  return self;
}

void Tape::backward(Id loss) {
  if (backward_done_) throw StateError("backward: tape already back-propagated");
  if (val(loss).numel() != 1) throw ShapeError("backward: loss must be scalar");
  if (!needs_grad(loss)) throw StateError("backward: loss does not depend on any parameter");
  for (auto& n : nodes_) {
    if (n.needs_grad) n.grad = Tensor(n.value.rows, n.value.cols);
  }
  nodes_[loss].grad.data[0] = 1.0;
  for (Id i = loss; i >= 0; --i) {
    if (nodes_[i].needs_grad && nodes_[i].backprop) nodes_[i].backprop(*this);
  }
  backward_done_ = true;
}

}  // namespace lanetopo

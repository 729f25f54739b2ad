#include "lanetopo/nn.hpp"

#include <algorithm>
#include <cmath>

namespace lanetopo {

Tape::Id Graph::param(const std::string& name, int rows, int cols, Init init) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Tensor& v = store_.ensure(name, rows, cols, init, init_rng_);
  Tape::Id id = tape_.leaf(v);
  bound_[name] = id;
  return id;
}

Tape::Id Graph::param(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  if (!store_.has(name)) throw StateError("parameter not registered: " + name);
  Tape::Id id = tape_.leaf(store_.value(name));
  bound_[name] = id;
  return id;
}

Tape::Id Graph::linear(Tape::Id x, const std::string& name, int out_dim) {
  int in_dim = tape_.val(x).cols;
  Tape::Id w = param(name + ".w", in_dim, out_dim, Init::Xavier);
  Tape::Id b = param(name + ".b", 1, out_dim, Init::Zeros);
  return tape_.add_row(tape_.matmul(x, w), b);
}

Tape::Id Graph::layer_norm(Tape::Id x, const std::string& name) {
  int c = tape_.val(x).cols;
  Tape::Id g = param(name + ".g", 1, c, Init::Ones);
  Tape::Id b = param(name + ".b", 1, c, Init::Zeros);
  return tape_.layer_norm(x, g, b);
}

Tape::Id Graph::mlp3(Tape::Id x, const std::string& prefix, int hidden, int out_dim) {
  Tape::Id h1 = tape_.relu(layer_norm(linear(x, prefix + ".l1", hidden), prefix + ".n1"));
  Tape::Id h2 = tape_.relu(layer_norm(linear(h1, prefix + ".l2", hidden), prefix + ".n2"));
  return linear(h2, prefix + ".l3", out_dim);
}

Tape::Id Graph::ffn(Tape::Id x, const std::string& prefix, int hidden) {
  int c = tape_.val(x).cols;
  Tape::Id h = tape_.relu(linear(x, prefix + ".f1", hidden));
  Tape::Id y = linear(h, prefix + ".f2", c);
  return layer_norm(tape_.add(x, y), prefix + ".fn");
}

AttentionOutput Graph::masked_attention(Tape::Id q, Tape::Id k, Tape::Id v, Tape::Id bias,
                                        const BlockMask* block, int heads,
                                        const std::string& prefix, bool fused) {
  int c = tape_.val(q).cols;
  if (block && !block->all) {
    for (size_t r = 0; r < block->allowed.size(); ++r)
      if (block->allowed[r].empty())
        throw ContractError(prefix + ": fully blocked query row " + std::to_string(r));
  }
  Tape::Id qh = linear(q, prefix + ".q", c);
  Tape::Id kh = linear(k, prefix + ".k", c);
  Tape::Id vh = linear(v, prefix + ".v", c);
  AttentionOutput out;
  if (fused) {
    Tape::Id y = tape_.attention_fused(qh, kh, vh, bias, block, heads);
    out.values = linear(y, prefix + ".o", c);
  } else {
    out.weights = tape_.attention_probs(qh, kh, bias, block, heads);
    Tape::Id y = tape_.attention_apply(out.weights, vh, heads);
    out.values = linear(y, prefix + ".o", c);
  }
  return out;
}

void Graph::backward_to_store(Tape::Id loss) {
  tape_.backward(loss);
  // accumulate in store registration order so reductions are deterministic
  for (auto& e : store_.entries()) {
    auto it = bound_.find(e.name);
    if (it == bound_.end()) continue;
    const Tensor& tg = tape_.grad(it->second);
    for (int i = 0; i < e.grad.numel(); ++i) e.grad.data[i] += tg.data[i];
  }
}

GradCheckReport grad_check(ParamStore& store, const std::function<double(bool)>& fn, double eps,
                           double tol, int samples_per_param, uint64_t seed) {
  GradCheckReport report;
  fn(true);
  // snapshot analytic gradients before the probing evaluations overwrite them
  std::vector<Tensor> analytic;
  analytic.reserve(store.entries().size());
  for (const auto& e : store.entries()) analytic.push_back(e.grad);

  Rng rng(seed);
  for (size_t pi = 0; pi < store.entries().size(); ++pi) {
    auto& e = store.entries()[pi];
    int n = e.value.numel();
    std::vector<int> picks;
    if (n <= samples_per_param) {
      picks.resize(n);
      for (int i = 0; i < n; ++i) picks[i] = i;
    } else {
      for (int i = 0; i < samples_per_param; ++i) picks.push_back(rng.uniform_int(0, n - 1));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    GradCheckReport::Item item;
    item.name = e.name;
    for (int idx : picks) {
      double orig = e.value.data[idx];
      e.value.data[idx] = orig + eps;
      double fp = fn(false);
      e.value.data[idx] = orig - eps;
      double fm = fn(false);
      e.value.data[idx] = orig;
      double fd = (fp - fm) / (2.0 * eps);
      double an = analytic[pi].data[idx];
      double rel = std::abs(fd - an) / std::max({1e-2, std::abs(fd), std::abs(an)});
      item.max_rel_err = std::max(item.max_rel_err, rel);
    }
    report.worst = std::max(report.worst, item.max_rel_err);
    report.items.push_back(std::move(item));
  }
  report.pass = report.worst <= tol;
  return report;
}

}  // namespace lanetopo

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "lanetopo/param_store.hpp"
#include "lanetopo/tape.hpp"

namespace lanetopo {

// Values plus the per-head attention probability matrix ((heads*nq) x nk).
// weights == -1 when the fused kernel was used and probabilities were not
// materialized.
struct AttentionOutput {
  Tape::Id values = -1;
  Tape::Id weights = -1;
};

// One forward trace: a tape plus the binding of store parameters to leaves.
// Layers create their parameters on first use and reuse them afterwards.
class Graph {
 public:
  Graph(ParamStore& store, uint64_t init_seed = 42)
      : store_(store), init_rng_(init_seed) {}

  Tape& tape() { return tape_; }
  ParamStore& store() { return store_; }

  Tape::Id param(const std::string& name, int rows, int cols, Init init);
  Tape::Id param(const std::string& name);  // must already exist

  // y = x W + b with W: in x out under <name>.w / <name>.b
  Tape::Id linear(Tape::Id x, const std::string& name, int out_dim);
  // LayerNorm with learned gain/bias under <name>.g / <name>.b
  Tape::Id layer_norm(Tape::Id x, const std::string& name);
  // Three linear layers, LayerNorm+ReLU after the first two.
  Tape::Id mlp3(Tape::Id x, const std::string& prefix, int hidden, int out_dim);
  // Residual feed-forward block: LN(x + W2 relu(W1 x))
  Tape::Id ffn(Tape::Id x, const std::string& prefix, int hidden);

  // Multi-head attention with projections under <prefix>.{q,k,v,o}.
  // bias: additive nq x nk logit bias node (-1 for none). block: allowed keys
  // per query (nullptr for all). fused avoids materializing probabilities.
  AttentionOutput masked_attention(Tape::Id q, Tape::Id k, Tape::Id v, Tape::Id bias,
                                   const BlockMask* block, int heads,
                                   const std::string& prefix, bool fused = false);

  // Runs tape backward and accumulates leaf gradients into the store.
  void backward_to_store(Tape::Id loss);

 private:
  ParamStore& store_;
  Rng init_rng_;
  Tape tape_;
  std::unordered_map<std::string, Tape::Id> bound_;
};

// Finite-difference gradient verification.
struct GradCheckReport {
  struct Item {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<Item> items;
  double worst = 0.0;
  bool pass = false;
};

// fn(true) must zero store grads, run forward+backward and return the loss;
// fn(false) returns the loss only. Central differences are evaluated on up to
// samples_per_param deterministic element picks per parameter.
GradCheckReport grad_check(ParamStore& store, const std::function<double(bool)>& fn, double eps,
                           double tol, int samples_per_param = 8, uint64_t seed = 1234);

}  // namespace lanetopo

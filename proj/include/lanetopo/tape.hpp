#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lanetopo/block_mask.hpp"
#include "lanetopo/tensor.hpp"

namespace lanetopo {

// Reverse-mode autodiff over dense 2-D tensors. Each operation appends a node
// recording its value and a backward closure; backward() walks the tape in
// reverse, which also fixes the gradient accumulation order deterministically.
class Tape {
 public:
  using Id = int;

  Id leaf(Tensor value);              // differentiable input (parameter)
  Id constant(Tensor value);          // non-differentiable input

  const Tensor& val(Id id) const { return nodes_[id].value; }
  Tensor& grad(Id id) { return nodes_[id].grad; }
  bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // --- elementwise / shape ---
  Id add(Id a, Id b);
  Id add_n(const std::vector<Id>& ids);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  Id div(Id a, Id b);
  Id add_row(Id a, Id bias);          // bias 1 x cols, broadcast over rows
  Id scale(Id a, double s);
  Id add_scalar(Id a, double s);
  Id mul_const(Id a, const Tensor& c);
  Id relu(Id a);
  Id sigmoid(Id a);
  Id log_(Id a);
  Id exp_(Id a);
  Id powc(Id a, double e);
  Id clamp(Id a, double lo, double hi);
  Id transpose(Id a);
  Id reshape(Id a, int r, int c);
  Id concat_rows(const std::vector<Id>& ids);
  Id slice_rows(Id a, int r0, int r1);              // rows [r0, r1)
  Id select_rows(Id a, const std::vector<int>& idx);
  Id sum_all(Id a);                   // -> 1x1
  Id mean_all(Id a);                  // -> 1x1
  Id col_sums(Id a);                  // -> 1 x cols

  // --- linear algebra ---
  Id matmul(Id a, Id b);              // (m x k)(k x n)
  Id matmul_nt(Id a, Id b);           // A * B^T

  // --- normalization / softmax ---
  Id layer_norm(Id a, Id gamma, Id beta);  // per row over cols, eps 1e-5
  Id softmax_rows(Id a);
  Id log_softmax_rows(Id a);

  // --- grouped reductions over N instances of P rows each ---
  Id group_weighted_sum(Id x, Id w, int n, int p);  // x: NP x C, w: 1 x P -> N x C
  Id group_mean_rows(Id x, int n, int p);           // NP x M -> N x M

  // (H*n) x m head-stacked matrix -> (n*m) x H per-pair head vectors
  Id heads_to_pairs(Id w, int heads);

  // --- attention primitives ---
  // qh: nq x C, kh: nk x C already projected; logits scaled by 1/sqrt(C/heads),
  // additive bias (nq x nk, broadcast over heads, -1 for none), blocked keys
  // never receive probability mass. Returns (heads*nq) x nk probabilities.
  Id attention_probs(Id qh, Id kh, Id bias, const BlockMask* block, int heads);
  // probs: (heads*nq) x nk, vh: nk x C -> nq x C (head-concatenated)
  Id attention_apply(Id probs, Id vh, int heads);
  // Fused probs+apply that never materializes dense probabilities; intended
  // for large key sets (BEV grids) where the block mask is sparse.
  Id attention_fused(Id qh, Id kh, Id vh, Id bias, const BlockMask* block, int heads);

  // Seeds d(loss)/d(loss)=1 and propagates to every differentiable node.
  void backward(Id loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void(Tape&)> backprop;
  };

  Id push(Tensor value, bool needs_grad, std::function<void(Tape&)> backprop);
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace lanetopo

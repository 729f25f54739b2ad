#pragma once

#include <vector>

#include "lanetopo/block_mask.hpp"
#include "lanetopo/nn.hpp"
#include "lanetopo/scene.hpp"

namespace lanetopo {

// Fixed P2P constrained relation: point (a) may attend point (b) iff both
// belong to the same instance (floor(a/P) == floor(b/P)).
BlockMask build_p2p_mask(int n_instances, int pts_per_instance);

// Endpoint/startpoint geometric prior over predicted polylines.
struct TopoPrior {
  Tensor t_i2i;  // N x N logits
  Tensor t_p2i;  // NP x N logits (instance rows broadcast over points)
};
TopoPrior geometric_prior(const std::vector<std::vector<Point2>>& pred_lines,
                          int pts_per_instance, double sigma);

// Relation encoder: per-entry sigmoid(logit) -> 3-layer MLP (1->h->h->1),
// applied elementwise; output shape equals input shape. Separate parameter
// prefixes realize the independent I2I and P2I encoders.
Tape::Id relation_encoder(Graph& g, Tape::Id topo_logits, const std::string& prefix, int hidden);

// Per-instance BEV attention gates from DDT logits ((N*HW) x 6 values):
// a cell is allowed iff its argmax class <= k_attend (ties -> lowest class).
// An instance whose allowed set would be empty falls back to all-allowed.
BlockMask ddt_to_attention_mask(const Tensor& ddt_logits, int n_instances, int n_cells,
                                int k_attend);

}  // namespace lanetopo

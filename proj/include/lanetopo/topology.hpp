#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lanetopo/nn.hpp"
#include "lanetopo/scene.hpp"

namespace lanetopo {

// Topology logits and the attention weights exchanged across the cyclic loop.
// Ids are tape nodes; -1 marks an absent branch (e.g. no traffic elements).
struct TopoState {
  Tape::Id t_i2i = -1;  // N x N
  Tape::Id t_p2i = -1;  // NP x N
  Tape::Id t_i2t = -1;  // N x M
  Tape::Id t_p2t = -1;  // NP x M
  Tape::Id w_i2i = -1;  // (heads*N) x N
  Tape::Id w_p2i = -1;  // (heads*NP) x N
  Tape::Id w_i2t = -1;  // (heads*N) x M
  Tape::Id w_p2t = -1;  // (heads*NP) x M
  Tape::Id fused_l2l = -1;  // N x N
  Tape::Id fused_l2t = -1;  // N x M
};

// Synthetic traffic-element tokens standing in for an image-based decoder.
struct TrafficTokens {
  Tape::Id q_te = -1;       // M x C embeddings
  Tape::Id box_pred = -1;   // M x 4 decoded boxes in [0,1]
  Tape::Id cls_logits = -1; // M x K category logits
  int count = 0;
};

TrafficTokens te_encoder(Graph& g, const std::vector<TrafficElement>& elements,
                         uint64_t noise_seed, double noise_sigma, int channels, int hidden);

// Eq-style topology heads: similarity inner product of two MLP embeddings
// (scaled by 1/sqrt(d_sim)) plus an MLP over the per-pair head-wise
// attention-weight vector.
Tape::Id i2i_head(Graph& g, Tape::Id q_ins, Tape::Id w_i2i, int heads, int d_sim, int hidden,
                  const std::string& prefix);
Tape::Id p2i_head(Graph& g, Tape::Id q_pts, Tape::Id q_ins, Tape::Id w_p2i, int heads, int d_sim,
                  int hidden, const std::string& prefix);

// fused = alpha * t_i2i + (1-alpha) * mean over the point dimension of t_p2i
Tape::Id fuse(Graph& g, Tape::Id t_i2i, Tape::Id t_p2i, int n, int p, double alpha = 0.5);

struct L2TOutputs {
  Tape::Id t_i2t = -1;
  Tape::Id t_p2t = -1;
  Tape::Id w_i2t = -1;
  Tape::Id w_p2t = -1;
  Tape::Id fused = -1;
};

// Cross-attention from the hierarchical queries onto traffic tokens supplies
// W_i2t/W_p2t; the I2I/P2I head structure then runs with q_te as the key side.
// use_point_branch=false drops the point-level component (fused = t_i2t).
L2TOutputs l2t_heads(Graph& g, Tape::Id q_ins, Tape::Id q_pts, Tape::Id q_te, int heads,
                     int d_sim, int hidden, int pts_per_instance, const std::string& prefix,
                     bool use_point_branch = true, double fuse_alpha = 0.5);

}  // namespace lanetopo

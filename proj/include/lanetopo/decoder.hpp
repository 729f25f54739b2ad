#pragma once

#include <string>
#include <vector>

#include "lanetopo/block_mask.hpp"
#include "lanetopo/masks.hpp"
#include "lanetopo/nn.hpp"
#include "lanetopo/scene.hpp"
#include "lanetopo/topology.hpp"

namespace lanetopo {

enum class SegSupervision { Off, Binary, Dt, Ddt };
enum class TopoLossKind { Focal, Dice, Adaptive };

SegSupervision seg_supervision_from_string(const std::string& s);
TopoLossKind topo_loss_from_string(const std::string& s);
std::string to_string(SegSupervision s);
std::string to_string(TopoLossKind k);

struct ModelConfig {
  int n_queries = 12;       // N
  int pts_per_line = 11;    // P
  int channels = 32;        // C
  int layers = 3;
  int heads = 4;
  int d_sim = 16;
  int hidden = 32;
  int window_r = 2;         // point-aware cross-attention window radius, cells
  int k_attend = 3;         // DDT classes allowed through masked attention
  double sigma_prior = 2.0; // geometric prior bandwidth, meters
  double fuse_alpha = 0.5;
  double te_noise_sigma = 0.1;
  bool cyclic = true;
  bool p2i_branch = true;
  SegSupervision seg_supervision = SegSupervision::Ddt;
  TopoLossKind topo_loss = TopoLossKind::Adaptive;

  void validate() const;
};

struct LayerOutput {
  Tape::Id q_ins = -1;       // N x C refined instance queries
  Tape::Id q_pts = -1;       // NP x C refined point queries
  Tape::Id cls_logits = -1;  // N x 1
  Tape::Id points_xy = -1;   // NP x 2, meters
  Tape::Id points_z = -1;    // NP x 1 (supervised to 0)
  Tape::Id ddt_logits = -1;  // (N*HW) x 6
  Tape::Id ddt_scalar = -1;  // N x HW similarity field (dt supervision path)
  TopoState topo;
  Tensor ref_points;         // NP x 2 normalized refs used by this layer
  int ref_clamped = 0;       // diagnostics: reference points clamped into [0,1]
};

struct DecoderOutput {
  std::vector<LayerOutput> layers;
  TrafficTokens traffic;
};

// --- individual modules (layer building blocks) ---
struct InstanceAwareOut {
  Tape::Id q_ins = -1;
  Tape::Id w_i2i = -1;  // (heads*N) x N topo-aware self-attention weights
};
InstanceAwareOut instance_aware(Graph& g, Tape::Id q_ins, Tape::Id bev_feat,
                                const BlockMask& ddt_block, Tape::Id m_i2i, int heads, int hidden,
                                const std::string& prefix);

Tape::Id point_aware(Graph& g, Tape::Id q_pts, Tape::Id bev_feat, const BlockMask& p2p,
                     const BlockMask& window, int heads, int hidden, const std::string& prefix);

struct IntegratorOut {
  Tape::Id q_pts_hat = -1;  // NP x C
  Tape::Id q_ins_hat = -1;  // N x C aggregated via softmax(W_agg)
  Tape::Id w_p2i = -1;      // (heads*NP) x N integrator attention weights
};
IntegratorOut integrator(Graph& g, Tape::Id q_pts, Tape::Id q_ins, Tape::Id m_p2i, int heads,
                         int pts_per_instance, const std::string& prefix);

struct HeadsOut {
  Tape::Id cls = -1;
  Tape::Id points_xy = -1;
  Tape::Id points_z = -1;
  Tape::Id ddt_logits = -1;
  Tape::Id ddt_scalar = -1;
};
HeadsOut prediction_heads(Graph& g, Tape::Id q_ins, Tape::Id q_pts, Tape::Id bev_feat,
                          const BEVSpec& spec, const ModelConfig& cfg);

// Window block mask over BEV cells around each normalized reference point.
BlockMask reference_window_mask(const Tensor& ref_points, const BEVSpec& spec, int radius,
                                int* clamped_count = nullptr);

// Full stacked decoder with the cyclic detector/topology loop.
DecoderOutput decoder_forward(Graph& g, const Tensor& bev, const BEVSpec& spec,
                              const std::vector<TrafficElement>& traffic_elements,
                              uint64_t te_seed, const ModelConfig& cfg);

}  // namespace lanetopo

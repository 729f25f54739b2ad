#include "lanetopo/decoder.hpp"

#include <algorithm>
#include <cmath>

namespace lanetopo {

SegSupervision seg_supervision_from_string(const std::string& s) {
  if (s == "off") return SegSupervision::Off;
  if (s == "binary") return SegSupervision::Binary;
  if (s == "dt") return SegSupervision::Dt;
  if (s == "ddt") return SegSupervision::Ddt;
  throw ConfigError("unknown seg_supervision: " + s);
}
TopoLossKind topo_loss_from_string(const std::string& s) {
  if (s == "focal") return TopoLossKind::Focal;
  if (s == "dice") return TopoLossKind::Dice;
  if (s == "adaptive") return TopoLossKind::Adaptive;
  throw ConfigError("unknown topo_loss: " + s);
}
std::string to_string(SegSupervision s) {
  switch (s) {
    case SegSupervision::Off: return "off";
    case SegSupervision::Binary: return "binary";
    case SegSupervision::Dt: return "dt";
    default: return "ddt";
  }
}
std::string to_string(TopoLossKind k) {
  switch (k) {
    case TopoLossKind::Focal: return "focal";
    case TopoLossKind::Dice: return "dice";
    default: return "adaptive";
  }
}

void ModelConfig::validate() const {
  if (n_queries < 1 || pts_per_line < 2 || channels < 1 || layers < 1 || heads < 1 ||
      d_sim < 1 || hidden < 1)
    throw ConfigError("model config: sizes must be positive (pts_per_line >= 2)");
  if (channels % heads != 0) throw ConfigError("model config: channels must divide by heads");
  if (window_r < 0) throw ConfigError("model config: window_r must be >= 0");
  if (k_attend < 0 || k_attend > 5) throw ConfigError("model config: k_attend must be in 0..5");
  if (sigma_prior <= 0) throw ConfigError("model config: sigma_prior must be positive");
  if (fuse_alpha < 0 || fuse_alpha > 1) throw ConfigError("model config: fuse_alpha in [0,1]");
}

InstanceAwareOut instance_aware(Graph& g, Tape::Id q_ins, Tape::Id bev_feat,
                                const BlockMask& ddt_block, Tape::Id m_i2i, int heads, int hidden,
                                const std::string& prefix) {
  Tape& t = g.tape();
  int c = t.val(q_ins).cols;
  // masked cross-attention onto BEV cells gated by the DDT mask
  auto ca = g.masked_attention(q_ins, bev_feat, bev_feat, -1, &ddt_block, heads, prefix + ".ca",
                               /*fused=*/true);
  Tape::Id x = g.layer_norm(t.add(q_ins, ca.values), prefix + ".n1");
  x = g.ffn(x, prefix + ".ff1", 2 * c);
  // topo-aware self-attention with the I2I relation bias
  auto sa = g.masked_attention(x, x, x, m_i2i, nullptr, heads, prefix + ".sa");
  Tape::Id y = g.layer_norm(t.add(x, sa.values), prefix + ".n2");
  y = g.ffn(y, prefix + ".ff2", 2 * c);
  return {y, sa.weights};
}

Tape::Id point_aware(Graph& g, Tape::Id q_pts, Tape::Id bev_feat, const BlockMask& p2p,
                     const BlockMask& window, int heads, int hidden, const std::string& prefix) {
  Tape& t = g.tape();
  int c = t.val(q_pts).cols;
  // line-aware self-attention constrained to intra-instance interaction
  auto la = g.masked_attention(q_pts, q_pts, q_pts, -1, &p2p, heads, prefix + ".la");
  Tape::Id x = g.layer_norm(t.add(q_pts, la.values), prefix + ".n1");
  x = g.ffn(x, prefix + ".ff1", 2 * c);
  // local cross-attention onto the BEV window around each reference point
  auto ca = g.masked_attention(x, bev_feat, bev_feat, -1, &window, heads, prefix + ".ca",
                               /*fused=*/true);
  Tape::Id y = g.layer_norm(t.add(x, ca.values), prefix + ".n2");
  y = g.ffn(y, prefix + ".ff2", 2 * c);
  return y;
}

IntegratorOut integrator(Graph& g, Tape::Id q_pts, Tape::Id q_ins, Tape::Id m_p2i, int heads,
                         int pts_per_instance, const std::string& prefix) {
  Tape& t = g.tape();
  int np = t.val(q_pts).rows;
  int n = t.val(q_ins).rows;
  if (np != n * pts_per_instance) throw ShapeError("integrator: NP != N*P");
  auto att = g.masked_attention(q_pts, q_ins, q_ins, m_p2i, nullptr, heads, prefix + ".att");
  IntegratorOut out;
  out.q_pts_hat = att.values;
  out.w_p2i = att.weights;
  Tape::Id wagg = g.param(prefix + ".wagg", 1, pts_per_instance, Init::Zeros);
  Tape::Id wsoft = t.softmax_rows(wagg);
  out.q_ins_hat = t.group_weighted_sum(out.q_pts_hat, wsoft, n, pts_per_instance);
  return out;
}

HeadsOut prediction_heads(Graph& g, Tape::Id q_ins, Tape::Id q_pts, Tape::Id bev_feat,
                          const BEVSpec& spec, const ModelConfig& cfg) {
  Tape& t = g.tape();
  int n = t.val(q_ins).rows;
  int np = t.val(q_pts).rows;
  int hw = t.val(bev_feat).rows;
  HeadsOut out;
  out.cls = g.linear(q_ins, "heads.cls", 1);
  Tensor extent(np, 2);
  for (int r = 0; r < np; ++r) {
    extent.at(r, 0) = spec.extent_x();
    extent.at(r, 1) = spec.extent_y();
  }
  out.points_xy = t.mul_const(t.sigmoid(g.mlp3(q_pts, "heads.pts", cfg.hidden, 2)), extent);
  out.points_z = g.linear(q_pts, "heads.ptz", 1);
  // per-instance mask embedding dotted with BEV features, then 6-way linear
  Tape::Id emb = g.mlp3(q_ins, "heads.ddtemb", cfg.hidden, cfg.channels);
  out.ddt_scalar =
      t.scale(t.matmul_nt(emb, bev_feat), 1.0 / std::sqrt(static_cast<double>(cfg.channels)));
  Tape::Id flat = t.reshape(out.ddt_scalar, n * hw, 1);
  Tape::Id w = g.param("heads.ddtcls.w", 1, 6, Init::Xavier);
  Tape::Id b = g.param("heads.ddtcls.b", 1, 6, Init::Zeros);
  out.ddt_logits = t.add_row(t.matmul(flat, w), b);
  return out;
}

BlockMask reference_window_mask(const Tensor& ref_points, const BEVSpec& spec, int radius,
                                int* clamped_count) {
  int np = ref_points.rows;
  int clamped = 0;
  std::vector<std::vector<int>> rows(np);
  for (int r = 0; r < np; ++r) {
    double u = ref_points.at(r, 0);
    double v = ref_points.at(r, 1);
    if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) {
      ++clamped;
      u = std::clamp(u, 0.0, 1.0);
      v = std::clamp(v, 0.0, 1.0);
    }
    int col = std::clamp(static_cast<int>(std::floor(u * spec.width_cells)), 0,
                         spec.width_cells - 1);
    int row = std::clamp(static_cast<int>(std::floor(v * spec.height_cells)), 0,
                         spec.height_cells - 1);
    for (int dy = -radius; dy <= radius; ++dy) {
      int rr = row + dy;
      if (rr < 0 || rr >= spec.height_cells) continue;
      for (int dx = -radius; dx <= radius; ++dx) {
        int cc = col + dx;
        if (cc < 0 || cc >= spec.width_cells) continue;
        rows[r].push_back(rr * spec.width_cells + cc);
      }
    }
  }
  if (clamped_count) *clamped_count = clamped;
  return BlockMask::from_rows(spec.height_cells * spec.width_cells, std::move(rows));
}

namespace {
Tensor initial_reference_table(int n, int p, uint64_t seed) {
  Rng rng(seed);
  Tensor table(n * p, 2);
  auto logit = [](double x) { return std::log(x / (1.0 - x)); };
  for (int i = 0; i < n; ++i)
    for (int q = 0; q < p; ++q) {
      double u = std::clamp((i + 0.5) / n + 0.02 * rng.normal(), 0.02, 0.98);
      double v = std::clamp((q + 0.5) / p + 0.02 * rng.normal(), 0.02, 0.98);
      table.at(i * p + q, 0) = logit(u);
      table.at(i * p + q, 1) = logit(v);
    }
  return table;
}
}  // namespace

DecoderOutput decoder_forward(Graph& g, const Tensor& bev, const BEVSpec& spec,
                              const std::vector<TrafficElement>& traffic_elements,
                              uint64_t te_seed, const ModelConfig& cfg) {
  cfg.validate();
  spec.validate();
  Tape& t = g.tape();
  const int N = cfg.n_queries, P = cfg.pts_per_line, NP = N * P;
  const int HW = spec.height_cells * spec.width_cells;
  if (bev.rows != HW || bev.cols != spec.feature_channels)
    throw ShapeError("decoder_forward: BEV grid does not match spec");

  Tape::Id bev_raw = t.constant(bev);
  Tape::Id bev_feat = g.linear(bev_raw, "bev_proj", cfg.channels);

  Tape::Id q_ins = g.param("query.ins", N, cfg.channels, Init::Xavier);
  Tape::Id q_pts = g.param("query.pts", NP, cfg.channels, Init::Xavier);
  if (!g.store().has("query.ref")) g.store().set("query.ref", initial_reference_table(N, P, 77));
  Tape::Id ref_table = g.param("query.ref");

  // layer-0 normalized references from the learned table
  Tensor ref(NP, 2);
  {
    const Tensor& rt = t.val(ref_table);
    for (int i = 0; i < rt.numel(); ++i) ref.data[i] = 1.0 / (1.0 + std::exp(-rt.data[i]));
  }

  BlockMask p2p = build_p2p_mask(N, P);
  DecoderOutput out;
  out.traffic = te_encoder(g, traffic_elements, te_seed, cfg.te_noise_sigma, cfg.channels,
                           cfg.hidden);

  Tape::Id prev_t_i2i = -1, prev_t_p2i = -1;
  Tape::Id prev_ddt = -1;

  for (int l = 0; l < cfg.layers; ++l) {
    LayerOutput lo;
    lo.ref_points = ref;

    BlockMask ddt_blk = BlockMask::all_allowed(N, HW);
    if (l > 0 && cfg.seg_supervision == SegSupervision::Ddt && prev_ddt >= 0)
      ddt_blk = ddt_to_attention_mask(t.val(prev_ddt), N, HW, cfg.k_attend);

    Tape::Id m_i2i = -1, m_p2i = -1;
    if (l == 0) {
      // geometric prior on the layer-0 reference polylines (both cyclic modes)
      std::vector<std::vector<Point2>> polys(N);
      for (int i = 0; i < N; ++i)
        for (int q = 0; q < P; ++q)
          polys[i].push_back({ref.at(i * P + q, 0) * spec.extent_x(),
                              ref.at(i * P + q, 1) * spec.extent_y()});
      TopoPrior prior = geometric_prior(polys, P, cfg.sigma_prior);
      m_i2i = relation_encoder(g, t.constant(prior.t_i2i), "relenc.i2i", cfg.hidden);
      if (cfg.p2i_branch)
        m_p2i = relation_encoder(g, t.constant(prior.t_p2i), "relenc.p2i", cfg.hidden);
    } else if (cfg.cyclic) {
      m_i2i = relation_encoder(g, prev_t_i2i, "relenc.i2i", cfg.hidden);
      if (cfg.p2i_branch && prev_t_p2i >= 0)
        m_p2i = relation_encoder(g, prev_t_p2i, "relenc.p2i", cfg.hidden);
    }

    std::string lp = "layer" + std::to_string(l);
    auto ia = instance_aware(g, q_ins, bev_feat, ddt_blk, m_i2i, cfg.heads, cfg.hidden, lp + ".ia");
    BlockMask win = reference_window_mask(ref, spec, cfg.window_r, &lo.ref_clamped);
    Tape::Id qp = point_aware(g, q_pts, bev_feat, p2p, win, cfg.heads, cfg.hidden, lp + ".pa");
    auto integ = integrator(g, qp, ia.q_ins, m_p2i, cfg.heads, P, lp + ".integ");

    Tape::Id q_pts_new =
        g.ffn(g.layer_norm(t.add(qp, integ.q_pts_hat), lp + ".pn"), lp + ".pf", 2 * cfg.channels);
    Tape::Id q_ins_new = g.ffn(g.layer_norm(t.add(ia.q_ins, integ.q_ins_hat), lp + ".in"),
                               lp + ".if", 2 * cfg.channels);

    auto hd = prediction_heads(g, q_ins_new, q_pts_new, bev_feat, spec, cfg);
    lo.q_ins = q_ins_new;
    lo.q_pts = q_pts_new;
    lo.cls_logits = hd.cls;
    lo.points_xy = hd.points_xy;
    lo.points_z = hd.points_z;
    lo.ddt_logits = hd.ddt_logits;
    lo.ddt_scalar = hd.ddt_scalar;

    lo.topo.w_i2i = ia.w_i2i;
    lo.topo.w_p2i = integ.w_p2i;
    lo.topo.t_i2i = i2i_head(g, q_ins_new, ia.w_i2i, cfg.heads, cfg.d_sim, cfg.hidden, "topo.i2i");
    if (cfg.p2i_branch) {
      lo.topo.t_p2i = p2i_head(g, q_pts_new, q_ins_new, integ.w_p2i, cfg.heads, cfg.d_sim,
                               cfg.hidden, "topo.p2i");
      lo.topo.fused_l2l = fuse(g, lo.topo.t_i2i, lo.topo.t_p2i, N, P, cfg.fuse_alpha);
    } else {
      lo.topo.fused_l2l = lo.topo.t_i2i;
    }
    if (out.traffic.count > 0) {
      auto l2t = l2t_heads(g, q_ins_new, q_pts_new, out.traffic.q_te, cfg.heads, cfg.d_sim,
                           cfg.hidden, P, "topo.l2t", cfg.p2i_branch, cfg.fuse_alpha);
      lo.topo.t_i2t = l2t.t_i2t;
      lo.topo.t_p2t = l2t.t_p2t;
      lo.topo.w_i2t = l2t.w_i2t;
      lo.topo.w_p2t = l2t.w_p2t;
      lo.topo.fused_l2t = l2t.fused;
    }

    prev_t_i2i = lo.topo.t_i2i;
    prev_t_p2i = lo.topo.t_p2i;
    prev_ddt = lo.ddt_logits;

    // iterative reference refinement from this layer's regressed points
    {
      const Tensor& xy = t.val(hd.points_xy);
      Tensor next(NP, 2);
      for (int r = 0; r < NP; ++r) {
        next.at(r, 0) = std::clamp(xy.at(r, 0) / spec.extent_x(), 0.0, 1.0);
        next.at(r, 1) = std::clamp(xy.at(r, 1) / spec.extent_y(), 0.0, 1.0);
      }
      ref = std::move(next);
    }
    q_ins = q_ins_new;
    q_pts = q_pts_new;
    out.layers.push_back(std::move(lo));
  }
  return out;
}

}  // namespace lanetopo

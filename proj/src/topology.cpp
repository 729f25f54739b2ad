#include "lanetopo/topology.hpp"

#include <cmath>

namespace lanetopo {

TrafficTokens te_encoder(Graph& g, const std::vector<TrafficElement>& elements,
                         uint64_t noise_seed, double noise_sigma, int channels, int hidden) {
  Tape& t = g.tape();
  TrafficTokens tok;
  tok.count = static_cast<int>(elements.size());
  int K = static_cast<int>(traffic_categories().size());
  if (tok.count == 0) return tok;

  Rng rng(noise_seed);
  Tensor feat(tok.count, 4 + K);
  for (int m = 0; m < tok.count; ++m) {
    for (int j = 0; j < 4; ++j) feat.at(m, j) = elements[m].box[j];
    feat.at(m, 4 + traffic_category_index(elements[m].category)) = 1.0;
    for (int j = 0; j < 4 + K; ++j)
      if (noise_sigma > 0) feat.at(m, j) += noise_sigma * rng.normal();
  }
  Tape::Id x = t.constant(std::move(feat));
  tok.q_te = g.mlp3(x, "te.embed", hidden, channels);
  tok.box_pred = t.sigmoid(g.linear(tok.q_te, "te.box", 4));
  tok.cls_logits = g.linear(tok.q_te, "te.cls", K);
  return tok;
}

namespace {
Tape::Id pair_head(Graph& g, Tape::Id q_a, Tape::Id q_b, Tape::Id w, int heads, int d_sim,
                   int hidden, const std::string& prefix, const std::string& a_name,
                   const std::string& b_name) {
  Tape& t = g.tape();
  Tape::Id ea = g.mlp3(q_a, prefix + "." + a_name, hidden, d_sim);
  Tape::Id eb = g.mlp3(q_b, prefix + "." + b_name, hidden, d_sim);
  Tape::Id sim = t.scale(t.matmul_nt(ea, eb), 1.0 / std::sqrt(static_cast<double>(d_sim)));
  const int rows = t.val(sim).rows, cols = t.val(sim).cols;
  Tape::Id pairs = t.heads_to_pairs(w, heads);  // (rows*cols) x heads
  Tape::Id wterm = g.mlp3(pairs, prefix + ".attn", hidden, 1);
  return t.add(sim, t.reshape(wterm, rows, cols));
}
}  // namespace

Tape::Id i2i_head(Graph& g, Tape::Id q_ins, Tape::Id w_i2i, int heads, int d_sim, int hidden,
                  const std::string& prefix) {
  return pair_head(g, q_ins, q_ins, w_i2i, heads, d_sim, hidden, prefix, "sima", "simb");
}

Tape::Id p2i_head(Graph& g, Tape::Id q_pts, Tape::Id q_ins, Tape::Id w_p2i, int heads, int d_sim,
                  int hidden, const std::string& prefix) {
  return pair_head(g, q_pts, q_ins, w_p2i, heads, d_sim, hidden, prefix, "simc", "simd");
}

Tape::Id fuse(Graph& g, Tape::Id t_i2i, Tape::Id t_p2i, int n, int p, double alpha) {
  Tape& t = g.tape();
  Tape::Id pt_mean = t.group_mean_rows(t_p2i, n, p);
  return t.add(t.scale(t_i2i, alpha), t.scale(pt_mean, 1.0 - alpha));
}

L2TOutputs l2t_heads(Graph& g, Tape::Id q_ins, Tape::Id q_pts, Tape::Id q_te, int heads,
                     int d_sim, int hidden, int pts_per_instance, const std::string& prefix,
                     bool use_point_branch, double fuse_alpha) {
  Tape& t = g.tape();
  int n = t.val(q_ins).rows;
  int np = t.val(q_pts).rows;
  L2TOutputs out;

  // cross-attention weights of the hierarchical queries over traffic tokens
  Tape::Id q_hcl = t.concat_rows({q_pts, q_ins});
  Tape::Id qh = g.linear(q_hcl, prefix + ".att.q", t.val(q_hcl).cols);
  Tape::Id kh = g.linear(q_te, prefix + ".att.k", t.val(q_te).cols);
  Tape::Id w_all = t.attention_probs(qh, kh, -1, nullptr, heads);  // (heads*(np+n)) x M

  // split the head-stacked weight rows into point and instance groups
  std::vector<int> pts_rows, ins_rows;
  int rows_per_head = np + n;
  for (int h = 0; h < heads; ++h) {
    for (int r = 0; r < np; ++r) pts_rows.push_back(h * rows_per_head + r);
    for (int r = 0; r < n; ++r) ins_rows.push_back(h * rows_per_head + np + r);
  }
  out.w_p2t = t.select_rows(w_all, pts_rows);  // (heads*np) x M
  out.w_i2t = t.select_rows(w_all, ins_rows);  // (heads*n) x M

  out.t_i2t = pair_head(g, q_ins, q_te, out.w_i2t, heads, d_sim, hidden, prefix + ".i2t", "sima",
                        "simb");
  if (use_point_branch) {
    out.t_p2t = pair_head(g, q_pts, q_te, out.w_p2t, heads, d_sim, hidden, prefix + ".p2t",
                          "simc", "simd");
    out.fused = fuse(g, out.t_i2t, out.t_p2t, n, pts_per_instance, fuse_alpha);
  } else {
    out.fused = out.t_i2t;
  }
  return out;
}

}  // namespace lanetopo

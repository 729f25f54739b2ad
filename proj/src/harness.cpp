#include "lanetopo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lanetopo {

void OptimConfig::validate() const {
  if (lr <= 0 || weight_decay < 0) throw ConfigError("optim: lr > 0, weight_decay >= 0");
  if (steps < 0 || batch_size < 1) throw ConfigError("optim: steps >= 0, batch_size >= 1");
  if (checkpoint_every < 1 || log_every < 1)
    throw ConfigError("optim: checkpoint/log intervals must be >= 1");
}

void RunConfig::validate() const {
  model.validate();
  loss.validate();
  gen.validate();
  optim.validate();
  if (n_scenes < 0) throw ConfigError("n_scenes must be >= 0");
  if (bev_noise_sigma < 0) throw ConfigError("bev_noise_sigma must be >= 0");
}

std::string RunConfig::to_json() const {
  json j;
  j["n_queries"] = model.n_queries;
  j["pts_per_line"] = model.pts_per_line;
  j["channels"] = model.channels;
  j["layers"] = model.layers;
  j["heads"] = model.heads;
  j["d_sim"] = model.d_sim;
  j["hidden"] = model.hidden;
  j["window_r"] = model.window_r;
  j["k_attend"] = model.k_attend;
  j["sigma_prior"] = model.sigma_prior;
  j["fuse_alpha"] = model.fuse_alpha;
  j["te_noise_sigma"] = model.te_noise_sigma;
  j["cyclic"] = model.cyclic;
  j["p2i_branch"] = model.p2i_branch;
  j["seg_supervision"] = to_string(model.seg_supervision);
  j["topo_loss"] = to_string(model.topo_loss);
  j["lambda_cls"] = loss.lambda_cls;
  j["lambda_reg"] = loss.lambda_reg;
  j["lambda_mask"] = loss.lambda_mask;
  j["lambda_neg"] = loss.lambda_neg;
  j["lambda_pos"] = loss.lambda_pos;
  j["focal_alpha"] = loss.focal_alpha;
  j["focal_gamma"] = loss.focal_gamma;
  j["w_det"] = loss.w_det;
  j["w_seg"] = loss.w_seg;
  j["w_topo"] = loss.w_topo;
  j["max_centerlines"] = gen.max_centerlines;
  j["fork_prob"] = gen.fork_prob;
  j["merge_prob"] = gen.merge_prob;
  j["continue_prob"] = gen.continue_prob;
  j["curvature_max"] = gen.curvature_max;
  j["max_traffic"] = gen.max_traffic;
  j["connection_tolerance"] = gen.connection_tolerance;
  j["gt_pts_per_line"] = gen.pts_per_line;
  j["require_topology"] = gen.require_topology;
  j["bev_height"] = gen.bev.height_cells;
  j["bev_width"] = gen.bev.width_cells;
  j["meters_per_cell"] = gen.bev.meters_per_cell;
  j["lane_width"] = gen.bev.lane_width;
  j["bev_channels"] = gen.bev.feature_channels;
  j["lr"] = optim.lr;
  j["weight_decay"] = optim.weight_decay;
  j["steps"] = optim.steps;
  j["batch_size"] = optim.batch_size;
  j["checkpoint_every"] = optim.checkpoint_every;
  j["log_every"] = optim.log_every;
  j["seed"] = seed;
  j["n_scenes"] = n_scenes;
  j["bev_noise_sigma"] = bev_noise_sigma;
  return j.dump(2);
}

namespace {
json parse_config_text(const std::string& text) {
  // JSON document or flat key=value lines
  size_t first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config parse error: ") + e.what());
    }
  }
  json j = json::object();
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    size_t h = line.find('#');
    if (h != std::string::npos) line.resize(h);
    size_t a = line.find_first_not_of(" \t\r");
    if (a == std::string::npos) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line missing '=': " + line);
    auto trim = [](std::string s) {
      size_t b = s.find_first_not_of(" \t\r");
      size_t e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (val == "true" || val == "false") {
      j[key] = (val == "true");
    } else {
      try {
        size_t pos = 0;
        double d = std::stod(val, &pos);
        if (pos == val.size())
          j[key] = d;
        else
          j[key] = val;
      } catch (...) {
        j[key] = val;
      }
    }
  }
  return j;
}
}  // namespace

RunConfig RunConfig::from_text(const std::string& text) {
  json j = parse_config_text(text);
  RunConfig c;
  auto geti = [&](const char* k, int& dst) { if (j.contains(k)) { dst = j[k].get<int>(); j.erase(k); } };
  auto getd = [&](const char* k, double& dst) { if (j.contains(k)) { dst = j[k].get<double>(); j.erase(k); } };
  auto getb = [&](const char* k, bool& dst) { if (j.contains(k)) { dst = j[k].get<bool>(); j.erase(k); } };
  geti("n_queries", c.model.n_queries);
  geti("pts_per_line", c.model.pts_per_line);
  geti("channels", c.model.channels);
  geti("layers", c.model.layers);
  geti("heads", c.model.heads);
  geti("d_sim", c.model.d_sim);
  geti("hidden", c.model.hidden);
  geti("window_r", c.model.window_r);
  geti("k_attend", c.model.k_attend);
  getd("sigma_prior", c.model.sigma_prior);
  getd("fuse_alpha", c.model.fuse_alpha);
  getd("te_noise_sigma", c.model.te_noise_sigma);
  getb("cyclic", c.model.cyclic);
  getb("p2i_branch", c.model.p2i_branch);
  if (j.contains("seg_supervision")) {
    c.model.seg_supervision = seg_supervision_from_string(j["seg_supervision"].get<std::string>());
    j.erase("seg_supervision");
  }
  if (j.contains("topo_loss")) {
    c.model.topo_loss = topo_loss_from_string(j["topo_loss"].get<std::string>());
    j.erase("topo_loss");
  }
  getd("lambda_cls", c.loss.lambda_cls);
  getd("lambda_reg", c.loss.lambda_reg);
  getd("lambda_mask", c.loss.lambda_mask);
  getd("lambda_neg", c.loss.lambda_neg);
  getd("lambda_pos", c.loss.lambda_pos);
  getd("focal_alpha", c.loss.focal_alpha);
  getd("focal_gamma", c.loss.focal_gamma);
  getd("w_det", c.loss.w_det);
  getd("w_seg", c.loss.w_seg);
  getd("w_topo", c.loss.w_topo);
  geti("max_centerlines", c.gen.max_centerlines);
  getd("fork_prob", c.gen.fork_prob);
  getd("merge_prob", c.gen.merge_prob);
  getd("continue_prob", c.gen.continue_prob);
  getd("curvature_max", c.gen.curvature_max);
  geti("max_traffic", c.gen.max_traffic);
  getd("connection_tolerance", c.gen.connection_tolerance);
  geti("gt_pts_per_line", c.gen.pts_per_line);
  getb("require_topology", c.gen.require_topology);
  geti("bev_height", c.gen.bev.height_cells);
  geti("bev_width", c.gen.bev.width_cells);
  getd("meters_per_cell", c.gen.bev.meters_per_cell);
  getd("lane_width", c.gen.bev.lane_width);
  geti("bev_channels", c.gen.bev.feature_channels);
  getd("lr", c.optim.lr);
  getd("weight_decay", c.optim.weight_decay);
  geti("steps", c.optim.steps);
  geti("batch_size", c.optim.batch_size);
  geti("checkpoint_every", c.optim.checkpoint_every);
  geti("log_every", c.optim.log_every);
  if (j.contains("seed")) {
    c.seed = j["seed"].get<uint64_t>();
    j.erase("seed");
  }
  geti("n_scenes", c.n_scenes);
  getd("bev_noise_sigma", c.bev_noise_sigma);
  if (!j.empty())
    throw ConfigError("unknown config key: " + j.begin().key());
  c.validate();
  return c;
}

std::vector<SceneGraph> load_scenes(const std::string& data_dir) {
  fs::path dir(data_dir);
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw InputError("cannot open manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(mf);
  std::vector<SceneGraph> scenes;
  for (const auto& name : manifest["files"]) {
    std::ifstream f(dir / name.get<std::string>());
    if (!f) throw InputError("missing scene file: " + name.get<std::string>());
    std::stringstream ss;
    ss << f.rdbuf();
    scenes.push_back(scene_from_json(ss.str()));
  }
  return scenes;
}

namespace {

struct ScenePredictions {
  std::vector<PredLine> lines;
  std::vector<PredBox> boxes;
  Tensor adj_probs;   // N x N
  Tensor l2t_probs;   // N x M (empty when no traffic)
};

ScenePredictions predict_scene(ParamStore& store, const SceneGraph& scene, const RunConfig& cfg) {
  const BEVSpec& spec = scene.spec;
  Graph g(store);
  Tape& t = g.tape();
  Tensor bev = rasterize_bev(scene, spec, cfg.bev_noise_sigma, scene.seed);
  DecoderOutput out = decoder_forward(g, bev, spec, scene.traffic, scene.seed, cfg.model);
  const LayerOutput& last = out.layers.back();
  const int n = cfg.model.n_queries, p = cfg.model.pts_per_line;

  ScenePredictions pred;
  const Tensor& cls = t.val(last.cls_logits);
  const Tensor& xy = t.val(last.points_xy);
  for (int i = 0; i < n; ++i) {
    PredLine pl;
    pl.score = 1.0 / (1.0 + std::exp(-cls.at(i, 0)));
    for (int q = 0; q < p; ++q) pl.points.push_back({xy.at(i * p + q, 0), xy.at(i * p + q, 1)});
    pred.lines.push_back(std::move(pl));
  }
  const Tensor& adj = t.val(last.topo.fused_l2l);
  pred.adj_probs = Tensor(n, n);
  for (int i = 0; i < adj.numel(); ++i)
    pred.adj_probs.data[i] = 1.0 / (1.0 + std::exp(-adj.data[i]));
  if (out.traffic.count > 0) {
    const Tensor& boxes = t.val(out.traffic.box_pred);
    const Tensor& tc = t.val(out.traffic.cls_logits);
    for (int m = 0; m < out.traffic.count; ++m) {
      PredBox pb;
      for (int k = 0; k < 4; ++k) pb.box[k] = boxes.at(m, k);
      int arg = 0;
      double mx = tc.at(m, 0), z = 0.0;
      for (int k = 1; k < tc.cols; ++k)
        if (tc.at(m, k) > mx) { mx = tc.at(m, k); arg = k; }
      for (int k = 0; k < tc.cols; ++k) z += std::exp(tc.at(m, k) - mx);
      pb.category = arg;
      pb.score = 1.0 / z;
      pred.boxes.push_back(pb);
    }
    if (last.topo.fused_l2t >= 0) {
      const Tensor& lt = t.val(last.topo.fused_l2t);
      pred.l2t_probs = Tensor(n, out.traffic.count);
      for (int i = 0; i < lt.numel(); ++i)
        pred.l2t_probs.data[i] = 1.0 / (1.0 + std::exp(-lt.data[i]));
    }
  }
  return pred;
}

}  // namespace

SceneScores eval_scene(ParamStore& store, const SceneGraph& scene, const RunConfig& cfg) {
  ScenePredictions pred = predict_scene(store, scene, cfg);
  std::vector<std::vector<Point2>> gts;
  for (const auto& line : scene.centerlines) gts.push_back(line.points);

  SceneScores s;
  s.det_l = det_l(pred.lines, gts, frechet_thresholds(), &s.det_l_per_threshold);
  s.det_t = det_t(pred.boxes, scene.traffic);

  double mid = frechet_thresholds()[frechet_thresholds().size() / 2];
  std::vector<int> pred_to_gt = match_lines(pred.lines, gts, mid);
  s.top_ll = top_ll(pred.adj_probs, pred_to_gt, scene.adjacency);
  std::vector<int> te_match = match_boxes(pred.boxes, scene.traffic, 0.75);
  Tensor l2t_probs = pred.l2t_probs.numel() > 0
                         ? pred.l2t_probs
                         : Tensor(cfg.model.n_queries, scene.num_traffic());
  s.top_lt = top_lt(l2t_probs, pred_to_gt, te_match, scene.l2t);
  return s;
}

EvalReport evaluate(ParamStore& store, const std::vector<SceneGraph>& scenes,
                    const RunConfig& cfg, std::string* per_scene_csv) {
  EvalReport rep;
  rep.det_l_per_threshold.assign(frechet_thresholds().size(), 0.0);
  std::ostringstream csv;
  csv << "scene,det_l,det_t,top_ll,top_lt\n";
  for (size_t i = 0; i < scenes.size(); ++i) {
    SceneScores s = eval_scene(store, scenes[i], cfg);
    rep.det_l += s.det_l;
    rep.det_t += s.det_t;
    rep.top_ll += s.top_ll;
    rep.top_lt += s.top_lt;
    for (size_t k = 0; k < s.det_l_per_threshold.size(); ++k)
      rep.det_l_per_threshold[k] += s.det_l_per_threshold[k];
    csv << i << "," << s.det_l << "," << s.det_t << "," << s.top_ll << "," << s.top_lt << "\n";
  }
  if (!scenes.empty()) {
    double inv = 1.0 / scenes.size();
    rep.det_l *= inv;
    rep.det_t *= inv;
    rep.top_ll *= inv;
    rep.top_lt *= inv;
    for (double& v : rep.det_l_per_threshold) v *= inv;
  }
  rep.n_scenes = static_cast<int>(scenes.size());
  rep.finalize();
  if (per_scene_csv) *per_scene_csv = csv.str();
  return rep;
}

TrainResult run_training(ParamStore& store, const std::vector<SceneGraph>& scenes,
                         const RunConfig& cfg, std::ostream* log) {
  if (scenes.empty()) throw InputError("run_training: no scenes");
  TrainResult res;
  Rng batch_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  for (int step = 0; step < cfg.optim.steps; ++step) {
    store.zero_grads();
    double loss_sum = 0, det_sum = 0, seg_sum = 0, topo_sum = 0;
    for (int b = 0; b < cfg.optim.batch_size; ++b) {
      const SceneGraph& scene =
          scenes[batch_rng.uniform_int(0, static_cast<int>(scenes.size()) - 1)];
      Graph g(store);
      Tensor bev = rasterize_bev(scene, scene.spec, cfg.bev_noise_sigma, scene.seed);
      DecoderOutput out = decoder_forward(g, bev, scene.spec, scene.traffic, scene.seed,
                                          cfg.model);
      LossBreakdown bd = total_loss(g, out, scene, cfg.model, cfg.loss);
      loss_sum += g.tape().val(bd.total).at(0, 0);
      det_sum += g.tape().val(bd.det).at(0, 0);
      seg_sum += g.tape().val(bd.seg).at(0, 0);
      topo_sum += g.tape().val(bd.topo).at(0, 0);
      g.backward_to_store(bd.total);
    }
    double inv = 1.0 / cfg.optim.batch_size;
    double loss = loss_sum * inv;
    if (step == 0) res.initial_loss = loss;
    res.final_loss = loss;
    if (!std::isfinite(loss)) {
      res.nan_abort = true;
      res.steps_run = step;
      return res;
    }
    store.scale_grads(inv);
    store.adamw_step(cfg.optim.lr, cfg.optim.weight_decay);
    if (log && ((step + 1) % cfg.optim.log_every == 0 || step == 0))
      *log << step << "," << loss << "," << det_sum * inv << "," << seg_sum * inv << ","
           << topo_sum * inv << "\n";
    res.steps_run = step + 1;
  }
  return res;
}

int cmd_generate(const RunConfig& cfg, const std::string& out_dir, int n_scenes) {
  fs::create_directories(out_dir);
  json manifest;
  manifest["config"] = json::parse(cfg.to_json());
  manifest["count"] = n_scenes;
  json files = json::array(), seeds = json::array(), edges = json::array();
  for (int i = 0; i < n_scenes; ++i) {
    uint64_t seed = cfg.seed + static_cast<uint64_t>(i);
    SceneGraph scene = sample_scene(seed, cfg.gen);
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04d.json", i);
    std::ofstream f(fs::path(out_dir) / name, std::ios::binary);
    if (!f) throw InputError("cannot write scene file in " + out_dir);
    f << scene_to_json(scene);
    files.push_back(name);
    seeds.push_back(seed);
    int e = 0;
    for (const auto& row : scene.adjacency)
      for (int v : row) e += v;
    edges.push_back(e);
  }
  manifest["files"] = files;
  manifest["seeds"] = seeds;
  manifest["edge_counts"] = edges;
  std::ofstream mf(fs::path(out_dir) / "manifest.json", std::ios::binary);
  if (!mf) throw InputError("cannot write manifest in " + out_dir);
  mf << manifest.dump(2) << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir) {
  auto scenes = load_scenes(data_dir);
  fs::create_directories(out_dir);
  ParamStore store;
  std::ofstream log(fs::path(out_dir) / "train_log.csv");
  log << "step,loss,det,seg,topo\n";

  // run in checkpoint_every sized chunks so intermediate state is persisted
  RunConfig chunk_cfg = cfg;
  TrainResult res;
  int done = 0;
  bool first = true;
  json extra;
  extra["config"] = json::parse(cfg.to_json());
  while (done < cfg.optim.steps) {
    chunk_cfg.optim.steps = std::min(cfg.optim.checkpoint_every, cfg.optim.steps - done);
    chunk_cfg.seed = cfg.seed + static_cast<uint64_t>(done) * 0x10001ull;
    TrainResult r = run_training(store, scenes, chunk_cfg, &log);
    if (first) {
      res.initial_loss = r.initial_loss;
      first = false;
    }
    res.final_loss = r.final_loss;
    done += r.steps_run;
    res.steps_run = done;
    store.set_step_count(done);
    if (r.nan_abort) {
      res.nan_abort = true;
      json dump;
      dump["step"] = done;
      dump["loss"] = r.final_loss;
      std::ofstream d(fs::path(out_dir) / "nan_dump.json");
      d << dump.dump(2) << "\n";
      std::cerr << "training aborted: non-finite loss at step " << done << "\n";
      return 3;
    }
    store.save((fs::path(out_dir) / "checkpoint.bin").string(), extra.dump());
  }
  if (cfg.optim.steps == 0)
    store.save((fs::path(out_dir) / "checkpoint.bin").string(), extra.dump());
  std::cout << "trained " << res.steps_run << " steps, loss " << res.initial_loss << " -> "
            << res.final_loss << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint_path,
             const std::string& data_dir, const std::string& out_dir) {
  auto scenes = load_scenes(data_dir);
  ParamStore store;
  store.load(checkpoint_path);
  std::string csv;
  EvalReport rep = evaluate(store, scenes, cfg, &csv);
  fs::create_directories(out_dir);
  std::ofstream rf(fs::path(out_dir) / "eval_report.json");
  rf << rep.to_json() << "\n";
  std::ofstream cf(fs::path(out_dir) / "per_scene.csv");
  cf << csv;
  std::cout << rep.to_json() << "\n";
  return 0;
}

namespace {
struct AblationVariant {
  std::string label;
  RunConfig cfg;
};
}  // namespace

int cmd_ablate(const RunConfig& base, const std::vector<std::string>& axes,
               const std::string& data_dir, const std::string& out_dir) {
  std::vector<AblationVariant> variants{{"base", base}};
  for (const std::string& axis : axes) {
    std::vector<AblationVariant> next;
    for (const auto& v : variants) {
      if (axis == "cyclic") {
        for (bool on : {true, false}) {
          AblationVariant w = v;
          w.cfg.model.cyclic = on;
          w.label = v.label + ";cyclic=" + (on ? "true" : "false");
          next.push_back(std::move(w));
        }
      } else if (axis == "p2i") {
        for (bool on : {true, false}) {
          AblationVariant w = v;
          w.cfg.model.p2i_branch = on;
          w.label = v.label + ";p2i=" + (on ? "true" : "false");
          next.push_back(std::move(w));
        }
      } else if (axis == "seg") {
        for (auto s : {SegSupervision::Ddt, SegSupervision::Dt, SegSupervision::Binary,
                       SegSupervision::Off}) {
          AblationVariant w = v;
          w.cfg.model.seg_supervision = s;
          w.label = v.label + ";seg=" + to_string(s);
          next.push_back(std::move(w));
        }
      } else if (axis == "topo_loss") {
        for (auto k : {TopoLossKind::Adaptive, TopoLossKind::Focal, TopoLossKind::Dice}) {
          AblationVariant w = v;
          w.cfg.model.topo_loss = k;
          w.label = v.label + ";topo_loss=" + to_string(k);
          next.push_back(std::move(w));
        }
      } else {
        throw ConfigError("unknown ablation axis: " + axis);
      }
    }
    variants = std::move(next);
  }

  auto scenes = load_scenes(data_dir);
  fs::create_directories(out_dir);
  std::ofstream csv(fs::path(out_dir) / "ablation.csv");
  csv << "label,cyclic,p2i_branch,seg_supervision,topo_loss,initial_loss,final_loss,"
         "det_l,det_t,top_ll,top_lt,ols_mean,ols_sqrt\n";
  for (const auto& v : variants) {
    ParamStore store;
    TrainResult tr = run_training(store, scenes, v.cfg, nullptr);
    if (tr.nan_abort) return 3;
    EvalReport rep = evaluate(store, scenes, v.cfg);
    csv << v.label << "," << v.cfg.model.cyclic << "," << v.cfg.model.p2i_branch << ","
        << to_string(v.cfg.model.seg_supervision) << "," << to_string(v.cfg.model.topo_loss)
        << "," << tr.initial_loss << "," << tr.final_loss << "," << rep.det_l << "," << rep.det_t
        << "," << rep.top_ll << "," << rep.top_lt << "," << rep.ols_mean << "," << rep.ols_sqrt
        << "\n";
    std::cout << v.label << ": det_l " << rep.det_l << " top_ll " << rep.top_ll << "\n";
  }
  return 0;
}

int cmd_gradcheck(const RunConfig& base, uint64_t seed, bool corrupt_grads, std::ostream& out) {
  // shrink the model so finite differences over the composed loss stay fast
  RunConfig cfg = base;
  cfg.model.n_queries = 3;
  cfg.model.pts_per_line = 4;
  cfg.model.channels = 8;
  cfg.model.layers = std::min(cfg.model.layers, 2);
  cfg.model.heads = 2;
  cfg.model.d_sim = 4;
  cfg.model.hidden = 8;
  cfg.model.window_r = 1;
  cfg.gen.bev.height_cells = 24;
  cfg.gen.bev.width_cells = 16;
  cfg.gen.bev.feature_channels = 4;
  cfg.gen.max_centerlines = 2;
  cfg.gen.fork_prob = 0.0;
  cfg.gen.merge_prob = 0.0;
  cfg.gen.continue_prob = 0.95;
  cfg.gen.require_topology = true;
  cfg.gen.max_traffic = 1;
  cfg.validate();

  // deterministic search for a 2-instance scene with topology
  SceneGraph scene;
  bool found = false;
  for (uint64_t s = seed; s < seed + 256; ++s) {
    scene = sample_scene(s, cfg.gen);
    if (scene.num_lines() == 2) {
      found = true;
      break;
    }
  }
  if (!found) throw StateError("cmd_gradcheck: no suitable scene found");
  Tensor bev = rasterize_bev(scene, scene.spec, cfg.bev_noise_sigma, scene.seed);

  ParamStore store;
  auto fn = [&](bool with_grad) {
    if (with_grad) store.zero_grads();
    Graph g(store);
    DecoderOutput dec = decoder_forward(g, bev, scene.spec, scene.traffic, scene.seed, cfg.model);
    LossBreakdown bd = total_loss(g, dec, scene, cfg.model, cfg.loss);
    double v = g.tape().val(bd.total).at(0, 0);
    if (with_grad) {
      g.backward_to_store(bd.total);
      if (corrupt_grads) store.scale_grads(1.3);
    }
    return v;
  };
  fn(true);  // materialize all parameters before sampling them

  GradCheckReport rep = grad_check(store, fn, 1e-5, 1e-3);
  json j;
  j["pass"] = rep.pass;
  j["worst"] = rep.worst;
  json items = json::array();
  for (const auto& it : rep.items) {
    json e;
    e["name"] = it.name;
    e["max_rel_err"] = it.max_rel_err;
    items.push_back(e);
  }
  j["params"] = items;
  out << j.dump(2) << "\n";
  return rep.pass ? 0 : 3;
}

}  // namespace lanetopo

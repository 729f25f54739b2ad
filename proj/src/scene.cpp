#include "lanetopo/scene.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

#include <json.hpp>

namespace lanetopo {

using nlohmann::json;

int traffic_category_index(const std::string& cat) {
  const auto& cats = traffic_categories();
  for (size_t i = 0; i < cats.size(); ++i)
    if (cats[i] == cat) return static_cast<int>(i);
  throw InputError("unknown traffic category: " + cat);
}

void BEVSpec::validate() const {
  if (height_cells <= 0 || width_cells <= 0 || meters_per_cell <= 0.0 || lane_width <= 0.0 ||
      feature_channels <= 0)
    throw ConfigError("BEVSpec: all fields must be positive");
}

void GeneratorConfig::validate() const {
  bev.validate();
  if (max_centerlines <= 0) throw ConfigError("generator: max_centerlines must be positive");
  if (pts_per_line < 2) throw ConfigError("generator: pts_per_line must be >= 2");
  if (fork_prob < 0 || fork_prob > 1 || merge_prob < 0 || merge_prob > 1 || continue_prob < 0 ||
      continue_prob > 1)
    throw ConfigError("generator: probabilities must lie in [0,1]");
  if (max_traffic < 0) throw ConfigError("generator: max_traffic must be >= 0");
  if (connection_tolerance <= 0) throw ConfigError("generator: connection_tolerance must be > 0");
}

namespace {

constexpr double kMargin = 1.0;

struct Pending {
  Point2 start;
  double heading;
  int parent;  // lane index or -1
};

double dist(const Point2& a, const Point2& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

SceneGraph sample_scene_once(uint64_t seed, const GeneratorConfig& cfg) {
  Rng rng(seed);
  const double W = cfg.bev.extent_x();
  const double H = cfg.bev.extent_y();

  SceneGraph scene;
  scene.spec = cfg.bev;
  scene.seed = seed;

  std::deque<Pending> frontier;
  int n_roots = cfg.max_centerlines >= 2 ? rng.uniform_int(1, 2) : 1;
  for (int r = 0; r < n_roots; ++r) {
    Pending p;
    p.start = {rng.uniform(kMargin + 1.0, W - kMargin - 1.0), kMargin};
    p.heading = 1.5707963267948966 + rng.uniform(-0.25, 0.25);  // roughly +y
    p.parent = -1;
    frontier.push_back(p);
  }

  std::vector<std::pair<int, int>> edges;
  while (!frontier.empty() && scene.num_lines() < cfg.max_centerlines) {
    Pending cur = frontier.front();
    frontier.pop_front();

    double length = rng.uniform(8.0, 16.0);
    double curvature = cfg.curvature_max > 0 ? rng.uniform(-cfg.curvature_max, cfg.curvature_max)
                                             : 0.0;
    int P = cfg.pts_per_line;
    double ds = length / (P - 1);

    std::vector<Point2> pts{cur.start};
    double heading = cur.heading;
    for (int i = 1; i < P; ++i) {
      heading += curvature * ds;
      Point2 next = {pts.back()[0] + ds * std::cos(heading), pts.back()[1] + ds * std::sin(heading)};
      if (next[0] < kMargin || next[0] > W - kMargin || next[1] < kMargin || next[1] > H - kMargin)
        break;
      pts.push_back(next);
    }
    if (pts.size() < 2) continue;

    int lane_id = scene.num_lines();
    Centerline line;
    line.id = lane_id;
    line.points = pts;
    scene.centerlines.push_back(std::move(line));
    if (cur.parent >= 0) edges.emplace_back(cur.parent, lane_id);

    bool truncated = static_cast<int>(pts.size()) < P;
    Point2 end = pts.back();
    if (!truncated && end[1] < H - kMargin - 4.0) {
      if (rng.bernoulli(cfg.fork_prob)) {
        double spread = rng.uniform(0.25, 0.5);
        frontier.push_back({end, heading + spread, lane_id});
        frontier.push_back({end, heading - spread, lane_id});
      } else if (rng.bernoulli(cfg.continue_prob)) {
        frontier.push_back({end, heading + rng.uniform(-0.15, 0.15), lane_id});
      }
    }
  }

  // Optional merge: re-route one terminal lane's endpoint onto another's so a
  // shared successor has two parents.
  if (scene.num_lines() >= 3 && rng.bernoulli(cfg.merge_prob)) {
    std::vector<int> terminal;
    for (int i = 0; i < scene.num_lines(); ++i) {
      bool has_child = false;
      for (auto& e : edges)
        if (e.first == i) has_child = true;
      if (!has_child) terminal.push_back(i);
    }
    if (terminal.size() >= 2) {
      int a = terminal[0];
      int best = -1;
      double best_d = 8.0;
      for (size_t k = 1; k < terminal.size(); ++k) {
        double d = dist(scene.centerlines[a].points.back(),
                        scene.centerlines[terminal[k]].points.back());
        if (d < best_d && d > 1e-9) {
          best_d = d;
          best = terminal[k];
        }
      }
      if (best >= 0) {
        Point2 target = scene.centerlines[a].points.back();
        auto& bpts = scene.centerlines[best].points;
        if (dist(bpts[bpts.size() - 2], target) > 1e-6) {
          bpts.back() = target;
          // both parents now feed one shared child if room remains
          if (scene.num_lines() < cfg.max_centerlines && target[1] < H - kMargin - 4.0) {
            int child = scene.num_lines();
            Centerline cl;
            cl.id = child;
            double hy = rng.uniform(1.35, 1.8);
            double step = 1.2;
            cl.points.push_back(target);
            for (int i = 1; i < cfg.pts_per_line; ++i) {
              Point2 nx = {cl.points.back()[0] + step * std::cos(hy),
                           cl.points.back()[1] + step * std::sin(hy)};
              if (nx[0] < kMargin || nx[0] > W - kMargin || nx[1] < kMargin ||
                  nx[1] > H - kMargin)
                break;
              cl.points.push_back(nx);
            }
            if (cl.points.size() >= 2) {
              scene.centerlines.push_back(std::move(cl));
              edges.emplace_back(a, child);
              edges.emplace_back(best, child);
            }
          }
        }
      }
    }
  }

  int G = scene.num_lines();
  scene.adjacency.assign(G, std::vector<int>(G, 0));
  for (auto& e : edges)
    if (e.first < G && e.second < G && e.first != e.second) scene.adjacency[e.first][e.second] = 1;

  // Traffic elements anchored at terminal lane endpoints; a signal governs
  // every centerline whose endpoint lies near its anchor.
  int M = cfg.max_traffic > 0 ? rng.uniform_int(0, cfg.max_traffic) : 0;
  scene.l2t.assign(G, std::vector<int>(M, 0));
  for (int m = 0; m < M; ++m) {
    TrafficElement te;
    te.id = m;
    int anchor_lane = rng.uniform_int(0, G - 1);
    Point2 anchor = scene.centerlines[anchor_lane].points.back();
    double x0 = rng.uniform(0.0, 0.8);
    double y0 = rng.uniform(0.0, 0.8);
    te.box = {x0, y0, x0 + rng.uniform(0.05, 0.2), y0 + rng.uniform(0.05, 0.2)};
    te.category = traffic_categories()[rng.uniform_int(0, 2)];
    scene.traffic.push_back(te);
    for (int i = 0; i < G; ++i)
      if (dist(scene.centerlines[i].points.back(), anchor) <= 2.0) scene.l2t[i][m] = 1;
  }
  return scene;
}

}  // namespace

SceneGraph sample_scene(uint64_t seed, const GeneratorConfig& cfg) {
  cfg.validate();
  uint64_t s = seed;
  for (int attempt = 0; attempt < 32; ++attempt) {
    SceneGraph scene = sample_scene_once(s, cfg);
    if (!cfg.require_topology) return scene;
    for (const auto& row : scene.adjacency)
      for (int v : row)
        if (v == 1) return scene;
    s = s * 6364136223846793005ull + 1442695040888963407ull;  // deterministic retry
  }
  throw ConfigError("sample_scene: could not generate a connected scene; raise fork_prob");
}

double point_segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  double dx = b[0] - a[0], dy = b[1] - a[1];
  double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2, 0.0, 1.0);
  return std::hypot(p[0] - (a[0] + t * dx), p[1] - (a[1] + t * dy));
}

double polyline_min_point_distance(const Point2& p, const std::vector<Point2>& pts) {
  double best = 1e300;
  for (const auto& q : pts) best = std::min(best, std::hypot(p[0] - q[0], p[1] - q[1]));
  return best;
}

std::vector<Point2> densify_polyline(const std::vector<Point2>& pts, double max_spacing) {
  if (pts.size() < 2) throw InputError("densify: need at least 2 points");
  std::vector<Point2> out;
  out.push_back(pts[0]);
  for (size_t s = 0; s + 1 < pts.size(); ++s) {
    double seg = std::hypot(pts[s + 1][0] - pts[s][0], pts[s + 1][1] - pts[s][1]);
    int n = std::max(1, static_cast<int>(std::ceil(seg / max_spacing)));
    for (int i = 1; i <= n; ++i) {
      double t = static_cast<double>(i) / n;
      Point2 p = {pts[s][0] + t * (pts[s + 1][0] - pts[s][0]),
                  pts[s][1] + t * (pts[s + 1][1] - pts[s][1])};
      if (std::hypot(p[0] - out.back()[0], p[1] - out.back()[1]) > 1e-12) out.push_back(p);
    }
  }
  return out;
}

std::vector<Point2> resample_polyline(const std::vector<Point2>& pts, int n_points) {
  if (pts.size() < 2) throw InputError("resample: need at least 2 points");
  if (n_points < 2) throw InputError("resample: need at least 2 output points");
  std::vector<double> cum{0.0};
  for (size_t i = 0; i + 1 < pts.size(); ++i)
    cum.push_back(cum.back() + std::hypot(pts[i + 1][0] - pts[i][0], pts[i + 1][1] - pts[i][1]));
  double total = cum.back();
  std::vector<Point2> out;
  out.reserve(n_points);
  size_t seg = 0;
  for (int k = 0; k < n_points; ++k) {
    double target = total * k / (n_points - 1);
    while (seg + 2 < pts.size() && cum[seg + 1] < target) ++seg;
    double span = cum[seg + 1] - cum[seg];
    double t = span > 0 ? (target - cum[seg]) / span : 0.0;
    out.push_back({pts[seg][0] + t * (pts[seg + 1][0] - pts[seg][0]),
                   pts[seg][1] + t * (pts[seg + 1][1] - pts[seg][1])});
  }
  return out;
}

DDTMask ddt_mask(const Centerline& line, const BEVSpec& spec) {
  spec.validate();
  if (line.points.size() < 2) throw InputError("ddt_mask: centerline needs >= 2 points");
  bool degenerate = true;
  for (size_t i = 1; i < line.points.size(); ++i)
    if (std::hypot(line.points[i][0] - line.points[0][0],
                   line.points[i][1] - line.points[0][1]) > 1e-12)
      degenerate = false;
  if (degenerate) throw InputError("ddt_mask: degenerate centerline (all points identical)");

  const double half = spec.lane_width / 2.0;
  const double mpc = spec.meters_per_cell;
  std::vector<Point2> dense = densify_polyline(line.points, mpc);

  // bucket densified points by cell for a bounded local search
  std::unordered_map<int64_t, std::vector<int>> buckets;
  auto key = [&](int bx, int by) { return (static_cast<int64_t>(by) << 32) | (uint32_t)bx; };
  for (size_t i = 0; i < dense.size(); ++i) {
    int bx = static_cast<int>(std::floor(dense[i][0] / mpc));
    int by = static_cast<int>(std::floor(dense[i][1] / mpc));
    buckets[key(bx, by)].push_back(static_cast<int>(i));
  }
  int reach = static_cast<int>(std::ceil(half / mpc)) + 1;

  DDTMask mask;
  mask.height = spec.height_cells;
  mask.width = spec.width_cells;
  mask.classes.assign(static_cast<size_t>(mask.height) * mask.width, 5);
  for (int r = 0; r < mask.height; ++r)
    for (int c = 0; c < mask.width; ++c) {
      Point2 b = spec.cell_center(r, c);
      int bx = static_cast<int>(std::floor(b[0] / mpc));
      int by = static_cast<int>(std::floor(b[1] / mpc));
      double d = 1e300;
      for (int dy = -reach; dy <= reach; ++dy)
        for (int dx = -reach; dx <= reach; ++dx) {
          auto it = buckets.find(key(bx + dx, by + dy));
          if (it == buckets.end()) continue;
          for (int pi : it->second) {
            double dd = std::hypot(b[0] - dense[pi][0], b[1] - dense[pi][1]);
            d = std::min(d, dd);
          }
        }
      double u = std::min(d, half) / half;
      int cls = std::min(static_cast<int>(std::floor(6.0 * u)), 5);
      mask.classes[static_cast<size_t>(r) * mask.width + c] = static_cast<uint8_t>(cls);
    }
  return mask;
}

Tensor rasterize_bev(const SceneGraph& scene, const BEVSpec& spec, double noise_sigma,
                     uint64_t seed) {
  spec.validate();
  const double half = spec.lane_width / 2.0;
  int HW = spec.height_cells * spec.width_cells;
  Tensor out(HW, spec.feature_channels);
  Rng rng(seed);
  const double pi = 3.14159265358979323846;
  for (int r = 0; r < spec.height_cells; ++r)
    for (int c = 0; c < spec.width_cells; ++c) {
      int cell = r * spec.width_cells + c;
      Point2 b = spec.cell_center(r, c);
      double d = 1e300;
      for (const auto& line : scene.centerlines)
        for (size_t s = 0; s + 1 < line.points.size(); ++s)
          d = std::min(d, point_segment_distance(b, line.points[s], line.points[s + 1]));
      double occ = d <= half ? 1.0 : 0.0;
      out.at(cell, 0) = occ + (noise_sigma > 0 ? noise_sigma * rng.normal() : 0.0);
      double u = b[0] / spec.extent_x();
      double v = b[1] / spec.extent_y();
      for (int ch = 1; ch < spec.feature_channels; ++ch) {
        int k = (ch - 1) / 4;
        double f = pi * std::pow(2.0, k);
        switch ((ch - 1) % 4) {
          case 0: out.at(cell, ch) = std::sin(f * u); break;
          case 1: out.at(cell, ch) = std::cos(f * u); break;
          case 2: out.at(cell, ch) = std::sin(f * v); break;
          case 3: out.at(cell, ch) = std::cos(f * v); break;
        }
      }
    }
  return out;
}

std::string scene_to_json(const SceneGraph& scene) {
  json j;
  json lines = json::array();
  for (const auto& l : scene.centerlines) {
    json pts = json::array();
    for (const auto& p : l.points) pts.push_back({p[0], p[1]});
    lines.push_back({{"id", l.id}, {"points", pts}});
  }
  j["centerlines"] = lines;
  j["adjacency"] = scene.adjacency;
  json traffic = json::array();
  for (const auto& t : scene.traffic)
    traffic.push_back({{"id", t.id},
                       {"box", {t.box[0], t.box[1], t.box[2], t.box[3]}},
                       {"category", t.category}});
  j["traffic"] = traffic;
  j["l2t"] = scene.l2t;
  j["spec"] = {{"height_cells", scene.spec.height_cells},
               {"width_cells", scene.spec.width_cells},
               {"meters_per_cell", scene.spec.meters_per_cell},
               {"lane_width", scene.spec.lane_width},
               {"feature_channels", scene.spec.feature_channels}};
  j["seed"] = scene.seed;
  return j.dump();
}

SceneGraph scene_from_json(const std::string& text) {
  json j = json::parse(text);
  SceneGraph scene;
  for (const auto& l : j.at("centerlines")) {
    Centerline cl;
    cl.id = l.at("id").get<int>();
    for (const auto& p : l.at("points")) cl.points.push_back({p[0].get<double>(), p[1].get<double>()});
    scene.centerlines.push_back(std::move(cl));
  }
  scene.adjacency = j.at("adjacency").get<std::vector<std::vector<int>>>();
  for (const auto& t : j.at("traffic")) {
    TrafficElement te;
    te.id = t.at("id").get<int>();
    auto b = t.at("box");
    te.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
    te.category = t.at("category").get<std::string>();
    traffic_category_index(te.category);  // vocabulary check
    scene.traffic.push_back(std::move(te));
  }
  scene.l2t = j.at("l2t").get<std::vector<std::vector<int>>>();
  auto s = j.at("spec");
  scene.spec.height_cells = s.at("height_cells").get<int>();
  scene.spec.width_cells = s.at("width_cells").get<int>();
  scene.spec.meters_per_cell = s.at("meters_per_cell").get<double>();
  scene.spec.lane_width = s.at("lane_width").get<double>();
  scene.spec.feature_channels = s.at("feature_channels").get<int>();
  scene.seed = j.value("seed", uint64_t{0});
  return scene;
}

}  // namespace lanetopo

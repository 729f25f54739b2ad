#include <cmath>
#include <limits>

#include "doctest.h"
#include "lanetopo/scene.hpp"

using namespace lanetopo;

namespace {
GeneratorConfig small_cfg() {
  GeneratorConfig cfg;
  cfg.bev.height_cells = 32;
  cfg.bev.width_cells = 32;
  return cfg;
}

// exhaustive nearest-point DDT oracle over the densified polyline
DDTMask ddt_oracle(const Centerline& line, const BEVSpec& spec) {
  auto dense = densify_polyline(line.points, spec.meters_per_cell);
  double half = spec.lane_width / 2.0;
  DDTMask m;
  m.height = spec.height_cells;
  m.width = spec.width_cells;
  m.classes.resize(static_cast<size_t>(m.height) * m.width);
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c) {
      Point2 b = spec.cell_center(r, c);
      double d = std::numeric_limits<double>::infinity();
      for (const auto& p : dense) d = std::min(d, std::hypot(b[0] - p[0], b[1] - p[1]));
      double u = std::min(d, half) / half;
      m.classes[static_cast<size_t>(r) * m.width + c] =
          static_cast<uint8_t>(std::min(static_cast<int>(std::floor(6.0 * u)), 5));
    }
  return m;
}
}  // namespace

TEST_CASE("sample_scene: determinism and single-lane case") {
  GeneratorConfig cfg = small_cfg();
  SceneGraph a = sample_scene(7, cfg);
  SceneGraph b = sample_scene(7, cfg);
  CHECK(scene_to_json(a) == scene_to_json(b));

  GeneratorConfig single = small_cfg();
  single.fork_prob = 0.0;
  single.continue_prob = 0.0;
  single.merge_prob = 0.0;
  single.max_centerlines = 1;
  SceneGraph s = sample_scene(7, single);
  CHECK(s.num_lines() == 1);
  for (const auto& row : s.adjacency)
    for (int v : row) CHECK(v == 0);
}

TEST_CASE("sample_scene: adjacency respects connection tolerance over a seed sweep") {
  GeneratorConfig cfg;
  cfg.fork_prob = 0.5;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SceneGraph s = sample_scene(seed, cfg);
    int g = s.num_lines();
    REQUIRE(static_cast<int>(s.adjacency.size()) == g);
    for (int i = 0; i < g; ++i) {
      CHECK(s.adjacency[i][i] == 0);
      for (int j = 0; j < g; ++j) {
        CHECK((s.adjacency[i][j] == 0 || s.adjacency[i][j] == 1));
        if (s.adjacency[i][j] == 1) {
          const Point2& e = s.centerlines[i].points.back();
          const Point2& st = s.centerlines[j].points.front();
          CHECK(std::hypot(e[0] - st[0], e[1] - st[1]) <= cfg.connection_tolerance + 1e-9);
        }
      }
    }
    // centerlines stay inside the BEV extent with distinct consecutive points
    for (const auto& line : s.centerlines) {
      REQUIRE(line.points.size() >= 2);
      for (size_t p = 0; p < line.points.size(); ++p) {
        CHECK(line.points[p][0] >= 0.0);
        CHECK(line.points[p][0] <= cfg.bev.extent_x());
        CHECK(line.points[p][1] >= 0.0);
        CHECK(line.points[p][1] <= cfg.bev.extent_y());
        if (p > 0)
          CHECK((line.points[p][0] != line.points[p - 1][0] ||
                 line.points[p][1] != line.points[p - 1][1]));
      }
    }
  }
}

TEST_CASE("rasterize_bev: empty scene, occupancy oracle, determinism") {
  BEVSpec spec;
  spec.height_cells = 16;
  spec.width_cells = 8;
  SceneGraph empty;
  empty.spec = spec;
  Tensor z = rasterize_bev(empty, spec, 0.0, 1);
  for (int c = 0; c < z.rows; ++c) CHECK(z.at(c, 0) == 0.0);

  SceneGraph one;
  one.spec = spec;
  Centerline line;
  line.id = 0;
  line.points = {{4.0, 1.0}, {4.0, 15.0}};
  one.centerlines.push_back(line);
  one.adjacency = {{0}};
  Tensor occ = rasterize_bev(one, spec, 0.0, 1);
  double half = spec.lane_width / 2.0;
  for (int r = 0; r < spec.height_cells; ++r)
    for (int c = 0; c < spec.width_cells; ++c) {
      Point2 b = spec.cell_center(r, c);
      double d = point_segment_distance(b, line.points[0], line.points[1]);
      CHECK(occ.at(r * spec.width_cells + c, 0) == (d <= half ? 1.0 : 0.0));
    }

  SceneGraph s = sample_scene(3, small_cfg());
  Tensor n1 = rasterize_bev(s, s.spec, 0.1, 42);
  Tensor n2 = rasterize_bev(s, s.spec, 0.1, 42);
  for (int i = 0; i < n1.numel(); ++i) CHECK(n1.data[i] == n2.data[i]);
}

TEST_CASE("ddt_mask: class arithmetic oracle values") {
  BEVSpec spec;
  spec.height_cells = 8;
  spec.width_cells = 8;
  spec.lane_width = 4.0;  // half width 2 m
  Centerline line;
  // vertical line whose endpoints are cell centers (3.5, 2.5) and (3.5, 6.5)
  line.points = {{3.5, 2.5}, {3.5, 6.5}};
  DDTMask m = ddt_mask(line, spec);
  // cell center coinciding with a centerline point -> d=0 -> class 0
  CHECK(m.at(2, 3) == 0);
  // cell (6,0) center (0.5, 6.5): d=3.0 >= half width -> class 5
  CHECK(m.at(6, 0) == 5);

  // d = 1.1: u = 0.55 -> class min(floor(3.3), 5) = 3
  Centerline line2;
  line2.points = {{3.5, 3.6}, {3.5, 7.6}};
  DDTMask m2 = ddt_mask(line2, spec);
  CHECK(m2.at(2, 3) == 3);

  Centerline degenerate;
  degenerate.points = {{1.0, 1.0}, {1.0, 1.0}};
  CHECK_THROWS_AS(ddt_mask(degenerate, spec), InputError);
}

TEST_CASE("ddt_mask equals exhaustive oracle and is monotone in distance") {
  GeneratorConfig cfg = small_cfg();
  for (uint64_t seed = 0; seed < 25; ++seed) {
    SceneGraph s = sample_scene(seed, cfg);
    for (const auto& line : s.centerlines) {
      DDTMask fast = ddt_mask(line, s.spec);
      DDTMask slow = ddt_oracle(line, s.spec);
      REQUIRE(fast.classes.size() == slow.classes.size());
      for (size_t i = 0; i < fast.classes.size(); ++i) CHECK(fast.classes[i] == slow.classes[i]);
    }
  }
}

TEST_CASE("polyline helpers: densify and equidistant resampling") {
  std::vector<Point2> pts = {{0, 0}, {10, 0}};
  auto dense = densify_polyline(pts, 1.0);
  for (size_t i = 1; i < dense.size(); ++i)
    CHECK(std::hypot(dense[i][0] - dense[i - 1][0], dense[i][1] - dense[i - 1][1]) <= 1.0 + 1e-9);

  auto rs = resample_polyline(pts, 11);
  REQUIRE(rs.size() == 11);
  for (int i = 0; i < 11; ++i) {
    CHECK(rs[i][0] == doctest::Approx(i * 1.0));
    CHECK(rs[i][1] == doctest::Approx(0.0));
  }
  // bent polyline: consecutive arc-length spacing is constant
  std::vector<Point2> bent = {{0, 0}, {3, 0}, {3, 4}};  // total length 7
  auto rb = resample_polyline(bent, 8);
  REQUIRE(rb.size() == 8);
  for (size_t i = 1; i < rb.size(); ++i)
    CHECK(std::hypot(rb[i][0] - rb[i - 1][0], rb[i][1] - rb[i - 1][1]) ==
          doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("scene json: schema fields and exact round trip") {
  SceneGraph s = sample_scene(12, small_cfg());
  std::string txt = scene_to_json(s);
  CHECK(txt.find("\"centerlines\"") != std::string::npos);
  CHECK(txt.find("\"adjacency\"") != std::string::npos);
  CHECK(txt.find("\"traffic\"") != std::string::npos);
  CHECK(txt.find("\"l2t\"") != std::string::npos);
  CHECK(txt.find("\"spec\"") != std::string::npos);
  SceneGraph back = scene_from_json(txt);
  CHECK(scene_to_json(back) == txt);
  CHECK(back.num_lines() == s.num_lines());
  CHECK(back.num_traffic() == s.num_traffic());
}

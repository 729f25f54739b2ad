#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lanetopo/rng.hpp"
#include "lanetopo/tensor.hpp"

namespace lanetopo {

using Point2 = std::array<double, 2>;

// Ordered polyline of 2-D points in meters (BEV frame, z fixed to 0).
struct Centerline {
  int id = 0;
  std::vector<Point2> points;
};

// Axis-aligned box in a synthetic normalized front-plane frame plus category.
struct TrafficElement {
  int id = 0;
  std::array<double, 4> box{};  // x0, y0, x1, y1 in [0,1]
  std::string category;         // signal-red | signal-green | sign
};

inline const std::vector<std::string>& traffic_categories() {
  static const std::vector<std::string> cats = {"signal-red", "signal-green", "sign"};
  return cats;
}
int traffic_category_index(const std::string& cat);

struct BEVSpec {
  int height_cells = 50;
  int width_cells = 25;
  double meters_per_cell = 1.0;
  double lane_width = 4.0;  // meters
  int feature_channels = 8;

  double extent_x() const { return width_cells * meters_per_cell; }
  double extent_y() const { return height_cells * meters_per_cell; }
  // center of cell (row, col); col indexes x, row indexes y
  Point2 cell_center(int row, int col) const {
    return {(col + 0.5) * meters_per_cell, (row + 0.5) * meters_per_cell};
  }
  void validate() const;
};

struct SceneGraph {
  std::vector<Centerline> centerlines;
  std::vector<std::vector<int>> adjacency;  // G x G, (i,j)=1: end of i meets start of j
  std::vector<TrafficElement> traffic;
  std::vector<std::vector<int>> l2t;  // G x M
  BEVSpec spec;
  uint64_t seed = 0;

  int num_lines() const { return static_cast<int>(centerlines.size()); }
  int num_traffic() const { return static_cast<int>(traffic.size()); }
};

struct GeneratorConfig {
  int max_centerlines = 6;
  double fork_prob = 0.3;
  double merge_prob = 0.15;
  double continue_prob = 0.55;
  double curvature_max = 0.03;  // 1/m
  int max_traffic = 3;
  double connection_tolerance = 0.5;  // meters, one desk-scale BEV cell
  int pts_per_line = 8;               // P_gt
  bool require_topology = false;      // retry deterministically until >=1 edge
  BEVSpec bev;

  void validate() const;
};

// Deterministic procedural road scene for a given (seed, cfg).
SceneGraph sample_scene(uint64_t seed, const GeneratorConfig& cfg);

// 6-class discrete distance transform raster for one centerline.
struct DDTMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> classes;  // row-major, values 0..5
  uint8_t at(int row, int col) const { return classes[static_cast<size_t>(row) * width + col]; }
};
DDTMask ddt_mask(const Centerline& line, const BEVSpec& spec);

// BEV feature raster, (H*W) x feature_channels row-major over cells.
// Channel 0: lane occupancy (+ Gaussian noise), rest: sinusoidal encodings.
Tensor rasterize_bev(const SceneGraph& scene, const BEVSpec& spec, double noise_sigma,
                     uint64_t seed);

// --- geometry helpers ---
std::vector<Point2> densify_polyline(const std::vector<Point2>& pts, double max_spacing);
std::vector<Point2> resample_polyline(const std::vector<Point2>& pts, int n_points);
double point_segment_distance(const Point2& p, const Point2& a, const Point2& b);
double polyline_min_point_distance(const Point2& p, const std::vector<Point2>& pts);

// --- scene file format (one JSON document per scene) ---
std::string scene_to_json(const SceneGraph& scene);
SceneGraph scene_from_json(const std::string& text);

}  // namespace lanetopo

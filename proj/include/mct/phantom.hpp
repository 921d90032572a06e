#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "mct/grid.hpp"

namespace mct {

/// One cartoon region: a closed uniform B-spline boundary and a quadratic
/// interior value scale * (c00 + c10 x + c01 y + c20 x^2 + c11 xy + c02 y^2).
struct PhantomRegion {
  int degree = 3;
  std::vector<Vec2> control_points;
  std::array<double, 6> poly{1, 0, 0, 0, 0, 0};
  double scale = 1.0;

  double value(Vec2 p) const;
  // Curve parameter runs over [0, control_points.size()) periodically.
  Vec2 point(double u) const;
  Vec2 tangent(double u) const;
  double period() const { return static_cast<double>(control_points.size()); }
  void validate() const;
};

struct CartoonPhantom {
  std::uint64_t seed = 0;
  std::vector<PhantomRegion> regions;
};

struct PhantomConfig {
  int min_regions = 1;
  int max_regions = 4;
  int min_control_points = 5;
  int max_control_points = 9;
  double min_amplitude = 0.2;
  double max_amplitude = 1.0;
  int min_degree = 2;
  int max_degree = 4;
  int retry_cap = 200;

  void validate() const;
};

nlohmann::json phantom_to_json(const CartoonPhantom& phantom);
CartoonPhantom phantom_from_json(const nlohmann::json& j);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);

// Closed polyline with samples_per_span points per control span; the last
// vertex repeats the first.
std::vector<Vec2> boundary_polyline(const PhantomRegion& region, int samples_per_span);
bool polyline_self_intersects(std::span<const Vec2> closed);

// Even-odd containment against a closed polyline.
bool polygon_contains(std::span<const Vec2> closed, Vec2 p);

/// Pre-sampled region outlines used for point evaluation.
class PhantomEvaluator {
 public:
  explicit PhantomEvaluator(const CartoonPhantom& phantom, int samples_per_span = 64);
  // Last-writer-wins composite value; 0 outside every region.
  double value(Vec2 p) const;
  int region_at(Vec2 p) const;  // -1 when outside all regions
  const std::vector<Vec2>& outline(std::size_t r) const { return outlines_[r]; }

 private:
  const CartoonPhantom* phantom_;
  std::vector<std::vector<Vec2>> outlines_;
};

CartoonPhantom sample_phantom(std::uint64_t seed, const PhantomConfig& config = {});

// Closed cubic spline approximating a circle, constant interior value.
CartoonPhantom disk_phantom(Vec2 center, double radius, double value = 1.0, int control_points = 64);

GridImage rasterize(const CartoonPhantom& phantom, int n1, int n2, int supersampling = 4);

DigitalWavefrontSet analytic_dwf(const CartoonPhantom& phantom, int n1, int n2, int bins);

struct DatasetItemPaths {
  std::filesystem::path phantom, image, dwf;
};
DatasetItemPaths dataset_item_paths(const std::filesystem::path& dir, int index);

void dataset_generate(int count, std::uint64_t seed, int n1, int n2, int bins,
                      const std::filesystem::path& dir, const PhantomConfig& config = {},
                      int supersampling = 4);

}  // namespace mct

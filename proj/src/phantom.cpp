#include "mct/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mct/io.hpp"
#include "mct/parallel.hpp"

namespace mct {

namespace {

// Cardinal B-spline of degree d, supported on [0, d+1).
double cardinal_bspline(int d, double x) {
  if (x < 0.0 || x >= d + 1) return 0.0;
  if (d == 0) return 1.0;
  return (x * cardinal_bspline(d - 1, x) + (d + 1 - x) * cardinal_bspline(d - 1, x - 1)) / d;
}

double cardinal_bspline_derivative(int d, double x) {
  return cardinal_bspline(d - 1, x) - cardinal_bspline(d - 1, x - 1);
}

double periodic(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0) r += period;
  return r;
}

double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

bool segments_intersect(Vec2 a, Vec2 b, Vec2 c, Vec2 d) {
  const double d1 = cross(b - a, c - a), d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c), d4 = cross(d - c, b - c);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  if (d1 == 0 && on_segment(a, b, c)) return true;
  if (d2 == 0 && on_segment(a, b, d)) return true;
  if (d3 == 0 && on_segment(c, d, a)) return true;
  if (d4 == 0 && on_segment(c, d, b)) return true;
  return false;
}

// Sorted x-coordinates where a closed polyline crosses the horizontal line y.
void row_crossings(std::span<const Vec2> closed, double y, std::vector<double>& xs) {
  xs.clear();
  for (std::size_t i = 0; i + 1 < closed.size(); ++i) {
    const Vec2 a = closed[i], b = closed[i + 1];
    if ((a.y > y) != (b.y > y)) xs.push_back(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
  }
  std::sort(xs.begin(), xs.end());
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

PhantomRegion star_region(std::mt19937_64& rng, const PhantomConfig& cfg) {
  PhantomRegion region;
  const int n = uniform_int(rng, cfg.min_control_points, cfg.max_control_points);
  region.degree = uniform_int(rng, cfg.min_degree, std::min(cfg.max_degree, n - 1));
  const double r0 = uniform(rng, 0.12, 0.42);
  const double reach = 0.95 - 1.4 * r0;
  const Vec2 center{uniform(rng, -reach, reach), uniform(rng, -reach, reach)};
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  for (int j = 0; j < n; ++j) {
    const double a = phase + 2.0 * std::numbers::pi * (j + uniform(rng, -0.3, 0.3)) / n;
    const double r = r0 * uniform(rng, 0.6, 1.4);
    region.control_points.push_back({center.x + r * std::cos(a), center.y + r * std::sin(a)});
  }
  region.poly = {uniform(rng, 0.5, 1.0),  uniform(rng, -0.3, 0.3), uniform(rng, -0.3, 0.3),
                 uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2)};
  region.scale = uniform(rng, cfg.min_amplitude, cfg.max_amplitude);
  return region;
}

}  // namespace

double PhantomRegion::value(Vec2 p) const {
  const auto& c = poly;
  return scale * (c[0] + c[1] * p.x + c[2] * p.y + c[3] * p.x * p.x + c[4] * p.x * p.y +
                  c[5] * p.y * p.y);
}

Vec2 PhantomRegion::point(double u) const {
  const double n = period();
  Vec2 p;
  for (std::size_t j = 0; j < control_points.size(); ++j) {
    const double w = cardinal_bspline(degree, periodic(u - static_cast<double>(j), n));
    if (w != 0.0) p = p + w * control_points[j];
  }
  return p;
}

Vec2 PhantomRegion::tangent(double u) const {
  const double n = period();
  Vec2 t;
  for (std::size_t j = 0; j < control_points.size(); ++j) {
    const double w = cardinal_bspline_derivative(degree, periodic(u - static_cast<double>(j), n));
    if (w != 0.0) t = t + w * control_points[j];
  }
  return t;
}

void PhantomRegion::validate() const {
  if (degree < 1 || degree > 4) throw std::invalid_argument("spline degree must be in [1,4]");
  if (static_cast<int>(control_points.size()) < degree + 1)
    throw std::invalid_argument("closed spline needs at least degree+1 control points");
  for (auto p : control_points)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw std::invalid_argument("non-finite control point");
}

void PhantomConfig::validate() const {
  if (min_regions < 1 || max_regions < min_regions) throw std::invalid_argument("bad region count range");
  if (min_control_points < 3 || max_control_points < min_control_points)
    throw std::invalid_argument("bad control point range");
  if (min_degree < 1 || max_degree > 4 || max_degree < min_degree)
    throw std::invalid_argument("bad spline degree range");
  if (min_control_points < min_degree + 1)
    throw std::invalid_argument("control point count must exceed spline degree");
  if (!(max_amplitude >= min_amplitude)) throw std::invalid_argument("bad amplitude range");
  if (retry_cap < 1) throw std::invalid_argument("retry cap must be positive");
}

nlohmann::json phantom_to_json(const CartoonPhantom& phantom) {
  nlohmann::json regions = nlohmann::json::array();
  for (const auto& r : phantom.regions) {
    nlohmann::json pts = nlohmann::json::array();
    for (auto p : r.control_points) pts.push_back({p.x, p.y});
    regions.push_back({{"degree", r.degree}, {"control_points", pts}, {"poly", r.poly}, {"scale", r.scale}});
  }
  return {{"seed", phantom.seed}, {"regions", regions}};
}

CartoonPhantom phantom_from_json(const nlohmann::json& j) {
  CartoonPhantom phantom;
  phantom.seed = j.value("seed", std::uint64_t{0});
  for (const auto& jr : j.at("regions")) {
    PhantomRegion r;
    r.degree = jr.at("degree").get<int>();
    for (const auto& p : jr.at("control_points")) r.control_points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
    r.poly = jr.at("poly").get<std::array<double, 6>>();
    r.scale = jr.value("scale", 1.0);
    r.validate();
    phantom.regions.push_back(std::move(r));
  }
  return phantom;
}

PhantomConfig phantom_config_from_json(const nlohmann::json& j) {
  PhantomConfig c;
  c.min_regions = j.value("min_regions", c.min_regions);
  c.max_regions = j.value("max_regions", c.max_regions);
  c.min_control_points = j.value("min_control_points", c.min_control_points);
  c.max_control_points = j.value("max_control_points", c.max_control_points);
  c.min_amplitude = j.value("min_amplitude", c.min_amplitude);
  c.max_amplitude = j.value("max_amplitude", c.max_amplitude);
  c.min_degree = j.value("min_degree", c.min_degree);
  c.max_degree = j.value("max_degree", c.max_degree);
  c.retry_cap = j.value("retry_cap", c.retry_cap);
  c.validate();
  return c;
}

std::vector<Vec2> boundary_polyline(const PhantomRegion& region, int samples_per_span) {
  const int total = samples_per_span * static_cast<int>(region.control_points.size());
  std::vector<Vec2> pts(total + 1);
  for (int i = 0; i <= total; ++i) pts[i] = region.point(region.period() * i / total);
  return pts;
}

bool polyline_self_intersects(std::span<const Vec2> closed) {
  const std::size_t segs = closed.size() - 1;
  for (std::size_t i = 0; i < segs; ++i) {
    for (std::size_t j = i + 2; j < segs; ++j) {
      if (i == 0 && j == segs - 1) continue;  // shares the closing vertex
      if (segments_intersect(closed[i], closed[i + 1], closed[j], closed[j + 1])) return true;
    }
  }
  return false;
}

bool polygon_contains(std::span<const Vec2> closed, Vec2 p) {
  bool inside = false;
  for (std::size_t i = 0; i + 1 < closed.size(); ++i) {
    const Vec2 a = closed[i], b = closed[i + 1];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (x < p.x) inside = !inside;
    }
  }
  return inside;
}

PhantomEvaluator::PhantomEvaluator(const CartoonPhantom& phantom, int samples_per_span)
    : phantom_(&phantom) {
  for (const auto& r : phantom.regions) outlines_.push_back(boundary_polyline(r, samples_per_span));
}

int PhantomEvaluator::region_at(Vec2 p) const {
  for (int r = static_cast<int>(outlines_.size()) - 1; r >= 0; --r)
    if (polygon_contains(outlines_[r], p)) return r;
  return -1;
}

double PhantomEvaluator::value(Vec2 p) const {
  const int r = region_at(p);
  return r < 0 ? 0.0 : phantom_->regions[r].value(p);
}

CartoonPhantom sample_phantom(std::uint64_t seed, const PhantomConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  CartoonPhantom phantom;
  phantom.seed = seed;
  const int count = uniform_int(rng, config.min_regions, config.max_regions);
  for (int r = 0; r < count; ++r) {
    bool accepted = false;
    for (int attempt = 0; attempt < config.retry_cap && !accepted; ++attempt) {
      PhantomRegion region = star_region(rng, config);
      if (!polyline_self_intersects(boundary_polyline(region, 32))) {
        phantom.regions.push_back(std::move(region));
        accepted = true;
      }
    }
    if (!accepted) throw std::runtime_error("phantom sampling exceeded retry cap");
  }
  return phantom;
}

CartoonPhantom disk_phantom(Vec2 center, double radius, double value, int control_points) {
  PhantomRegion region;
  region.degree = 3;
  for (int j = 0; j < control_points; ++j) {
    const double a = 2.0 * std::numbers::pi * j / control_points;
    region.control_points.push_back({std::cos(a), std::sin(a)});
  }
  // Rescale so the mean curve radius equals the requested radius.
  double mean = 0.0;
  const int probes = 16 * control_points;
  for (int i = 0; i < probes; ++i) {
    const Vec2 p = region.point(region.period() * i / probes);
    mean += std::hypot(p.x, p.y);
  }
  mean /= probes;
  for (auto& p : region.control_points) p = center + (radius / mean) * p;
  region.poly = {1, 0, 0, 0, 0, 0};
  region.scale = value;
  CartoonPhantom phantom;
  phantom.regions.push_back(std::move(region));
  return phantom;
}

GridImage rasterize(const CartoonPhantom& phantom, int n1, int n2, int supersampling) {
  if (n1 < 16 || n2 < 16) throw std::invalid_argument("rasterize needs n1, n2 >= 16");
  if (supersampling < 1) throw std::invalid_argument("supersampling must be >= 1");
  for (const auto& r : phantom.regions) r.validate();

  GridImage image(n1, n2);
  PhantomEvaluator eval(phantom);
  const std::size_t regions = phantom.regions.size();
  if (regions == 0) return image;
  const double hx = image.hx(), hy = image.hy();
  const int s = supersampling;
  const double inv = 1.0 / (s * s);

  parallel_for(n2, [&](std::int64_t i2) {
    std::vector<std::vector<double>> crossings(regions);
    std::vector<double> row(n1, 0.0);
    for (int a = 0; a < s; ++a) {
      const double y = -1.0 + i2 * hy + ((a + 0.5) / s - 0.5) * hy;
      for (std::size_t r = 0; r < regions; ++r) row_crossings(eval.outline(r), y, crossings[r]);
      for (int i1 = 0; i1 < n1; ++i1) {
        for (int b = 0; b < s; ++b) {
          const double x = -1.0 + i1 * hx + ((b + 0.5) / s - 0.5) * hx;
          for (std::size_t r = regions; r-- > 0;) {
            const auto& xs = crossings[r];
            const auto below = std::lower_bound(xs.begin(), xs.end(), x) - xs.begin();
            if (below % 2 == 1) {
              row[i1] += phantom.regions[r].value({x, y});
              break;
            }
          }
        }
      }
    }
    for (int i1 = 0; i1 < n1; ++i1) image(i1, static_cast<int>(i2)) = row[i1] * inv;
  });
  return image;
}

DigitalWavefrontSet analytic_dwf(const CartoonPhantom& phantom, int n1, int n2, int bins) {
  DigitalWavefrontSet dwf(n1, n2, bins);
  if (phantom.regions.empty()) return dwf;
  PhantomEvaluator eval(phantom);
  const double hx = 2.0 / (n1 - 1), hy = 2.0 / (n2 - 1);
  const double h = std::min(hx, hy);
  const double probe = 0.25 * h;

  for (const auto& region : phantom.regions) {
    region.validate();
    // Parameter step keeps consecutive samples at most h/8 apart.
    double max_speed = 0.0;
    const int probes = 64 * static_cast<int>(region.control_points.size());
    for (int i = 0; i < probes; ++i) {
      const Vec2 t = region.tangent(region.period() * i / probes);
      max_speed = std::max(max_speed, std::hypot(t.x, t.y));
    }
    const double du = h / (8.0 * std::max(max_speed, 1e-12));
    const auto samples = static_cast<long>(std::ceil(region.period() / du));
    for (long i = 0; i < samples; ++i) {
      const double u = region.period() * static_cast<double>(i) / static_cast<double>(samples);
      const Vec2 p = region.point(u);
      const int i1 = static_cast<int>(std::lround((p.x + 1.0) / hx));
      const int i2 = static_cast<int>(std::lround((p.y + 1.0) / hy));
      if (i1 < 0 || i1 >= n1 || i2 < 0 || i2 >= n2) continue;
      const Vec2 t = region.tangent(u);
      const double len = std::hypot(t.x, t.y);
      if (len == 0.0) continue;
      const Vec2 normal{-t.y / len, t.x / len};
      const double jump = eval.value(p + probe * normal) - eval.value(p - probe * normal);
      if (std::abs(jump) <= 1e-9) continue;
      dwf.set(i1, i2, dwf.bin_of(std::atan2(normal.y, normal.x)));
    }
  }
  return dwf;
}

DatasetItemPaths dataset_item_paths(const std::filesystem::path& dir, int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%05d", index);
  return {dir / ("phantom_" + std::string(buf) + ".json"), dir / ("image_" + std::string(buf) + ".mct"),
          dir / ("dwf_" + std::string(buf) + ".mct")};
}

void dataset_generate(int count, std::uint64_t seed, int n1, int n2, int bins,
                      const std::filesystem::path& dir, const PhantomConfig& config, int supersampling) {
  if (count < 0) throw std::invalid_argument("dataset count must be non-negative");
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    const CartoonPhantom phantom = sample_phantom(mix_seed(seed, static_cast<std::uint64_t>(i)), config);
    const auto paths = dataset_item_paths(dir, i);
    io::write_text(paths.phantom, phantom_to_json(phantom).dump() + "\n");
    io::write_image(paths.image, rasterize(phantom, n1, n2, supersampling));
    io::write_dwf(paths.dwf, analytic_dwf(phantom, n1, n2, bins));
  }
}

}  // namespace mct

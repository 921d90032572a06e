#include "mct/radon.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mct/parallel.hpp"

namespace mct {

namespace {

constexpr int kAngleChunks = 16;

struct RayStencil {
  double hx, hy, dt;
  int n1, n2;

  // Visits every bilinear weight of the samples t_j = j*dt on the line
  // s*omega + t*omega_perp.
  template <class F>
  void visit(double s, double cos_t, double sin_t, F&& fn) const {
    const double px = s * cos_t, py = s * sin_t;
    const double dx = -sin_t, dy = cos_t;
    double tmin = -1e300, tmax = 1e300;
    auto slab = [&](double p, double d, double lo, double hi) {
      if (std::abs(d) < 1e-15) {
        if (p < lo || p > hi) tmin = 1, tmax = 0;
        return;
      }
      double a = (lo - p) / d, b = (hi - p) / d;
      if (a > b) std::swap(a, b);
      tmin = std::max(tmin, a);
      tmax = std::min(tmax, b);
    };
    slab(px, dx, -1.0 - hx, 1.0 + hx);
    slab(py, dy, -1.0 - hy, 1.0 + hy);
    if (tmin > tmax) return;
    const long j0 = static_cast<long>(std::ceil(tmin / dt));
    const long j1 = static_cast<long>(std::floor(tmax / dt));
    for (long j = j0; j <= j1; ++j) {
      const double t = static_cast<double>(j) * dt;
      const double u = (px + t * dx + 1.0) / hx;
      const double v = (py + t * dy + 1.0) / hy;
      const double fu = std::floor(u), fv = std::floor(v);
      const int i = static_cast<int>(fu), k = static_cast<int>(fv);
      const double a = u - fu, b = v - fv;
      const bool i0 = i >= 0 && i < n1, i1 = i + 1 >= 0 && i + 1 < n1;
      const bool k0 = k >= 0 && k < n2, k1 = k + 1 >= 0 && k + 1 < n2;
      if (i0 && k0) fn(static_cast<std::size_t>(k) * n1 + i, (1 - a) * (1 - b));
      if (i1 && k0) fn(static_cast<std::size_t>(k) * n1 + i + 1, a * (1 - b));
      if (i0 && k1) fn(static_cast<std::size_t>(k + 1) * n1 + i, (1 - a) * b);
      if (i1 && k1) fn(static_cast<std::size_t>(k + 1) * n1 + i + 1, a * b);
    }
  }
};

RayStencil stencil_for(const Geometry& geo) {
  const double hx = 2.0 / (geo.n1 - 1), hy = 2.0 / (geo.n2 - 1);
  return {hx, hy, 0.5 * std::min(hx, hy), geo.n1, geo.n2};
}

}  // namespace

Geometry Geometry::uniform(int n, int m2, int m1) {
  Geometry geo;
  geo.n1 = geo.n2 = n;
  geo.m1 = m1 > 0 ? m1 : static_cast<int>(std::ceil(kDetectorHalfWidth * n));
  for (int l = 0; l < m2; ++l) geo.angles.push_back(std::numbers::pi * l / m2);
  geo.mask.assign(m2, true);
  geo.validate();
  return geo;
}

Geometry Geometry::from_sinogram(const Sinogram& sino, int n1, int n2) {
  Geometry geo{n1, n2, sino.m1(), sino.angles(), sino.mask()};
  geo.validate();
  return geo;
}

double Geometry::detector_spacing() const { return 2.0 * kDetectorHalfWidth / (m1 - 1); }

double Geometry::detector(int k) const { return -kDetectorHalfWidth + k * detector_spacing(); }

std::vector<double> Geometry::angle_weights() const {
  const int m = m2();
  std::vector<double> w(m);
  if (m == 1) {
    w[0] = std::numbers::pi;
    return w;
  }
  for (int l = 0; l < m; ++l) {
    const double prev = l > 0 ? angles[l - 1] : angles[m - 1] - std::numbers::pi;
    const double next = l + 1 < m ? angles[l + 1] : angles[0] + std::numbers::pi;
    w[l] = 0.5 * (next - prev);
  }
  return w;
}

Sinogram Geometry::empty_sinogram() const { return Sinogram(m1, angles, mask); }

void Geometry::validate() const {
  if (n1 < 2 || n2 < 2) throw ShapeError("geometry image shape must be at least 2x2");
  if (m1 < 2) throw ShapeError("geometry needs at least 2 detectors");
  if (angles.empty()) throw ShapeError("geometry needs at least one angle");
  if (mask.size() != angles.size()) throw ShapeError("mask length differs from angle count");
  for (std::size_t l = 0; l < angles.size(); ++l) {
    if (angles[l] < 0.0 || angles[l] >= std::numbers::pi) throw ShapeError("angles must lie in [0, pi)");
    if (l > 0 && !(angles[l] > angles[l - 1])) throw ShapeError("angles must be strictly increasing");
  }
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; }))
    throw ShapeError("geometry mask has no available angle");
}

bool Geometry::matches(const Sinogram& sino) const {
  return sino.m1() == m1 && sino.angles() == angles;
}

Sinogram radon(const GridImage& f, const Geometry& geo) {
  geo.validate();
  if (!geo.matches(f)) throw ShapeError("image shape does not match geometry");
  Sinogram g = geo.empty_sinogram();
  const RayStencil ray = stencil_for(geo);
  const auto fv = f.values();
  const double ds = geo.detector_spacing();
  parallel_for(geo.m2(), [&](std::int64_t l) {
    if (!geo.mask[l]) return;
    const double c = std::cos(geo.angles[l]), s = std::sin(geo.angles[l]);
    for (int k = 0; k < geo.m1; ++k) {
      double acc = 0.0;
      ray.visit(-kDetectorHalfWidth + k * ds, c, s, [&](std::size_t idx, double w) { acc += w * fv[idx]; });
      g(k, static_cast<int>(l)) = acc * ray.dt;
    }
  });
  return g;
}

namespace {

// sum_l row_scale[l] * dt * R_l^T g_l, accumulated over fixed angle chunks.
GridImage transpose_scaled(const Sinogram& g, const Geometry& geo, const std::vector<double>& row_scale) {
  geo.validate();
  if (!geo.matches(g)) throw ShapeError("sinogram layout does not match geometry");
  const RayStencil ray = stencil_for(geo);
  const double ds = geo.detector_spacing();
  const std::size_t pixels = static_cast<std::size_t>(geo.n1) * geo.n2;
  const int m2 = geo.m2();

  std::vector<std::vector<double>> partial(kAngleChunks, std::vector<double>(pixels, 0.0));
  parallel_for(kAngleChunks, [&](std::int64_t chunk) {
    auto& acc = partial[chunk];
    for (int l = static_cast<int>(chunk); l < m2; l += kAngleChunks) {
      if (!geo.mask[l] || !g.available(l)) continue;
      const double c = std::cos(geo.angles[l]), s = std::sin(geo.angles[l]);
      for (int k = 0; k < geo.m1; ++k) {
        const double val = g(k, l) * ray.dt * row_scale[l];
        if (val == 0.0) continue;
        ray.visit(-kDetectorHalfWidth + k * ds, c, s, [&](std::size_t idx, double w) { acc[idx] += w * val; });
      }
    }
  });
  GridImage out(geo.n1, geo.n2);
  auto ov = out.values();
  for (const auto& acc : partial)
    for (std::size_t i = 0; i < pixels; ++i) ov[i] += acc[i];
  return out;
}

std::vector<double> backprojection_weights(const Geometry& geo) {
  auto w = geo.angle_weights();
  const double scale = geo.detector_spacing() * (geo.n1 - 1) * (geo.n2 - 1) / 4.0;
  for (double& v : w) v *= scale;
  return w;
}

}  // namespace

GridImage backproject(const Sinogram& g, const Geometry& geo) {
  return transpose_scaled(g, geo, backprojection_weights(geo));
}

GridImage radon_transpose(const Sinogram& g, const Geometry& geo) {
  return transpose_scaled(g, geo, std::vector<double>(geo.m2(), 1.0));
}

Sinogram backproject_transpose(const GridImage& v, const Geometry& geo) {
  Sinogram g = radon(v, geo);
  const auto w = backprojection_weights(geo);
  for (int l = 0; l < geo.m2(); ++l)
    for (int k = 0; k < geo.m1; ++k) g(k, l) *= w[l];
  return g;
}

double sinogram_inner(const Sinogram& a, const Sinogram& b, const Geometry& geo) {
  if (!geo.matches(a) || !geo.matches(b)) throw ShapeError("sinogram layout does not match geometry");
  const auto w = geo.angle_weights();
  const double ds = geo.detector_spacing();
  double acc = 0.0;
  for (int l = 0; l < geo.m2(); ++l) {
    double row = 0.0;
    for (int k = 0; k < geo.m1; ++k) row += a(k, l) * b(k, l);
    acc += row * w[l];
  }
  return acc * ds;
}

double image_inner(const GridImage& a, const GridImage& b) {
  if (!a.same_shape(b)) throw ShapeError("image shapes differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.values()[i] * b.values()[i];
  return acc * a.hx() * a.hy();
}

namespace {

std::vector<bool> removed_angles(const std::vector<double>& angles, const Restriction& mode) {
  const int m2 = static_cast<int>(angles.size());
  std::vector<bool> removed(m2, false);
  if (const auto* la = std::get_if<LimitedAngle>(&mode)) {
    if (la->width < 0.0 || la->width >= std::numbers::pi)
      throw std::invalid_argument("wedge width must lie in [0, pi)");
    const double start = la->center - 0.5 * la->width;
    for (int l = 0; l < m2; ++l) {
      const double d = wrap_pi(angles[l] - start + 1e-9);
      removed[l] = d < la->width;
    }
  } else {
    const int count = std::get<SparseView>(mode).count;
    if (count < 1 || count >= m2) throw std::invalid_argument("sparse-view count must be in [1, m2)");
    std::vector<bool> keep(m2, false);
    for (int j = 0; j < count; ++j) keep[static_cast<std::size_t>(j) * m2 / count] = true;
    for (int l = 0; l < m2; ++l) removed[l] = !keep[l];
  }
  return removed;
}

}  // namespace

Sinogram restrict_angles(const Sinogram& g, const Restriction& mode) {
  const auto removed = removed_angles(g.angles(), mode);
  int remaining = 0;
  for (int l = 0; l < g.m2(); ++l) remaining += g.available(l) && !removed[l];
  if (remaining == 0) throw std::invalid_argument("restriction removes every available angle");
  Sinogram out = g;
  for (int l = 0; l < g.m2(); ++l)
    if (removed[l]) out.mask_out(l);
  return out;
}

Geometry restrict_geometry(const Geometry& geo, const Restriction& mode) {
  const auto removed = removed_angles(geo.angles, mode);
  Geometry out = geo;
  for (int l = 0; l < geo.m2(); ++l)
    if (removed[l]) out.mask[l] = false;
  out.validate();
  return out;
}

Restriction restriction_from_json(const nlohmann::json& j) {
  const std::string mode = j.at("mode").get<std::string>();
  constexpr double deg = std::numbers::pi / 180.0;
  if (mode == "limited_angle")
    return LimitedAngle{j.value("center_deg", 90.0) * deg, j.at("width_deg").get<double>() * deg};
  if (mode == "sparse_view") return SparseView{j.at("count").get<int>()};
  throw std::invalid_argument("unknown restriction mode '" + mode + "'");
}

std::size_t ramp_padded_length(int m1) {
  std::size_t p = 1;
  while (p < static_cast<std::size_t>(2 * m1)) p <<= 1;
  return p;
}

std::vector<double> ramp_response(int padded_length, double detector_spacing, RampWindow window) {
  const int half = padded_length / 2;
  std::vector<double> h(half + 1);
  for (int j = 0; j <= half; ++j) {
    // |sigma|/(2 pi) with sigma = 2 pi j / (P ds)
    double v = j / (padded_length * detector_spacing);
    if (window == RampWindow::hann) v *= 0.5 * (1.0 + std::cos(std::numbers::pi * j / half));
    h[j] = v;
  }
  return h;
}

Sinogram ramp_filter(const Sinogram& g, RampWindow window) {
  const int m1 = g.m1();
  const int p = static_cast<int>(ramp_padded_length(m1));
  const auto h = ramp_response(p, g.detector_spacing(), window);

  double* in = fftw_alloc_real(p);
  fftw_complex* spec = fftw_alloc_complex(p / 2 + 1);
  fftw_plan fwd = fftw_plan_dft_r2c_1d(p, in, spec, FFTW_ESTIMATE);
  fftw_plan inv = fftw_plan_dft_c2r_1d(p, spec, in, FFTW_ESTIMATE);

  Sinogram out = g;
  for (int l = 0; l < g.m2(); ++l) {
    if (!g.available(l)) continue;
    std::fill(in, in + p, 0.0);
    for (int k = 0; k < m1; ++k) in[k] = g(k, l);
    fftw_execute(fwd);
    for (int j = 0; j <= p / 2; ++j) {
      spec[j][0] *= h[j];
      spec[j][1] *= h[j];
    }
    fftw_execute(inv);
    for (int k = 0; k < m1; ++k) out(k, l) = in[k] / p;
  }

  fftw_destroy_plan(fwd);
  fftw_destroy_plan(inv);
  fftw_free(in);
  fftw_free(spec);
  return out;
}

Sinogram add_noise(const Sinogram& g, double sigma_rel, std::uint64_t seed) {
  if (sigma_rel < 0.0) throw std::invalid_argument("sigma_rel must be non-negative");
  Sinogram out = g;
  if (sigma_rel == 0.0) return out;
  double peak = 0.0;
  for (int l = 0; l < g.m2(); ++l)
    if (g.available(l))
      for (int k = 0; k < g.m1(); ++k) peak = std::max(peak, std::abs(g(k, l)));
  const double sigma = sigma_rel * peak;
  if (sigma == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int l = 0; l < g.m2(); ++l)
    if (g.available(l))
      for (int k = 0; k < g.m1(); ++k) out(k, l) += noise(rng);
  return out;
}

}  // namespace mct

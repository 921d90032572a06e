#include "mct/wfprop.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include "mct/parallel.hpp"
#include "mct/softprop.hpp"

namespace mct {

namespace {

constexpr double kPi = std::numbers::pi;

// Scale s_ij with theta = sum (beta_ij / s_ij) Delta_ij, in basis order.
std::array<double, 9> basis_scales(double h) {
  return {1.0, 2 * h, 2 * h, 4 * h * h, h * h, h * h, 2 * h * h * h, 2 * h * h * h, h * h * h * h};
}

const Eigen::Matrix<double, 9, 9>& basis_inverse() {
  static const Eigen::Matrix<double, 9, 9> inv = [] {
    Eigen::Matrix<double, 9, 9> b;
    const auto& basis = filter_basis();
    for (int j = 0; j < 9; ++j)
      for (int i = 0; i < 9; ++i) b(i, j) = basis[j][i];
    // The inverse is dyadic (multiples of 1/16); snap it to exact values.
    return Eigen::Matrix<double, 9, 9>((b.fullPivLu().inverse() * 16.0).array().round() / 16.0);
  }();
  return inv;
}

FilterBasisCoeffs from_values(const std::array<double, 9>& v, double h) {
  return {v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], h};
}

double resolve(double eps, double scale) { return eps >= 0.0 ? eps : 1e-3 * scale; }

bool pixel_has_bins(const DigitalWavefrontSet& d, int i1, int i2) { return d.pixel_marked(i1, i2); }

DigitalWavefrontSet union_of(const std::vector<const DigitalWavefrontSet*>& parts, const DigitalWavefrontSet& shape) {
  DigitalWavefrontSet out(shape.n1(), shape.n2(), shape.bins(), shape.mode());
  auto o = out.data();
  for (const auto* p : parts) {
    auto s = p->data();
    if (out.mode() == DwfMode::hard) {
      for (std::size_t i = 0; i < o.size(); ++i)
        if (s[i] > 0.5) o[i] = 1.0;
    } else {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = o[i] + s[i] - o[i] * s[i];
    }
  }
  return out;
}

DigitalWavefrontSet union_channels(const std::vector<DigitalWavefrontSet>& ch) {
  std::vector<const DigitalWavefrontSet*> parts;
  for (const auto& c : ch) parts.push_back(&c);
  return union_of(parts, ch.front());
}

Filter3 filter_at(const ResNetParams& p, int layer, int out, int in) {
  Filter3 f;
  std::copy_n(p.weights[layer].begin() + static_cast<std::ptrdiff_t>(p.filter_offset(out, in, layer)), 9, f.begin());
  return f;
}

double horner(const std::vector<double>& c, double r) {
  double v = 0;
  for (auto it = c.rbegin(); it != c.rend(); ++it) v = v * r + *it;
  return v;
}

// Sign-changing real roots of sum c[k] r^k on [lo, hi], isolated between critical points.
std::vector<double> roots_in(std::vector<double> c, double lo, double hi) {
  while (!c.empty() && c.back() == 0.0) c.pop_back();
  std::vector<double> out;
  if (c.size() < 2) return out;
  if (c.size() == 2) {
    const double r = -c[0] / c[1];
    if (r >= lo && r <= hi) out.push_back(r);
    return out;
  }
  std::vector<double> dc(c.size() - 1);
  for (std::size_t k = 1; k < c.size(); ++k) dc[k - 1] = static_cast<double>(k) * c[k];
  std::vector<double> pts = {lo};
  for (double r : roots_in(dc, lo, hi)) pts.push_back(r);
  pts.push_back(hi);
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) {
    double a = pts[k], b = pts[k + 1];
    double fa = horner(c, a);
    const double fb = horner(c, b);
    if (fa == 0.0) {
      out.push_back(a);
      continue;
    }
    if ((fa < 0) == (fb < 0) || fb == 0.0) continue;
    for (int it = 0; it < 200 && b - a > 1e-15 * b; ++it) {
      const double m = 0.5 * (a + b);
      const double fm = horner(c, m);
      if ((fm < 0) == (fa < 0)) a = m, fa = fm;
      else b = m;
    }
    out.push_back(0.5 * (a + b));
  }
  if (horner(c, hi) == 0.0) out.push_back(hi);
  return out;
}

void require_grid(const DigitalWavefrontSet& d, int n1, int n2, int bins) {
  if (d.n1() != n1 || d.n2() != n2 || d.bins() != bins) throw ShapeError("DWF grid mismatch");
}

}  // namespace

double FilterBasisCoeffs::max_abs() const {
  double m = 0;
  for (double v : values()) m = std::max(m, std::abs(v));
  return m;
}

const std::array<Filter3, 9>& filter_basis() {
  static const std::array<Filter3, 9> basis = {{
      {0, 0, 0, 0, 1, 0, 0, 0, 0},      // 11
      {0, 1, 0, 0, 0, 0, 0, -1, 0},     // 12
      {0, 0, 0, 1, 0, -1, 0, 0, 0},     // 21
      {1, 0, -1, 0, 0, 0, -1, 0, 1},    // 22
      {0, -1, 0, 0, 2, 0, 0, -1, 0},    // 13
      {0, 0, 0, 1, -2, 1, 0, 0, 0},     // 31
      {1, -2, 1, 0, 0, 0, -1, 2, -1},   // 23
      {1, 0, -1, -2, 0, 2, 1, 0, -1},   // 32
      {-1, 2, -1, 2, -4, 2, -1, 2, -1}  // 33
  }};
  return basis;
}

FilterBasisCoeffs decompose_filter(const Filter3& theta, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grid step must be positive");
  const auto& inv = basis_inverse();
  const auto s = basis_scales(h);
  std::array<double, 9> beta;
  for (int j = 0; j < 9; ++j) {
    long double a = 0;
    for (int i = 0; i < 9; ++i) a += static_cast<long double>(inv(j, i)) * theta[i];
    beta[j] = static_cast<double>(a * s[j]);
  }
  return from_values(beta, h);
}

Filter3 recompose_filter(const FilterBasisCoeffs& coeffs) {
  const auto s = basis_scales(coeffs.h);
  const auto beta = coeffs.values();
  const auto& basis = filter_basis();
  std::array<long double, 9> acc{};
  for (int j = 0; j < 9; ++j) {
    const long double a = static_cast<long double>(beta[j]) / s[j];
    for (int i = 0; i < 9; ++i) acc[i] += a * basis[j][i];
  }
  Filter3 out;
  for (int i = 0; i < 9; ++i) out[i] = static_cast<double>(acc[i]);
  return out;
}

double symbol_eval(const FilterBasisCoeffs& c, double x1, double x2) {
  return c.b11 + c.b12 * x2 + c.b21 * x1 + c.b22 * x1 * x2 + c.b13 * x2 * x2 + c.b31 * x1 * x1 +
         c.b23 * x2 * x2 * x1 + c.b32 * x1 * x1 * x2 + c.b33 * x1 * x1 * x2 * x2;
}

EllipticityResult is_elliptic(const FilterBasisCoeffs& coeffs, double tolerance) {
  return is_elliptic(coeffs, tolerance, {});
}

EllipticityResult is_elliptic(const FilterBasisCoeffs& coeffs, double tolerance, const SymbolGrid& grid_in) {
  if (!(tolerance > 0.0)) throw std::invalid_argument("tolerance must be positive");
  SymbolGrid grid = grid_in;
  if (grid.radii.empty())
    for (int k = -3; k <= 3; ++k) grid.radii.push_back(std::pow(10.0, k));
  const int D = grid.directions, R = static_cast<int>(grid.radii.size());
  std::vector<double> p(static_cast<std::size_t>(D) * R);
  auto at = [&](int d, int r) -> double& { return p[static_cast<std::size_t>(d) * R + r]; };
  auto point = [&](int d, int r) -> std::array<double, 2> {
    const double a = 2 * kPi * d / D;
    return {grid.radii[r] * std::cos(a), grid.radii[r] * std::sin(a)};
  };
  for (int d = 0; d < D; ++d)
    for (int r = 0; r < R; ++r) {
      const auto xi = point(d, r);
      at(d, r) = symbol_eval(coeffs, xi[0], xi[1]);
    }
  const double limit = tolerance * (1.0 + coeffs.max_abs());
  EllipticityResult res;
  res.elliptic = true;
  res.min_abs = 1e300;
  double best_bad = 1e300;
  auto flag = [&](int d, int r) {
    const double v = std::abs(at(d, r));
    if (v < best_bad) best_bad = v, res.witness = point(d, r);
    res.elliptic = false;
  };
  int arg_d = 0, arg_r = 0;
  for (int d = 0; d < D; ++d)
    for (int r = 0; r < R; ++r) {
      const double v = at(d, r);
      if (std::abs(v) < res.min_abs) res.min_abs = std::abs(v), arg_d = d, arg_r = r;
      if (std::abs(v) <= limit) flag(d, r);
      const double around = at((d + 1) % D, r);
      if ((v < 0) != (around < 0)) flag(std::abs(v) <= std::abs(around) ? d : (d + 1) % D, r);
      if (r + 1 < R) {
        const double out = at(d, r + 1);
        if ((v < 0) != (out < 0)) {
          if (std::abs(v) <= std::abs(out)) flag(d, r);
          else flag(d, r + 1);
        }
      }
    }
  // Exact radial sign changes between sampled radii.
  const double r_lo = *std::min_element(grid.radii.begin(), grid.radii.end());
  const double r_hi = *std::max_element(grid.radii.begin(), grid.radii.end());
  for (int d = 0; d < D; ++d) {
    const double a = 2 * kPi * d / D, u1 = std::cos(a), u2 = std::sin(a);
    const FilterBasisCoeffs& c = coeffs;
    const std::vector<double> poly = {c.b11, c.b12 * u2 + c.b21 * u1, c.b22 * u1 * u2 + c.b13 * u2 * u2 + c.b31 * u1 * u1,
                                      c.b23 * u2 * u2 * u1 + c.b32 * u1 * u1 * u2, c.b33 * u1 * u1 * u2 * u2};
    for (double r : roots_in(poly, r_lo, r_hi)) {
      const double v = std::abs(horner(poly, r));
      if (v < best_bad) best_bad = v, res.witness = {r * u1, r * u2};
      res.elliptic = false;
    }
  }
  if (res.elliptic) res.witness = point(arg_d, arg_r);
  return res;
}

std::array<std::size_t, 4> Classification::histogram() const {
  std::array<std::size_t, 4> h{};
  for (auto c : classes) ++h[static_cast<int>(c)];
  return h;
}

Classification classify_pixels(const GridImage& feature, Thresholds thresholds) {
  return classify_pixels(feature, thresholds, spacing_of(feature));
}

Classification classify_pixels(const GridImage& f, Thresholds thresholds, Spacing spacing) {
  const int n1 = f.n1(), n2 = f.n2();
  Classification out;
  out.n1 = n1;
  out.n2 = n2;
  out.classes.resize(f.size());
  out.gx.resize(f.size());
  out.gy.resize(f.size());
  double vmax = 0, gmax = 0;
  for (double v : f.values()) vmax = std::max(vmax, std::abs(v));
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const int il = std::max(i - 1, 0), ir = std::min(i + 1, n1 - 1);
      const int jd = std::max(j - 1, 0), ju = std::min(j + 1, n2 - 1);
      const std::size_t id = f.index(i, j);
      out.gx[id] = (f(ir, j) - f(il, j)) / ((ir - il) * spacing.hx);
      out.gy[id] = (f(i, ju) - f(i, jd)) / ((ju - jd) * spacing.hy);
      gmax = std::max(gmax, std::hypot(out.gx[id], out.gy[id]));
    }
  out.eps_val = resolve(thresholds.eps_val, vmax);
  out.eps_grad = resolve(thresholds.eps_grad, gmax);
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      double lo = 1e300, hi = -1e300;
      for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
          const double v = f(std::clamp(i + di, 0, n1 - 1), std::clamp(j + dj, 0, n2 - 1));
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      const std::size_t id = f.index(i, j);
      PixelClass c;
      if (lo > out.eps_val) c = PixelClass::int_supp_plus;
      else if (hi <= out.eps_val && !(lo < 0.0 && hi > 0.0)) c = PixelClass::supp_neg_zero;
      else if (std::hypot(out.gx[id], out.gy[id]) > out.eps_grad) c = PixelClass::R;
      else c = PixelClass::C_or_S;
      out.classes[id] = c;
    }
  return out;
}

ConvPropagation prop_conv(const DigitalWavefrontSet& dwf, const FilterBasisCoeffs& coeffs, double tolerance) {
  if (coeffs.max_abs() == 0.0) return {DigitalWavefrontSet(dwf.n1(), dwf.n2(), dwf.bins(), dwf.mode()), false};
  return {dwf, !is_elliptic(coeffs, tolerance).elliptic};
}

DigitalWavefrontSet prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Thresholds thresholds) {
  return prop_relu(dwf, feature, thresholds, spacing_of(feature));
}

DigitalWavefrontSet prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Thresholds thresholds,
                              Spacing spacing, Classification* classes) {
  if (dwf.n1() != feature.n1() || dwf.n2() != feature.n2()) throw ShapeError("DWF and feature grids differ");
  if (dwf.mode() == DwfMode::soft && !classes) return soft_prop_relu(dwf, feature, spacing);
  Classification cls = classify_pixels(feature, thresholds, spacing);
  DigitalWavefrontSet out(dwf.n1(), dwf.n2(), dwf.bins(), dwf.mode());
  const int M = dwf.bins();
  for (int j = 0; j < dwf.n2(); ++j)
    for (int i = 0; i < dwf.n1(); ++i) {
      const std::size_t id = feature.index(i, j);
      PixelClass c = cls.classes[id];
      if (c == PixelClass::R && pixel_has_bins(dwf, i, j)) c = cls.classes[id] = PixelClass::C_or_S;
      switch (c) {
        case PixelClass::int_supp_plus:
          for (int k = 0; k < M; ++k) out(i, j, k) = dwf(i, j, k);
          break;
        case PixelClass::supp_neg_zero: break;
        case PixelClass::R: out.set(i, j, out.bin_of(std::atan2(cls.gy[id], cls.gx[id]))); break;
        case PixelClass::C_or_S: out.set_all_bins(i, j); break;
      }
    }
  if (classes) *classes = std::move(cls);
  return out;
}

DigitalWavefrontSet prop_sum(const DigitalWavefrontSet& a, const DigitalWavefrontSet& b) {
  if (!a.same_shape(b)) throw ShapeError("grid mismatch");
  const DwfMode mode = a.mode() == DwfMode::hard && b.mode() == DwfMode::hard ? DwfMode::hard : DwfMode::soft;
  DigitalWavefrontSet out(a.n1(), a.n2(), a.bins(), mode);
  auto o = out.data();
  auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = mode == DwfMode::hard ? ((x[i] > 0.5 || y[i] > 0.5) ? 1.0 : 0.0) : x[i] + y[i] - x[i] * y[i];
  return out;
}

std::vector<DigitalWavefrontSet> prop_resnet(const std::vector<DigitalWavefrontSet>& dwf_in, const ResNetParams& params,
                                             const ResNetCapture& cap, Spacing spacing, const PropOptions& options,
                                             PropagationTrace* trace, const std::string& name) {
  if (static_cast<int>(dwf_in.size()) != params.plan[0]) throw ShapeError("channel-count mismatch");
  if (cap.input.channels != params.plan[0] || cap.pre[0].channels != params.plan[1])
    throw ShapeError("capture does not match the parameters");
  const int W = cap.input.width, H = cap.input.height, M = dwf_in.front().bins();
  for (const auto& d : dwf_in) require_grid(d, W, H, M);
  if (trace && trace->snapshots.empty()) trace->snapshots.push_back(union_channels(dwf_in));

  std::vector<DigitalWavefrontSet> cur = dwf_in;
  for (int j = 0; j < 4; ++j) {
    const int cin = params.plan[j], cout = params.plan[j + 1];
    PropagationTrace::Layer layer;
    layer.name = name + ".layer" + std::to_string(j + 1);
    std::vector<std::vector<bool>> live(cout, std::vector<bool>(cin, false));
    for (int o = 0; o < cout; ++o)
      for (int i = 0; i < cin; ++i) {
        const auto coeffs = decompose_filter(filter_at(params, j, o, i), spacing.hx);
        if (coeffs.max_abs() == 0.0) {
          ++layer.zero_filters;
          continue;
        }
        live[o][i] = true;
        if (is_elliptic(coeffs, options.tolerance).elliptic) ++layer.elliptic_filters;
        else ++layer.non_elliptic_filters, layer.over_estimate = true;
      }
    // Filters only pass or drop their input set, so outputs sharing the same
    // live inputs share one union.
    std::map<std::vector<bool>, DigitalWavefrontSet> unions;
    std::vector<DigitalWavefrontSet> next;
    next.reserve(cout);
    for (int o = 0; o < cout; ++o) {
      auto it = unions.find(live[o]);
      if (it == unions.end()) {
        std::vector<const DigitalWavefrontSet*> parts;
        for (int i = 0; i < cin; ++i)
          if (live[o][i]) parts.push_back(&cur[i]);
        it = unions.emplace(live[o], union_of(parts, cur.front())).first;
      }
      if (j < 3) {
        Classification cls;
        next.push_back(prop_relu(it->second, cap.pre[j].image(o), options.thresholds, spacing, &cls));
        const auto hist = cls.histogram();
        for (int c = 0; c < 4; ++c) layer.classes[c] += hist[c];
      } else {
        next.push_back(it->second);
      }
    }
    cur = std::move(next);
    if (trace) {
      trace->layers.push_back(layer);
      trace->snapshots.push_back(union_channels(cur));
    }
  }
  std::vector<DigitalWavefrontSet> out;
  for (int c = 0; c < params.plan[4]; ++c) out.push_back(prop_sum(dwf_in[c], cur[c]));
  if (trace) trace->snapshots.back() = union_channels(out);
  return out;
}

DigitalWavefrontSet prop_lpd(const DigitalWavefrontSet& dwf_g, const LpdParams& params, const LpdCapture& cap,
                             const Geometry& geo, const LpdPropConfig& config, PropagationTrace* trace) {
  params.validate();
  const int S = params.config.state, N = params.config.iterations;
  if (static_cast<int>(cap.dual.size()) != N || static_cast<int>(cap.primal.size()) != N)
    throw ShapeError("capture does not match the iteration count");
  require_grid(dwf_g, geo.m1, geo.m2(), config.sino_bins);
  if (dwf_g.mode() != DwfMode::hard) throw std::invalid_argument("prop_lpd expects a hard sinogram DWF");
  const Spacing sino_sp = sinogram_spacing(geo);
  const Spacing img_sp{2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};

  std::vector<DigitalWavefrontSet> f(S, DigitalWavefrontSet(geo.n1, geo.n2, config.bins));
  std::vector<DigitalWavefrontSet> h(S, dwf_g);
  for (int i = 0; i < N; ++i) {
    std::vector<DigitalWavefrontSet> din = h;
    din.push_back(dwf_image_to_sino(f[0], geo, config.sino_bins));
    din.push_back(dwf_g);
    h = prop_resnet(din, params.dual[i], cap.dual[i], sino_sp, config.options, trace,
                    "dual" + std::to_string(i + 1));

    PushStats st;
    std::vector<DigitalWavefrontSet> pin = f;
    pin.push_back(dwf_sino_to_image(h[0], geo, config.bins, &st));
    if (trace) trace->dropped_grazing += st.grazing;
    f = prop_resnet(pin, params.primal[i], cap.primal[i], img_sp, config.options, trace,
                    "primal" + std::to_string(i + 1));
  }
  return f[0];
}

nlohmann::json PropagationTrace::to_json() const {
  nlohmann::json j;
  j["dropped_grazing"] = dropped_grazing;
  auto& ls = j["layers"] = nlohmann::json::array();
  for (const auto& l : layers)
    ls.push_back({{"name", l.name},
                  {"over_estimate", l.over_estimate},
                  {"elliptic_filters", l.elliptic_filters},
                  {"non_elliptic_filters", l.non_elliptic_filters},
                  {"zero_filters", l.zero_filters},
                  {"classes",
                   {{"int_supp_plus", l.classes[0]}, {"supp_neg_zero", l.classes[1]}, {"R", l.classes[2]},
                    {"C_or_S", l.classes[3]}}}});
  auto& sn = j["snapshot_counts"] = nlohmann::json::array();
  for (const auto& s : snapshots) sn.push_back(s.count());
  return j;
}

}  // namespace mct

#pragma once

// Independent reference implementations used as test oracles.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include "mct/grid.hpp"
#include "mct/network.hpp"
#include "mct/radon.hpp"
#include "mct/wfprop.hpp"

namespace mct::oracle {

using Planes = std::vector<std::vector<double>>;  // [channel][y * w + x]

inline Planes naive_conv(const Planes& in, int w, int h, const std::vector<double>& filt,
                         const std::vector<double>& bias, int cout) {
  const int cin = static_cast<int>(in.size());
  Planes out(cout, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0));
  for (int o = 0; o < cout; ++o)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double s = bias.empty() ? 0.0 : bias[o];
        for (int i = 0; i < cin; ++i)
          for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
              const int yy = y + r - 1, xx = x + c - 1;
              if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
              s += filt[((o * cin + i) * 3 + r) * 3 + c] * in[i][yy * w + xx];
            }
        out[o][y * w + x] = s;
      }
  return out;
}

inline Planes naive_resnet(const ResNetParams& p, const Planes& in, int w, int h) {
  Planes cur = in;
  for (int j = 0; j < 4; ++j) {
    cur = naive_conv(cur, w, h, p.weights[j], p.biases[j], p.plan[j + 1]);
    if (j < 3)
      for (auto& ch : cur)
        for (double& v : ch) v = std::max(v, 0.0);
  }
  for (int c = 0; c < p.plan[4]; ++c)
    for (std::size_t q = 0; q < cur[c].size(); ++q) cur[c][q] += in[c][q];
  return cur;
}

// Straight-line unrolled primal-dual pass without captures.
inline std::vector<double> naive_lpd(const LpdParams& p, const Sinogram& g, const Geometry& geo) {
  const int S = p.config.state;
  const int n1 = geo.n1, n2 = geo.n2, m1 = geo.m1, m2 = geo.m2();
  const std::vector<double> gv(g.values().begin(), g.values().end());
  Planes f(S, std::vector<double>(static_cast<std::size_t>(n1) * n2, 0.0));
  Planes h(S, gv);
  for (int i = 0; i < p.config.iterations; ++i) {
    GridImage f0(n1, n2, f[0]);
    const Sinogram rf = radon(f0, geo);
    Planes din = h;
    din.emplace_back(rf.values().begin(), rf.values().end());
    din.push_back(gv);
    h = naive_resnet(p.dual[i], din, m1, m2);
    Sinogram h0 = geo.empty_sinogram();
    for (int l = 0; l < m2; ++l)
      if (geo.mask[l])
        for (int k = 0; k < m1; ++k) h0(k, l) = h[0][static_cast<std::size_t>(l) * m1 + k];
    const GridImage bh = backproject(h0, geo);
    Planes pin = f;
    pin.emplace_back(bh.values().begin(), bh.values().end());
    f = naive_resnet(p.primal[i], pin, n1, n2);
  }
  return f[0];
}

struct GradCheck {
  double worst = 0.0;
  std::size_t checked = 0;
  std::size_t failures = 0;
};

// Central differences on every parameter; rel = |a-b| / max(|a|+|b|, floor).
inline GradCheck finite_difference_check(std::vector<double> params, const std::vector<double>& analytic,
                                         const std::function<double(const std::vector<double>&)>& loss,
                                         double step, double tol, double floor = 1e-7) {
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const double up = loss(params);
    params[i] = keep - step;
    const double down = loss(params);
    params[i] = keep;
    const double fd = (up - down) / (2 * step);
    const double rel = std::abs(fd - analytic[i]) / std::max(std::abs(fd) + std::abs(analytic[i]), floor);
    out.worst = std::max(out.worst, rel);
    out.failures += rel >= tol;
    ++out.checked;
  }
  return out;
}

inline Tensor random_tensor(int c, int w, int h, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(c, w, h);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline int bin_distance(int a, int b, int bins) {
  const int d = std::abs(a - b) % bins;
  return std::min(d, bins - d);
}

// Fraction of set elements of a having a set element of b within `cells`
// grid cells (Chebyshev) and `bins` orientation bins; 1 when a is empty.
inline double dwf_coverage(const DigitalWavefrontSet& a, const DigitalWavefrontSet& b, int cells, int bins) {
  std::size_t total = 0, hit = 0;
  for (int j = 0; j < a.n2(); ++j)
    for (int i = 0; i < a.n1(); ++i)
      for (int k = 0; k < a.bins(); ++k) {
        if (!a.test(i, j, k)) continue;
        ++total;
        bool found = false;
        for (int dj = -cells; dj <= cells && !found; ++dj)
          for (int di = -cells; di <= cells && !found; ++di) {
            const int ii = i + di, jj = j + dj;
            if (ii < 0 || jj < 0 || ii >= b.n1() || jj >= b.n2()) continue;
            for (int dk = -bins; dk <= bins && !found; ++dk)
              if (b.test(ii, jj, ((k + dk) % a.bins() + a.bins()) % a.bins())) found = true;
          }
        hit += found;
      }
  return total ? static_cast<double>(hit) / total : 1.0;
}

inline double dwf_f1(const DigitalWavefrontSet& predicted, const DigitalWavefrontSet& truth, int cells, int bins) {
  const double p = dwf_coverage(predicted, truth, cells, bins);
  const double r = dwf_coverage(truth, predicted, cells, bins);
  return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

// Circle |x| = radius with radial bins: every pixel nearest to a dense sample
// of the circle gets the bin of its normal.
inline DigitalWavefrontSet circle_dwf(int n, double radius, int bins, Vec2 center = {0, 0}) {
  DigitalWavefrontSet d(n, n, bins);
  const double h = 2.0 / (n - 1);
  const int samples = static_cast<int>(std::ceil(2 * 3.141592653589793 * radius / (h / 8)));
  for (int s = 0; s < samples; ++s) {
    const double a = 2 * 3.141592653589793 * s / samples;
    const double x = center.x + radius * std::cos(a), y = center.y + radius * std::sin(a);
    const long i = std::lround((x + 1) / h), j = std::lround((y + 1) / h);
    if (i < 0 || j < 0 || i >= n || j >= n) continue;
    d.set(static_cast<int>(i), static_cast<int>(j), d.bin_of(a));
  }
  return d;
}

// Brute-force ellipticity on a grid ten times denser in both directions and radii.
inline bool dense_elliptic(const FilterBasisCoeffs& c, double tol) {
  const int D = 3600;
  std::vector<double> radii;
  for (int k = -30; k <= 30; ++k) radii.push_back(std::pow(10.0, k / 10.0));
  const int R = static_cast<int>(radii.size());
  const double limit = tol * (1 + c.max_abs());
  std::vector<double> prev_dir(R), first_dir(R);
  for (int d = 0; d <= D; ++d) {
    const double a = 2 * std::numbers::pi * (d % D) / D;
    std::vector<double> cur(R);
    for (int r = 0; r < R; ++r) {
      const double x1 = radii[r] * std::cos(a), x2 = radii[r] * std::sin(a);
      cur[r] = c.b11 + c.b12 * x2 + c.b21 * x1 + c.b22 * x1 * x2 + c.b13 * x2 * x2 + c.b31 * x1 * x1 +
               c.b23 * x2 * x2 * x1 + c.b32 * x1 * x1 * x2 + c.b33 * x1 * x1 * x2 * x2;
      if (std::abs(cur[r]) <= limit) return false;
      if (r > 0 && (cur[r] < 0) != (cur[r - 1] < 0)) return false;
      if (d > 0 && (cur[r] < 0) != (prev_dir[r] < 0)) return false;
    }
    prev_dir = cur;
  }
  return true;
}

inline FilterBasisCoeffs random_coeffs(std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0, 1);
  std::uniform_real_distribution<double> u(0.05, 2.0);
  FilterBasisCoeffs c;
  if (rng() % 2) {
    c = {nd(rng), nd(rng), nd(rng), nd(rng), nd(rng), nd(rng), nd(rng), nd(rng), nd(rng), 1.0};
  } else {
    // Sum-of-squares shape with a small odd perturbation: mostly elliptic.
    const double s = rng() % 2 ? 1.0 : -1.0;
    const double e = 0.1 * std::abs(nd(rng));
    c = {s * u(rng), e * nd(rng), e * nd(rng), e * nd(rng), s * u(rng), s * u(rng), e * nd(rng), e * nd(rng),
         s * u(rng), 1.0};
  }
  return c;
}

}  // namespace mct::oracle

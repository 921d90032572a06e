#include "mct/microlocal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mct/parallel.hpp"

namespace mct {

namespace {

constexpr double kPi = std::numbers::pi;

enum class Fate { mapped, outside, masked, grazing };

double circular_distance(double a, double b) {
  const double d = std::abs(wrap_pi(a) - wrap_pi(b));
  return std::min(d, kPi - d);
}

bool grazing(double vartheta, int sino_bins) {
  return std::abs(vartheta) >= kPi / 2 - kPi / sino_bins - 1e-12;
}

// vartheta encoded by a sinogram bin (bin angle is -vartheta mod pi).
double bin_vartheta(int b, int sino_bins) {
  const double a = b * kPi / sino_bins;
  return a > kPi / 2 ? kPi - a : -a;
}

int bin_index(double angle, int bins) {
  return static_cast<int>(std::lround(wrap_pi(angle) / (kPi / bins))) % bins;
}

void tally(PushStats& st, Fate f) {
  switch (f) {
    case Fate::mapped: ++st.mapped; break;
    case Fate::outside: ++st.outside; break;
    case Fate::masked: ++st.masked; break;
    case Fate::grazing: ++st.grazing; break;
  }
}

struct ImageToSino {
  const Geometry& geo;
  int bins, sino_bins;
  double hx, hy;

  Fate operator()(int i1, int i2, int b, std::size_t& dst) const {
    const double lambda = b * kPi / bins;
    const Vec2 x{-1.0 + i1 * hx, -1.0 + i2 * hy};
    SinoWfElement e = canon_fwd({x, wrap_pi(lambda - kPi / 2)});
    bool wrapped = false;
    const int l = nearest_angle(geo, e.phi, &wrapped);
    if (wrapped) e.s = -e.s, e.vartheta = -e.vartheta;
    if (!geo.mask[l]) return Fate::masked;
    if (grazing(e.vartheta, sino_bins)) return Fate::grazing;
    const long k = std::lround((e.s + kDetectorHalfWidth) / geo.detector_spacing());
    if (k < 0 || k >= geo.m1) return Fate::outside;
    dst = (static_cast<std::size_t>(l) * geo.m1 + k) * sino_bins + bin_index(-e.vartheta, sino_bins);
    return Fate::mapped;
  }
};

struct SinoToImage {
  const Geometry& geo;
  int sino_bins, bins;
  double hx, hy;

  Fate operator()(int k, int l, int b, std::size_t& dst) const {
    if (!geo.mask[l]) return Fate::masked;
    const double vt = bin_vartheta(b, sino_bins);
    if (grazing(vt, sino_bins)) return Fate::grazing;
    const ImageWfElement e = canon_bwd({geo.detector(k), geo.angles[l], vt});
    const long i1 = std::lround((e.x.x + 1.0) / hx);
    const long i2 = std::lround((e.x.y + 1.0) / hy);
    if (i1 < 0 || i1 >= geo.n1 || i2 < 0 || i2 >= geo.n2) return Fate::outside;
    dst = (static_cast<std::size_t>(i2) * geo.n1 + i1) * bins + bin_index(e.theta + kPi / 2, bins);
    return Fate::mapped;
  }
};

template <class Rule>
PushforwardMap build_map(const Rule& rule, int sn1, int sn2, int sbins, int dn1, int dn2, int dbins) {
  PushforwardMap map(sn1, sn2, sbins, dn1, dn2, dbins);
  for (int j = 0; j < sn2; ++j)
    for (int i = 0; i < sn1; ++i)
      for (int b = 0; b < sbins; ++b) {
        std::size_t dst = 0;
        const Fate f = rule(i, j, b, dst);
        tally(map.stats(), f);
        if (f == Fate::mapped) map.add((static_cast<std::size_t>(j) * sn1 + i) * sbins + b, dst);
      }
  return map;
}

template <class Rule>
DigitalWavefrontSet push_elements(const DigitalWavefrontSet& in, const Rule& rule, int dn1, int dn2,
                                  int dbins, PushStats* stats) {
  DigitalWavefrontSet out(dn1, dn2, dbins, DwfMode::hard);
  PushStats st;
  auto data = out.data();
  for (int j = 0; j < in.n2(); ++j)
    for (int i = 0; i < in.n1(); ++i)
      for (int b = 0; b < in.bins(); ++b) {
        if (!in.test(i, j, b)) continue;
        std::size_t dst = 0;
        const Fate f = rule(i, j, b, dst);
        tally(st, f);
        if (f == Fate::mapped) data[dst] = 1.0;
      }
  if (stats) *stats = st;
  return out;
}

void require_hard(const DigitalWavefrontSet& dwf) {
  if (dwf.mode() != DwfMode::hard) throw std::invalid_argument("pushforward expects a hard-mode DWF");
}

}  // namespace

SinoWfElement canon_fwd(const ImageWfElement& e) {
  const double c = std::cos(e.theta), s = std::sin(e.theta);
  SinoWfElement out;
  out.s = -e.x.x * s + e.x.y * c;
  out.vartheta = std::atan(-(e.x.x * c + e.x.y * s));
  double phi = e.theta + kPi / 2;
  const double turns = std::floor(phi / kPi);
  phi -= turns * kPi;
  if (static_cast<long>(turns) % 2 != 0) out.s = -out.s, out.vartheta = -out.vartheta;
  if (phi >= kPi) phi = 0.0;
  out.phi = phi;
  return out;
}

ImageWfElement canon_bwd(const SinoWfElement& e) {
  if (!(std::abs(e.vartheta) < kPi / 2)) throw GrazingOrientation();
  const double t = std::tan(e.vartheta);
  const double c = std::cos(e.phi), s = std::sin(e.phi);
  return {{e.s * c - t * s, e.s * s + t * c}, wrap_pi(e.phi - kPi / 2)};
}

int nearest_angle(const Geometry& geo, double phi, bool* wrapped) {
  const double p = wrap_pi(phi);
  int best = 0;
  double best_d = 1e300;
  for (int l = 0; l < geo.m2(); ++l) {
    const double d = circular_distance(p, geo.angles[l]);
    if (d < best_d) best_d = d, best = l;
  }
  if (wrapped) *wrapped = std::abs(p - geo.angles[best]) > kPi / 2;
  return best;
}

std::vector<bool> visible_orientations(const Geometry& geo, int bins) {
  geo.validate();
  if (bins < 1) throw std::invalid_argument("bin count must be positive");
  const int m = geo.m2();
  // Half of the larger gap on either side of each angle.
  std::vector<double> tol(m);
  for (int l = 0; l < m; ++l) {
    const double prev = l > 0 ? geo.angles[l] - geo.angles[l - 1] : geo.angles[0] + kPi - geo.angles[m - 1];
    const double next = l + 1 < m ? geo.angles[l + 1] - geo.angles[l] : geo.angles[0] + kPi - geo.angles[l];
    tol[l] = 0.5 * std::max(prev, next) + 1e-12;
  }
  std::vector<bool> vis(bins, false);
  for (int b = 0; b < bins; ++b) {
    const double lambda = b * kPi / bins;
    for (int l = 0; l < m && !vis[b]; ++l)
      if (geo.mask[l] && circular_distance(lambda, geo.angles[l]) <= tol[l]) vis[b] = true;
  }
  return vis;
}

PushforwardMap::PushforwardMap(int src_n1, int src_n2, int src_bins, int dst_n1, int dst_n2, int dst_bins)
    : src_n1_(src_n1), src_n2_(src_n2), src_bins_(src_bins),
      dst_n1_(dst_n1), dst_n2_(dst_n2), dst_bins_(dst_bins) {}

void PushforwardMap::add(std::size_t src, std::size_t dst) {
  pairs_.push_back({static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)});
}

void PushforwardMap::sort() {
  std::sort(pairs_.begin(), pairs_.end(),
            [](const Pair& a, const Pair& b) { return a.dst != b.dst ? a.dst < b.dst : a.src < b.src; });
}

DigitalWavefrontSet PushforwardMap::apply(const DigitalWavefrontSet& in) const {
  if (in.n1() != src_n1_ || in.n2() != src_n2_ || in.bins() != src_bins_)
    throw ShapeError("pushforward source shape mismatch");
  DigitalWavefrontSet out(dst_n1_, dst_n2_, dst_bins_, in.mode());
  auto src = in.data();
  auto dst = out.data();
  if (in.mode() == DwfMode::hard) {
    for (const Pair& p : pairs_)
      if (src[p.src] > 0.5) dst[p.dst] = 1.0;
    return out;
  }
  // dst holds the running product of (1 - a) until the final flip.
  std::vector<double> keep(dst.size(), 1.0);
  for (const Pair& p : pairs_) keep[p.dst] *= 1.0 - src[p.src];
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = 1.0 - keep[i];
  return out;
}

PushforwardMap image_to_sino_map(const Geometry& geo, int bins, int sino_bins) {
  geo.validate();
  ImageToSino rule{geo, bins, sino_bins, 2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};
  auto map = build_map(rule, geo.n1, geo.n2, bins, geo.m1, geo.m2(), sino_bins);
  map.sort();
  return map;
}

PushforwardMap sino_to_image_map(const Geometry& geo, int sino_bins, int bins) {
  geo.validate();
  SinoToImage rule{geo, sino_bins, bins, 2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};
  auto map = build_map(rule, geo.m1, geo.m2(), sino_bins, geo.n1, geo.n2, bins);
  map.sort();
  return map;
}

DigitalWavefrontSet dwf_image_to_sino(const DigitalWavefrontSet& dwf, const Geometry& geo, int sino_bins,
                                      PushStats* stats) {
  require_hard(dwf);
  geo.validate();
  if (dwf.n1() != geo.n1 || dwf.n2() != geo.n2) throw ShapeError("DWF does not match the image grid");
  ImageToSino rule{geo, dwf.bins(), sino_bins, 2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};
  return push_elements(dwf, rule, geo.m1, geo.m2(), sino_bins, stats);
}

DigitalWavefrontSet dwf_sino_to_image(const DigitalWavefrontSet& dwf, const Geometry& geo, int bins,
                                      PushStats* stats) {
  require_hard(dwf);
  geo.validate();
  if (dwf.n1() != geo.m1 || dwf.n2() != geo.m2()) throw ShapeError("DWF does not match the sinogram grid");
  SinoToImage rule{geo, dwf.bins(), bins, 2.0 / (geo.n1 - 1), 2.0 / (geo.n2 - 1)};
  return push_elements(dwf, rule, geo.n1, geo.n2, bins, stats);
}

Spacing sinogram_spacing(const Geometry& geo) { return {geo.detector_spacing(), kPi / geo.m2()}; }

DigitalWavefrontSet dwf_estimate(const GridImage& f, int bins, EstimateThresholds thresholds) {
  return dwf_estimate(f, bins, thresholds, spacing_of(f));
}

DigitalWavefrontSet dwf_estimate(const GridImage& f, int bins, EstimateThresholds thresholds, Spacing spacing) {
  const int n1 = f.n1(), n2 = f.n2();
  auto at = [&](int i, int j) {
    return f(std::clamp(i, 0, n1 - 1), std::clamp(j, 0, n2 - 1));
  };
  std::vector<double> gx(f.size()), gy(f.size()), mag(f.size());
  parallel_for(n2, [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    for (int i = 0; i < n1; ++i) {
      const double sx = (at(i + 1, j - 1) + 2 * at(i + 1, j) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2 * at(i - 1, j) + at(i - 1, j + 1));
      const double sy = (at(i - 1, j + 1) + 2 * at(i, j + 1) + at(i + 1, j + 1)) -
                        (at(i - 1, j - 1) + 2 * at(i, j - 1) + at(i + 1, j - 1));
      const std::size_t id = f.index(i, j);
      gx[id] = sx / (8 * spacing.hx);
      gy[id] = sy / (8 * spacing.hy);
      mag[id] = std::hypot(gx[id], gy[id]);
    }
  });
  const double peak = *std::max_element(mag.begin(), mag.end());
  DigitalWavefrontSet out(n1, n2, bins);
  if (!(peak > 0.0)) return out;
  const double thr = thresholds.rel * peak;
  auto m_at = [&](int i, int j) {
    if (i < 0 || i >= n1 || j < 0 || j >= n2) return 0.0;
    return mag[f.index(i, j)];
  };
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      const std::size_t id = f.index(i, j);
      const double m = mag[id];
      if (m <= 0.0 || m < thr) continue;
      const double ang = std::atan2(gy[id], gx[id]);
      // Quantise the gradient direction to one of the four neighbour axes.
      const int q = static_cast<int>(std::lround(wrap_pi(ang) / (kPi / 4))) % 4;
      static constexpr int dx[4] = {1, 1, 0, -1}, dy[4] = {0, 1, 1, 1};
      const double ahead = m_at(i + dx[q], j + dy[q]);
      const double behind = m_at(i - dx[q], j - dy[q]);
      if (m > behind && m >= ahead) out.set(i, j, bin_index(ang, bins));
    }
  return out;
}

}  // namespace mct

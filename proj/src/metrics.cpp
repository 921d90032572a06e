#include "mct/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace mct {

namespace {

constexpr int kWindow = 8;

void require_same(const GridImage& a, const GridImage& b) {
  if (!a.same_shape(b)) throw ShapeError("metric inputs differ in shape");
}

double value_range(const GridImage& a) {
  auto v = a.values();
  auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  return *hi - *lo;
}

}  // namespace

double mse(const GridImage& a, const GridImage& b) {
  require_same(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double psnr(const GridImage& a, const GridImage& b, double data_range) {
  if (!(data_range > 0)) throw std::invalid_argument("psnr data_range must be positive");
  const double err = mse(a, b);
  if (err == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(data_range * data_range / err));
}

double ssim(const GridImage& a, const GridImage& b) {
  require_same(a, b);
  if (a.n1() < kWindow || a.n2() < kWindow) throw ShapeError("ssim needs at least 8x8 images");

  auto va = a.values();
  auto vb = b.values();
  const double lo = std::min(*std::min_element(va.begin(), va.end()), *std::min_element(vb.begin(), vb.end()));
  const double hi = std::max(*std::max_element(va.begin(), va.end()), *std::max_element(vb.begin(), vb.end()));
  const double range = std::max(hi - lo, 1e-12);
  const double c1 = (0.01 * range) * (0.01 * range);
  const double c2 = (0.03 * range) * (0.03 * range);
  const double inv = 1.0 / (kWindow * kWindow);

  double total = 0.0;
  int windows = 0;
  for (int y = 0; y + kWindow <= a.n2(); ++y) {
    for (int x = 0; x + kWindow <= a.n1(); ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int j = 0; j < kWindow; ++j) {
        for (int i = 0; i < kWindow; ++i) {
          const double p = a(x + i, y + j);
          const double q = b(x + i, y + j);
          sa += p;
          sb += q;
          saa += p * p;
          sbb += q * q;
          sab += p * q;
        }
      }
      const double ma = sa * inv, mb = sb * inv;
      const double vara = saa * inv - ma * ma;
      const double varb = sbb * inv - mb * mb;
      const double cov = sab * inv - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (vara + varb + c2));
      ++windows;
    }
  }
  return total / windows;
}

double l2_relative_error(const GridImage& rec, const GridImage& truth) {
  require_same(rec, truth);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double d = rec.values()[i] - truth.values()[i];
    num += d * d;
    den += truth.values()[i] * truth.values()[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

MetricsReport evaluate(const GridImage& rec, const GridImage& truth) {
  return {psnr(rec, truth, std::max(value_range(truth), 1e-12)), ssim(rec, truth),
          l2_relative_error(rec, truth)};
}

}  // namespace mct

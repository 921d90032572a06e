#include "mct/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mct {

double wrap_pi(double angle) {
  double w = std::fmod(angle, std::numbers::pi);
  if (w < 0.0) w += std::numbers::pi;
  if (w >= std::numbers::pi) w = 0.0;
  return w;
}

GridImage::GridImage(int n1, int n2, double fill) : n1_(n1), n2_(n2) {
  if (n1 < 2 || n2 < 2) throw ShapeError("grid image needs at least 2x2 samples");
  values_.assign(static_cast<std::size_t>(n1) * n2, fill);
}

GridImage::GridImage(int n1, int n2, std::vector<double> values)
    : n1_(n1), n2_(n2), values_(std::move(values)) {
  if (n1 < 2 || n2 < 2) throw ShapeError("grid image needs at least 2x2 samples");
  if (values_.size() != static_cast<std::size_t>(n1) * n2)
    throw ShapeError("grid image value count does not match shape");
}

bool GridImage::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Sinogram::Sinogram(int m1, std::vector<double> angles, std::vector<bool> mask)
    : m1_(m1), angles_(std::move(angles)), mask_(std::move(mask)) {
  if (m1 < 2) throw ShapeError("sinogram needs at least 2 detectors");
  if (angles_.empty()) throw ShapeError("sinogram needs at least one angle");
  if (mask_.size() != angles_.size()) throw ShapeError("mask length differs from angle count");
  if (available_count() == 0) throw ShapeError("sinogram mask has no available angle");
  values_.assign(static_cast<std::size_t>(m1_) * angles_.size(), 0.0);
}

double Sinogram::detector_spacing() const { return 2.0 * kDetectorHalfWidth / (m1_ - 1); }

double Sinogram::detector(int k) const { return -kDetectorHalfWidth + k * detector_spacing(); }

int Sinogram::available_count() const {
  return static_cast<int>(std::count(mask_.begin(), mask_.end(), true));
}

void Sinogram::mask_out(int l) {
  mask_[l] = false;
  std::fill_n(values_.begin() + static_cast<std::ptrdiff_t>(index(0, l)), m1_, 0.0);
}

bool Sinogram::same_layout(const Sinogram& o) const {
  return m1_ == o.m1_ && angles_ == o.angles_ && mask_ == o.mask_;
}

GridImage Sinogram::as_grid() const {
  return GridImage(m1_, m2(), std::vector<double>(values_.begin(), values_.end()));
}

DigitalWavefrontSet::DigitalWavefrontSet(int n1, int n2, int bins, DwfMode mode)
    : n1_(n1), n2_(n2), bins_(bins), mode_(mode) {
  if (n1 < 1 || n2 < 1 || bins < 1) throw ShapeError("invalid wavefront set shape");
  data_.assign(static_cast<std::size_t>(n1) * n2 * bins, 0.0);
}

double DigitalWavefrontSet::bin_width() const { return std::numbers::pi / bins_; }

int DigitalWavefrontSet::bin_of(double angle) const {
  const int k = static_cast<int>(std::lround(wrap_pi(angle) / bin_width()));
  return k % bins_;
}

void DigitalWavefrontSet::set_all_bins(int i1, int i2) {
  std::fill_n(data_.begin() + static_cast<std::ptrdiff_t>(index(i1, i2, 0)), bins_, 1.0);
}

std::size_t DigitalWavefrontSet::count() const {
  return static_cast<std::size_t>(
      std::count_if(data_.begin(), data_.end(), [](double v) { return v > 0.5; }));
}

bool DigitalWavefrontSet::pixel_marked(int i1, int i2) const {
  for (int k = 0; k < bins_; ++k)
    if (test(i1, i2, k)) return true;
  return false;
}

void DigitalWavefrontSet::validate() const {
  for (double v : data_) {
    if (mode_ == DwfMode::hard && v != 0.0 && v != 1.0)
      throw std::invalid_argument("hard wavefront set holds a value other than 0/1");
    if (mode_ == DwfMode::soft && !(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("soft wavefront set value outside [0,1]");
  }
}

DigitalWavefrontSet DigitalWavefrontSet::to_hard(double threshold) const {
  DigitalWavefrontSet out(n1_, n2_, bins_, DwfMode::hard);
  for (std::size_t i = 0; i < data_.size(); ++i) out.data_[i] = data_[i] > threshold ? 1.0 : 0.0;
  return out;
}

}  // namespace mct

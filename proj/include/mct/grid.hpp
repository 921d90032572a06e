#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mct {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense scalar field sampled on [-1,1]^2. Pixel (i1,i2) sits at world point
/// (-1 + i1*hx, -1 + i2*hy); storage is row-major with i2 as the row index.
class GridImage {
 public:
  GridImage() = default;
  GridImage(int n1, int n2, double fill = 0.0);
  GridImage(int n1, int n2, std::vector<double> values);

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  std::size_t size() const { return values_.size(); }
  double hx() const { return 2.0 / (n1_ - 1); }
  double hy() const { return 2.0 / (n2_ - 1); }
  Vec2 world(int i1, int i2) const { return {-1.0 + i1 * hx(), -1.0 + i2 * hy()}; }

  double operator()(int i1, int i2) const { return values_[index(i1, i2)]; }
  double& operator()(int i1, int i2) { return values_[index(i1, i2)]; }
  std::size_t index(int i1, int i2) const {
    return static_cast<std::size_t>(i2) * n1_ + i1;
  }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  bool same_shape(const GridImage& o) const { return n1_ == o.n1_ && n2_ == o.n2_; }
  bool all_finite() const;

 private:
  int n1_ = 0;
  int n2_ = 0;
  std::vector<double> values_;
};

/// Parallel-beam data over detector positions s_k in [-sqrt2, sqrt2] and
/// angles in [0, pi). Row l holds angle l. Masked-out angles hold zeros.
class Sinogram {
 public:
  Sinogram() = default;
  Sinogram(int m1, std::vector<double> angles, std::vector<bool> mask);

  int m1() const { return m1_; }
  int m2() const { return static_cast<int>(angles_.size()); }
  double detector(int k) const;
  double detector_spacing() const;
  const std::vector<double>& angles() const { return angles_; }
  const std::vector<bool>& mask() const { return mask_; }
  bool available(int l) const { return mask_[l]; }
  int available_count() const;

  double operator()(int k, int l) const { return values_[index(k, l)]; }
  double& operator()(int k, int l) { return values_[index(k, l)]; }
  std::size_t index(int k, int l) const { return static_cast<std::size_t>(l) * m1_ + k; }

  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  // Clears an angle and zeroes its row.
  void mask_out(int l);
  bool same_layout(const Sinogram& o) const;

  // View of the data as an m1 x m2 grid image (detector horizontal, angle vertical).
  GridImage as_grid() const;

 private:
  int m1_ = 0;
  std::vector<double> angles_;
  std::vector<bool> mask_;
  std::vector<double> values_;
};

constexpr double kDetectorHalfWidth = 1.4142135623730951;

enum class DwfMode { hard, soft };

/// Per-pixel orientation channels. Bin k represents orientation k*pi/M,
/// antipodally identified.
class DigitalWavefrontSet {
 public:
  DigitalWavefrontSet() = default;
  DigitalWavefrontSet(int n1, int n2, int bins, DwfMode mode = DwfMode::hard);

  int n1() const { return n1_; }
  int n2() const { return n2_; }
  int bins() const { return bins_; }
  DwfMode mode() const { return mode_; }
  double bin_width() const;
  double bin_angle(int k) const { return k * bin_width(); }
  // Nearest bin of an orientation angle taken modulo pi.
  int bin_of(double angle) const;

  std::size_t index(int i1, int i2, int k) const {
    return (static_cast<std::size_t>(i2) * n1_ + i1) * bins_ + k;
  }
  double operator()(int i1, int i2, int k) const { return data_[index(i1, i2, k)]; }
  double& operator()(int i1, int i2, int k) { return data_[index(i1, i2, k)]; }
  bool test(int i1, int i2, int k) const { return data_[index(i1, i2, k)] > 0.5; }
  void set(int i1, int i2, int k) { data_[index(i1, i2, k)] = 1.0; }
  void set_all_bins(int i1, int i2);

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  std::size_t size() const { return data_.size(); }

  bool same_shape(const DigitalWavefrontSet& o) const {
    return n1_ == o.n1_ && n2_ == o.n2_ && bins_ == o.bins_;
  }
  std::size_t count() const;  // number of elements with value > 0.5
  bool empty() const { return count() == 0; }
  bool pixel_marked(int i1, int i2) const;
  void validate() const;  // throws on mode invariant violation

  DigitalWavefrontSet to_hard(double threshold = 0.5) const;

 private:
  int n1_ = 0;
  int n2_ = 0;
  int bins_ = 0;
  DwfMode mode_ = DwfMode::hard;
  std::vector<double> data_;
};

// Sample spacing of a 2-D field in its own coordinates.
struct Spacing {
  double hx = 1.0;
  double hy = 1.0;
};
inline Spacing spacing_of(const GridImage& f) { return {f.hx(), f.hy()}; }

// Wraps an angle into [0, pi).
double wrap_pi(double angle);

}  // namespace mct

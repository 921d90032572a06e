#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "json.hpp"
#include "mct/grid.hpp"

namespace mct {

/// Parallel-beam acquisition: image shape, detector count, angle list and
/// availability mask.
struct Geometry {
  int n1 = 0;
  int n2 = 0;
  int m1 = 0;
  std::vector<double> angles;
  std::vector<bool> mask;

  // Square n x n image, m2 uniform angles l*pi/m2; m1 <= 0 picks ceil(sqrt2*n).
  static Geometry uniform(int n, int m2, int m1 = 0);
  static Geometry from_sinogram(const Sinogram& sino, int n1, int n2);

  int m2() const { return static_cast<int>(angles.size()); }
  double detector_spacing() const;
  double detector(int k) const;
  // Quadrature weight of each angle: half the circular gap to each neighbour.
  std::vector<double> angle_weights() const;
  Sinogram empty_sinogram() const;
  void validate() const;
  bool matches(const Sinogram& sino) const;
  bool matches(const GridImage& image) const { return image.n1() == n1 && image.n2() == n2; }
};

Sinogram radon(const GridImage& f, const Geometry& geo);

// Exact transpose of radon with respect to the quadrature-weighted inner
// products (sinogram: ds*dtheta_l, image: hx*hy). Masked angles are ignored.
GridImage backproject(const Sinogram& g, const Geometry& geo);

// Plain Euclidean transposes, as needed by reverse-mode differentiation.
GridImage radon_transpose(const Sinogram& g, const Geometry& geo);
Sinogram backproject_transpose(const GridImage& v, const Geometry& geo);

// Inner products matching the weighting above.
double sinogram_inner(const Sinogram& a, const Sinogram& b, const Geometry& geo);
double image_inner(const GridImage& a, const GridImage& b);

struct LimitedAngle {
  double center = 0.0;  // radians
  double width = 0.0;   // radians, missing interval [center - w/2, center + w/2)
};
struct SparseView {
  int count = 0;
};
using Restriction = std::variant<LimitedAngle, SparseView>;

Sinogram restrict_angles(const Sinogram& g, const Restriction& mode);
Geometry restrict_geometry(const Geometry& geo, const Restriction& mode);
Restriction restriction_from_json(const nlohmann::json& j);

enum class RampWindow { none, hann };

// Per-row |sigma|/(2 pi) filter on rows zero-padded to the next power of two
// >= 2*m1, so that backproject(ramp_filter(radon(f))) approximates f.
Sinogram ramp_filter(const Sinogram& g, RampWindow window = RampWindow::none);
std::size_t ramp_padded_length(int m1);
std::vector<double> ramp_response(int padded_length, double detector_spacing, RampWindow window);

// Adds N(0, (sigma_rel * max|g|)^2) to available angles.
Sinogram add_noise(const Sinogram& g, double sigma_rel, std::uint64_t seed);

}  // namespace mct

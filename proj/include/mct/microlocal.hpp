#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mct/grid.hpp"
#include "mct/radon.hpp"

namespace mct {

/// Image wavefront element (x; omega(theta)), theta taken modulo pi.
struct ImageWfElement {
  Vec2 x;
  double theta = 0.0;
};

/// Sinogram wavefront element over the line (s, phi) with covector angle
/// vartheta in (-pi/2, pi/2).
struct SinoWfElement {
  double s = 0.0;
  double phi = 0.0;
  double vartheta = 0.0;
};

class GrazingOrientation : public std::domain_error {
 public:
  GrazingOrientation() : std::domain_error("grazing orientation") {}
};

SinoWfElement canon_fwd(const ImageWfElement& e);
ImageWfElement canon_bwd(const SinoWfElement& e);

// Image orientation bins are edge normals lambda; the edge tangent is
// theta = lambda - pi/2, so the element is seen from the line angle phi = lambda.
std::vector<bool> visible_orientations(const Geometry& geo, int bins);

// Index of the sinogram row nearest to phi (mod pi); wrapped is set when the
// match goes through the pi seam, which flips s and vartheta.
int nearest_angle(const Geometry& geo, double phi, bool* wrapped = nullptr);

struct PushStats {
  std::size_t mapped = 0;
  std::size_t outside = 0;
  std::size_t masked = 0;
  std::size_t grazing = 0;
};

/// Cell-to-cell transport of one DWF grid onto another. Each source element
/// has at most one target; several sources may share a target.
class PushforwardMap {
 public:
  struct Pair {
    std::uint32_t src;
    std::uint32_t dst;
  };

  PushforwardMap(int src_n1, int src_n2, int src_bins, int dst_n1, int dst_n2, int dst_bins);

  void add(std::size_t src, std::size_t dst);
  void sort();
  const std::vector<Pair>& pairs() const { return pairs_; }
  PushStats& stats() { return stats_; }
  const PushStats& stats() const { return stats_; }

  // Hard mode: OR of the mapped elements. Soft mode: 1 - prod(1 - a).
  DigitalWavefrontSet apply(const DigitalWavefrontSet& in) const;

  int dst_n1() const { return dst_n1_; }
  int dst_n2() const { return dst_n2_; }
  int dst_bins() const { return dst_bins_; }

 private:
  int src_n1_, src_n2_, src_bins_;
  int dst_n1_, dst_n2_, dst_bins_;
  std::vector<Pair> pairs_;
  PushStats stats_;
};

PushforwardMap image_to_sino_map(const Geometry& geo, int bins, int sino_bins);
PushforwardMap sino_to_image_map(const Geometry& geo, int sino_bins, int bins);

// The sinogram DWF grid has n1 = m1 (detector) and n2 = m2 (angle). Its bin b
// holds the covector angle b*pi/M in (s, phi) coordinates, which is -vartheta.
Spacing sinogram_spacing(const Geometry& geo);

DigitalWavefrontSet dwf_image_to_sino(const DigitalWavefrontSet& dwf, const Geometry& geo,
                                      int sino_bins, PushStats* stats = nullptr);
DigitalWavefrontSet dwf_sino_to_image(const DigitalWavefrontSet& dwf, const Geometry& geo,
                                      int bins, PushStats* stats = nullptr);

struct EstimateThresholds {
  double rel = 0.1;
};

// Sobel gradient with non-maximum suppression.
DigitalWavefrontSet dwf_estimate(const GridImage& f, int bins, EstimateThresholds thresholds = {});
DigitalWavefrontSet dwf_estimate(const GridImage& f, int bins, EstimateThresholds thresholds, Spacing spacing);

}  // namespace mct

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mct/grid.hpp"
#include "mct/microlocal.hpp"
#include "mct/network.hpp"

namespace mct {

using Filter3 = std::array<double, 9>;  // row-major, rows along x2, columns along x1

/// Coefficients of a 3x3 filter in the finite-difference basis Delta_ij.
struct FilterBasisCoeffs {
  double b11 = 0, b12 = 0, b21 = 0, b22 = 0, b13 = 0, b31 = 0, b23 = 0, b32 = 0, b33 = 0;
  double h = 1.0;

  std::array<double, 9> values() const { return {b11, b12, b21, b22, b13, b31, b23, b32, b33}; }
  double max_abs() const;
};

const std::array<Filter3, 9>& filter_basis();  // order 11,12,21,22,13,31,23,32,33

FilterBasisCoeffs decompose_filter(const Filter3& theta, double h);
Filter3 recompose_filter(const FilterBasisCoeffs& coeffs);

double symbol_eval(const FilterBasisCoeffs& coeffs, double xi1, double xi2);

struct EllipticityResult {
  bool elliptic = false;
  std::array<double, 2> witness{};  // minimiser, or point of a sign change
  double min_abs = 0.0;
};

struct SymbolGrid {
  int directions = 360;
  std::vector<double> radii;  // defaults to 10^k, k = -3..3
};

EllipticityResult is_elliptic(const FilterBasisCoeffs& coeffs, double tolerance = 1e-6);
EllipticityResult is_elliptic(const FilterBasisCoeffs& coeffs, double tolerance, const SymbolGrid& grid);

enum class PixelClass : std::uint8_t { int_supp_plus, supp_neg_zero, R, C_or_S };

struct Thresholds {
  double eps_val = -1.0;   // negative: 1e-3 * max|feature|
  double eps_grad = -1.0;  // negative: 1e-3 * max gradient norm
};

struct Classification {
  int n1 = 0, n2 = 0;
  std::vector<PixelClass> classes;
  std::vector<double> gx, gy;  // central-difference gradient
  double eps_val = 0, eps_grad = 0;

  PixelClass at(int i1, int i2) const { return classes[static_cast<std::size_t>(i2) * n1 + i1]; }
  std::array<std::size_t, 4> histogram() const;
};

Classification classify_pixels(const GridImage& feature, Thresholds thresholds = {});
Classification classify_pixels(const GridImage& feature, Thresholds thresholds, Spacing spacing);

struct PropagationTrace {
  struct Layer {
    std::string name;
    bool over_estimate = false;
    int elliptic_filters = 0;
    int non_elliptic_filters = 0;
    int zero_filters = 0;
    std::array<std::size_t, 4> classes{};  // summed over channels
  };
  std::vector<Layer> layers;
  std::vector<DigitalWavefrontSet> snapshots;  // input, then after each layer
  std::size_t dropped_grazing = 0;

  nlohmann::json to_json() const;
};

struct ConvPropagation {
  DigitalWavefrontSet dwf;
  bool over_estimate = false;
};

ConvPropagation prop_conv(const DigitalWavefrontSet& dwf, const FilterBasisCoeffs& coeffs, double tolerance = 1e-6);

DigitalWavefrontSet prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Thresholds thresholds = {});
DigitalWavefrontSet prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Thresholds thresholds,
                              Spacing spacing, Classification* classes = nullptr);

DigitalWavefrontSet prop_sum(const DigitalWavefrontSet& a, const DigitalWavefrontSet& b);

struct PropOptions {
  Thresholds thresholds;
  double tolerance = 1e-6;  // ellipticity
};

// Propagates per-channel DWFs through one captured ResNet pass.
std::vector<DigitalWavefrontSet> prop_resnet(const std::vector<DigitalWavefrontSet>& dwf_in,
                                             const ResNetParams& params, const ResNetCapture& capture,
                                             Spacing spacing, const PropOptions& options = {},
                                             PropagationTrace* trace = nullptr, const std::string& name = "resnet");

struct LpdPropConfig {
  int bins = 16;       // image orientation bins
  int sino_bins = 64;  // sinogram covector bins
  PropOptions options;
};

// Hard-mode propagation through a captured LPD pass; returns the final primal
// channel-one DWF.
DigitalWavefrontSet prop_lpd(const DigitalWavefrontSet& dwf_g, const LpdParams& params, const LpdCapture& capture,
                             const Geometry& geo, const LpdPropConfig& config, PropagationTrace* trace = nullptr);

}  // namespace mct

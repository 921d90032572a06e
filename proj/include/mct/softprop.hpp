#pragma once

#include <array>
#include <vector>

#include "mct/grid.hpp"
#include "mct/microlocal.hpp"
#include "mct/network.hpp"

namespace mct {

// Smooth relaxation of the hard propagation rules, used for training.
// Support gates are sigmoid((value - eps) / (tau * max|z|)), the regular-point
// gate is sigmoid((|grad| - eps_grad) / (tau_grad * max|grad|)), and an
// orientation bump of half width one bin sits on the gradient direction.
struct SoftOptions {
  double tau = 1e-2;
  double tau_grad = 1e-2;
  int window = 6;  // bump truncation, in bins either side
};

using DwfGrad = std::vector<double>;  // same layout as DigitalWavefrontSet::data()

// Soft counterpart of prop_relu for one feature channel.
DigitalWavefrontSet soft_prop_relu(const DigitalWavefrontSet& dwf, const GridImage& feature, Spacing spacing,
                                   const SoftOptions& options = {});

struct SoftResnetTape {
  std::vector<DigitalWavefrontSet> input;
  std::array<DigitalWavefrontSet, 4> unions;  // before layer 1, after ReLU 1..3
  Spacing spacing;
};

// Every filter is treated as live, so each layer carries one union DWF.
std::vector<DigitalWavefrontSet> soft_prop_resnet(const std::vector<DigitalWavefrontSet>& dwf_in,
                                                  const ResNetCapture& capture, int out_channels, Spacing spacing,
                                                  const SoftOptions& options = {}, SoftResnetTape* tape = nullptr);

struct SoftResnetGrads {
  std::vector<DwfGrad> input;
  std::array<Tensor, 3> pre;
};

SoftResnetGrads soft_prop_resnet_backward(const SoftResnetTape& tape, const ResNetCapture& capture,
                                          const std::vector<DwfGrad>& grad_out, const SoftOptions& options = {});

struct SoftLpdConfig {
  int bins = 16;
  int sino_bins = 64;
  SoftOptions options;
};

// Cached pushforward maps for one geometry and bin configuration.
struct SoftLpdMaps {
  SoftLpdMaps(const Geometry& geo, const SoftLpdConfig& config);
  PushforwardMap to_sino;
  PushforwardMap to_image;
};

struct SoftLpdTape {
  std::vector<SoftResnetTape> dual, primal;
  std::vector<DigitalWavefrontSet> f_before, h_after;  // pushforward sources per iteration
};

DigitalWavefrontSet soft_prop_lpd(const DigitalWavefrontSet& dwf_g, const LpdCapture& capture, const Geometry& geo,
                                  const SoftLpdConfig& config, const SoftLpdMaps& maps, SoftLpdTape* tape = nullptr);

// Gradient of a loss on the soft output with respect to every captured pre-activation.
LpdPreGrads soft_prop_lpd_backward(const SoftLpdTape& tape, const LpdCapture& capture, const SoftLpdConfig& config,
                                   const SoftLpdMaps& maps, const DwfGrad& grad_out);

// Transposed soft pushforward: gradient with respect to the map input.
DwfGrad pushforward_backward(const PushforwardMap& map, const DigitalWavefrontSet& input, const DwfGrad& grad_out);

}  // namespace mct

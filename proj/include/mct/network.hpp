#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "mct/grid.hpp"
#include "mct/radon.hpp"

namespace mct {

/// Stack of equally sized 2-D planes, stored channel-major then row-major.
struct Tensor {
  int channels = 0;
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int channels, int width, int height, double fill = 0.0);

  std::size_t plane() const { return static_cast<std::size_t>(width) * height; }
  double* channel(int c) { return data.data() + c * plane(); }
  const double* channel(int c) const { return data.data() + c * plane(); }
  GridImage image(int c) const;
  void set_channel(int c, std::span<const double> values);
  bool same_shape(const Tensor& o) const {
    return channels == o.channels && width == o.width && height == o.height;
  }
};

/// Four 3x3 convolution layers with channel plan (k0, ..., k4) and a residual
/// connection onto the first k4 input channels.
struct ResNetParams {
  std::array<int, 5> plan{};
  std::array<std::vector<double>, 4> weights;  // layer j: [out][in][3][3]
  std::array<std::vector<double>, 4> biases;   // empty when biases are off

  ResNetParams() = default;
  explicit ResNetParams(std::array<int, 5> plan, bool bias = false);

  bool has_bias() const { return !biases[0].empty(); }
  std::size_t filter_offset(int out, int in, int layer) const {
    return (static_cast<std::size_t>(out) * plan[layer] + in) * 9;
  }
  double& w(int layer, int out, int in, int r, int c) {
    return weights[layer][filter_offset(out, in, layer) + r * 3 + c];
  }
  double w(int layer, int out, int in, int r, int c) const {
    return weights[layer][filter_offset(out, in, layer) + r * 3 + c];
  }

  std::size_t parameter_count() const;
  // Declaration order: layer 1 weights, layer 1 biases, layer 2 weights, ...
  std::vector<double> flatten() const;
  void assign(std::span<const double> values);
  void validate() const;
};

// He-normal hidden layers; the last layer is scaled down by last_scale.
ResNetParams random_resnet(std::array<int, 5> plan, std::uint64_t seed, bool bias = false,
                           double last_scale = 0.1);

struct ResNetCapture {
  Tensor input;
  std::array<Tensor, 3> pre;  // pre-activations of layers 1-3
  std::array<Tensor, 3> act;
  Tensor output;
};

ResNetCapture resnet_forward(const ResNetParams& params, const Tensor& input);

struct ResNetGradients {
  ResNetParams params;
  Tensor input;
};

// Reverse mode through a captured pass. pre_grad adds extra gradients on the
// captured pre-activations (used by the wavefront loss).
ResNetGradients resnet_backward(const ResNetParams& params, const ResNetCapture& capture,
                                const Tensor& grad_output,
                                const std::array<Tensor, 3>* pre_grad = nullptr);

struct LpdConfig {
  int iterations = 2;
  int state = 5;
  int hidden = 32;
  bool bias = false;
};

struct LpdParams {
  LpdConfig config;
  std::vector<ResNetParams> dual;    // plan (state+2, hidden, hidden, hidden, state)
  std::vector<ResNetParams> primal;  // plan (state+1, hidden, hidden, hidden, state)

  static LpdParams zeros(const LpdConfig& config);
  static LpdParams random(const LpdConfig& config, std::uint64_t seed, double last_scale = 0.1);

  std::size_t parameter_count() const;
  // Iteration-major: dual 1, primal 1, dual 2, ...
  std::vector<double> flatten() const;
  void assign(std::span<const double> values);
  void validate() const;
};

struct LpdCapture {
  std::vector<ResNetCapture> dual;
  std::vector<ResNetCapture> primal;
  GridImage output;
};

Tensor sinogram_tensor(const Sinogram& g);

LpdCapture lpd_forward(const LpdParams& params, const Sinogram& g, const Geometry& geo);

struct LpdPreGrads {
  std::vector<std::array<Tensor, 3>> dual;
  std::vector<std::array<Tensor, 3>> primal;
};

LpdParams lpd_backward(const LpdParams& params, const LpdCapture& capture, const Geometry& geo,
                       const GridImage& grad_output, const LpdPreGrads* pre_grad = nullptr);

double loss_rec(const GridImage& y1, const GridImage& y2);
GridImage loss_rec_grad(const GridImage& prediction, const GridImage& target);
double loss_inp(const DigitalWavefrontSet& target, const DigitalWavefrontSet& predicted, double eps_clip = 1e-7);
// d loss_inp / d predicted; zero where the clip is active.
std::vector<double> loss_inp_grad(const DigitalWavefrontSet& target, const DigitalWavefrontSet& predicted,
                                  double eps_clip = 1e-7);
double loss_joint(double rec, double inp, double lambda);
double loss_joint(const GridImage& y1, const GridImage& y2, const DigitalWavefrontSet& target,
                  const DigitalWavefrontSet& predicted, double lambda, double eps_clip = 1e-7);

void write_weights(const std::filesystem::path& path, const LpdParams& params);
LpdParams read_weights(const std::filesystem::path& path);

}  // namespace mct

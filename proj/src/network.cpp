#include "mct/network.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mct/io.hpp"
#include "mct/parallel.hpp"

namespace mct {

namespace {

struct Span2 {
  int lo, hi;
};

// Rows (or columns) y of the output for which y + d stays inside [0, n).
Span2 valid_range(int n, int d) { return {std::max(0, -d), std::min(n, n - d)}; }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Rows are (input channel, tap); columns are output pixels; zero padding.
RowMat im2col(const Tensor& in) {
  const int W = in.width, H = in.height;
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(in.channels) * 9, static_cast<Eigen::Index>(in.plane()));
  for (int i = 0; i < in.channels; ++i) {
    const double* src = in.channel(i);
    for (int t = 0; t < 9; ++t) {
      const int dy = t / 3 - 1, dx = t % 3 - 1;
      double* row = col.row(i * 9 + t).data();
      const Span2 ys = valid_range(H, dy), xs = valid_range(W, dx);
      for (int y = ys.lo; y < ys.hi; ++y)
        std::copy(src + static_cast<std::size_t>(y + dy) * W + dx + xs.lo, src + static_cast<std::size_t>(y + dy) * W + dx + xs.hi,
                  row + static_cast<std::size_t>(y) * W + xs.lo);
    }
  }
  return col;
}

void col2im_add(const RowMat& col, Tensor& out) {
  const int W = out.width, H = out.height;
  for (int i = 0; i < out.channels; ++i) {
    double* dst = out.channel(i);
    for (int t = 0; t < 9; ++t) {
      const int dy = t / 3 - 1, dx = t % 3 - 1;
      const double* row = col.row(i * 9 + t).data();
      const Span2 ys = valid_range(H, dy), xs = valid_range(W, dx);
      for (int y = ys.lo; y < ys.hi; ++y) {
        double* d = dst + static_cast<std::size_t>(y + dy) * W + dx;
        const double* r = row + static_cast<std::size_t>(y) * W;
        for (int x = xs.lo; x < xs.hi; ++x) d[x] += r[x];
      }
    }
  }
}

Eigen::Map<const RowMat> weight_matrix(const std::vector<double>& w, int cout, int cin) {
  return {w.data(), cout, static_cast<Eigen::Index>(cin) * 9};
}

Eigen::Map<RowMat> tensor_matrix(Tensor& t) {
  return {t.data.data(), t.channels, static_cast<Eigen::Index>(t.plane())};
}

void conv_forward(const Tensor& in, const std::vector<double>& w, const std::vector<double>& b, Tensor& out) {
  Eigen::setNbThreads(thread_count());
  const RowMat col = im2col(in);
  auto o = tensor_matrix(out);
  o.noalias() = weight_matrix(w, out.channels, in.channels) * col;
  if (!b.empty())
    for (int c = 0; c < out.channels; ++c) o.row(c).array() += b[c];
}

void conv_backward(const Tensor& in, const std::vector<double>& w, const Tensor& gout, Tensor& gin,
                   std::vector<double>& gw, std::vector<double>* gb) {
  Eigen::setNbThreads(thread_count());
  const RowMat col = im2col(in);
  Eigen::Map<const RowMat> g(gout.data.data(), gout.channels, static_cast<Eigen::Index>(gout.plane()));
  Eigen::Map<RowMat> gwm(gw.data(), gout.channels, static_cast<Eigen::Index>(in.channels) * 9);
  gwm.noalias() += g * col.transpose();
  if (gb)
    for (int o = 0; o < gout.channels; ++o) (*gb)[o] += g.row(o).sum();
  const RowMat gcol = weight_matrix(w, gout.channels, in.channels).transpose() * g;
  col2im_add(gcol, gin);
}

Sinogram to_sinogram(const Tensor& t, int c, const Geometry& geo) {
  Sinogram g = geo.empty_sinogram();
  auto v = g.values();
  std::copy_n(t.channel(c), t.plane(), v.begin());
  for (int l = 0; l < geo.m2(); ++l)
    if (!geo.mask[l]) g.mask_out(l);
  return g;
}

std::array<int, 5> dual_plan(const LpdConfig& c) { return {c.state + 2, c.hidden, c.hidden, c.hidden, c.state}; }
std::array<int, 5> primal_plan(const LpdConfig& c) { return {c.state + 1, c.hidden, c.hidden, c.hidden, c.state}; }

}  // namespace

Tensor::Tensor(int channels_, int width_, int height_, double fill)
    : channels(channels_), width(width_), height(height_),
      data(static_cast<std::size_t>(channels_) * width_ * height_, fill) {}

GridImage Tensor::image(int c) const {
  return GridImage(width, height, std::vector<double>(channel(c), channel(c) + plane()));
}

void Tensor::set_channel(int c, std::span<const double> values) {
  if (values.size() != plane()) throw ShapeError("channel size mismatch");
  std::copy(values.begin(), values.end(), channel(c));
}

ResNetParams::ResNetParams(std::array<int, 5> plan_, bool bias) : plan(plan_) {
  for (int j = 0; j < 4; ++j) {
    if (plan[j] < 1 || plan[j + 1] < 1) throw std::invalid_argument("channel counts must be positive");
    weights[j].assign(static_cast<std::size_t>(plan[j]) * plan[j + 1] * 9, 0.0);
    if (bias) biases[j].assign(plan[j + 1], 0.0);
  }
  if (plan[4] > plan[0]) throw std::invalid_argument("residual needs k4 <= k0");
}

std::size_t ResNetParams::parameter_count() const {
  std::size_t n = 0;
  for (int j = 0; j < 4; ++j) n += weights[j].size() + biases[j].size();
  return n;
}

std::vector<double> ResNetParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (int j = 0; j < 4; ++j) {
    out.insert(out.end(), weights[j].begin(), weights[j].end());
    out.insert(out.end(), biases[j].begin(), biases[j].end());
  }
  return out;
}

void ResNetParams::assign(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("parameter count mismatch");
  auto it = values.begin();
  for (int j = 0; j < 4; ++j) {
    std::copy_n(it, weights[j].size(), weights[j].begin());
    it += static_cast<std::ptrdiff_t>(weights[j].size());
    std::copy_n(it, biases[j].size(), biases[j].begin());
    it += static_cast<std::ptrdiff_t>(biases[j].size());
  }
}

void ResNetParams::validate() const {
  for (int j = 0; j < 4; ++j) {
    if (weights[j].size() != static_cast<std::size_t>(plan[j]) * plan[j + 1] * 9)
      throw ShapeError("filter tensor does not match the channel plan");
    if (!biases[j].empty() && biases[j].size() != static_cast<std::size_t>(plan[j + 1]))
      throw ShapeError("bias vector does not match the channel plan");
    for (double v : weights[j])
      if (!std::isfinite(v)) throw std::domain_error("non-finite filter entry");
  }
  if (plan[4] > plan[0]) throw ShapeError("residual needs k4 <= k0");
}

ResNetParams random_resnet(std::array<int, 5> plan, std::uint64_t seed, bool bias, double last_scale) {
  ResNetParams p(plan, bias);
  std::mt19937_64 rng(seed);
  for (int j = 0; j < 4; ++j) {
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (9.0 * plan[j])) * (j == 3 ? last_scale : 1.0));
    for (double& v : p.weights[j]) v = nd(rng);
  }
  return p;
}

ResNetCapture resnet_forward(const ResNetParams& params, const Tensor& input) {
  if (input.channels != params.plan[0]) throw ShapeError("input channel count does not match k0");
  ResNetCapture cap;
  cap.input = input;
  const Tensor* cur = &cap.input;
  for (int j = 0; j < 3; ++j) {
    cap.pre[j] = Tensor(params.plan[j + 1], input.width, input.height);
    conv_forward(*cur, params.weights[j], params.biases[j], cap.pre[j]);
    cap.act[j] = cap.pre[j];
    for (double& v : cap.act[j].data) v = v > 0.0 ? v : 0.0;
    cur = &cap.act[j];
  }
  cap.output = Tensor(params.plan[4], input.width, input.height);
  conv_forward(*cur, params.weights[3], params.biases[3], cap.output);
  for (int c = 0; c < params.plan[4]; ++c) {
    double* o = cap.output.channel(c);
    const double* x = input.channel(c);
    for (std::size_t p = 0; p < input.plane(); ++p) o[p] += x[p];
  }
  return cap;
}

ResNetGradients resnet_backward(const ResNetParams& params, const ResNetCapture& cap, const Tensor& grad_output,
                                const std::array<Tensor, 3>* pre_grad) {
  if (!cap.output.same_shape(grad_output)) throw ShapeError("upstream gradient does not match the capture");
  if (cap.input.channels != params.plan[0] || cap.pre[0].channels != params.plan[1])
    throw std::invalid_argument("capture missing or from different parameters");
  ResNetGradients g{ResNetParams(params.plan, params.has_bias()),
                    Tensor(params.plan[0], cap.input.width, cap.input.height)};
  for (int c = 0; c < params.plan[4]; ++c)
    std::copy_n(grad_output.channel(c), grad_output.plane(), g.input.channel(c));

  Tensor upstream = grad_output;
  for (int j = 3; j >= 0; --j) {
    const Tensor& in = j == 0 ? cap.input : cap.act[j - 1];
    Tensor gin(in.channels, in.width, in.height);
    conv_backward(in, params.weights[j], upstream, gin, g.params.weights[j],
                  params.has_bias() ? &g.params.biases[j] : nullptr);
    if (j == 0) {
      for (std::size_t i = 0; i < gin.data.size(); ++i) g.input.data[i] += gin.data[i];
      break;
    }
    const Tensor& pre = cap.pre[j - 1];
    for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] = pre.data[i] > 0.0 ? gin.data[i] : 0.0;
    if (pre_grad) {
      const Tensor& extra = (*pre_grad)[j - 1];
      if (!extra.data.empty()) {
        if (!extra.same_shape(pre)) throw ShapeError("pre-activation gradient shape mismatch");
        for (std::size_t i = 0; i < gin.data.size(); ++i) gin.data[i] += extra.data[i];
      }
    }
    upstream = std::move(gin);
  }
  return g;
}

LpdParams LpdParams::zeros(const LpdConfig& config) {
  if (config.iterations < 1 || config.state < 1 || config.hidden < 1)
    throw std::invalid_argument("LPD sizes must be positive");
  LpdParams p;
  p.config = config;
  for (int i = 0; i < config.iterations; ++i) {
    p.dual.emplace_back(dual_plan(config), config.bias);
    p.primal.emplace_back(primal_plan(config), config.bias);
  }
  return p;
}

LpdParams LpdParams::random(const LpdConfig& config, std::uint64_t seed, double last_scale) {
  LpdParams p = zeros(config);
  for (int i = 0; i < config.iterations; ++i) {
    p.dual[i] = random_resnet(dual_plan(config), mix_seed(seed, 2 * i), config.bias, last_scale);
    p.primal[i] = random_resnet(primal_plan(config), mix_seed(seed, 2 * i + 1), config.bias, last_scale);
  }
  return p;
}

std::size_t LpdParams::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < dual.size(); ++i) n += dual[i].parameter_count() + primal[i].parameter_count();
  return n;
}

std::vector<double> LpdParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (std::size_t i = 0; i < dual.size(); ++i) {
    auto d = dual[i].flatten(), p = primal[i].flatten();
    out.insert(out.end(), d.begin(), d.end());
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

void LpdParams::assign(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("parameter count mismatch");
  std::size_t off = 0;
  for (std::size_t i = 0; i < dual.size(); ++i) {
    dual[i].assign(values.subspan(off, dual[i].parameter_count()));
    off += dual[i].parameter_count();
    primal[i].assign(values.subspan(off, primal[i].parameter_count()));
    off += primal[i].parameter_count();
  }
}

void LpdParams::validate() const {
  if (static_cast<int>(dual.size()) != config.iterations || static_cast<int>(primal.size()) != config.iterations)
    throw ShapeError("iteration count does not match the block lists");
  for (int i = 0; i < config.iterations; ++i) {
    if (dual[i].plan != dual_plan(config) || primal[i].plan != primal_plan(config))
      throw ShapeError("inconsistent channel plan across iterations");
    dual[i].validate();
    primal[i].validate();
  }
}

Tensor sinogram_tensor(const Sinogram& g) {
  Tensor t(1, g.m1(), g.m2());
  t.set_channel(0, g.values());
  return t;
}

LpdCapture lpd_forward(const LpdParams& params, const Sinogram& g, const Geometry& geo) {
  params.validate();
  geo.validate();
  if (!geo.matches(g)) throw ShapeError("sinogram does not match geometry");
  const int S = params.config.state;
  const int m1 = geo.m1, m2 = geo.m2();
  Tensor f(S, geo.n1, geo.n2);
  Tensor h(S, m1, m2);
  for (int c = 0; c < S; ++c) h.set_channel(c, g.values());

  LpdCapture cap;
  for (int i = 0; i < params.config.iterations; ++i) {
    Tensor din(S + 2, m1, m2);
    std::copy(h.data.begin(), h.data.end(), din.data.begin());
    din.set_channel(S, radon(f.image(0), geo).values());
    din.set_channel(S + 1, g.values());
    cap.dual.push_back(resnet_forward(params.dual[i], din));
    h = cap.dual.back().output;

    Tensor pin(S + 1, geo.n1, geo.n2);
    std::copy(f.data.begin(), f.data.end(), pin.data.begin());
    pin.set_channel(S, backproject(to_sinogram(h, 0, geo), geo).values());
    cap.primal.push_back(resnet_forward(params.primal[i], pin));
    f = cap.primal.back().output;
  }
  cap.output = f.image(0);
  return cap;
}

LpdParams lpd_backward(const LpdParams& params, const LpdCapture& cap, const Geometry& geo,
                       const GridImage& grad_output, const LpdPreGrads* pre_grad) {
  const int S = params.config.state;
  const int N = params.config.iterations;
  if (static_cast<int>(cap.dual.size()) != N) throw std::invalid_argument("capture missing");
  if (!geo.matches(grad_output)) throw ShapeError("output gradient does not match geometry");
  LpdParams grads = LpdParams::zeros(params.config);
  Tensor gf(S, geo.n1, geo.n2);
  gf.set_channel(0, grad_output.values());
  Tensor gh(S, geo.m1, geo.m2());

  for (int i = N - 1; i >= 0; --i) {
    auto gp = resnet_backward(params.primal[i], cap.primal[i], gf, pre_grad ? &pre_grad->primal[i] : nullptr);
    grads.primal[i] = std::move(gp.params);
    // d backproject / d h_0
    const Sinogram gbh = backproject_transpose(gp.input.image(S), geo);
    {
      double* h0 = gh.channel(0);
      const auto v = gbh.values();
      for (std::size_t p = 0; p < gh.plane(); ++p) h0[p] += v[p];
    }
    auto gd = resnet_backward(params.dual[i], cap.dual[i], gh, pre_grad ? &pre_grad->dual[i] : nullptr);
    grads.dual[i] = std::move(gd.params);

    Tensor next_gf(S, geo.n1, geo.n2);
    std::copy_n(gp.input.data.begin(), next_gf.data.size(), next_gf.data.begin());
    const GridImage grf = radon_transpose(to_sinogram(gd.input, S, geo), geo);
    double* f0 = next_gf.channel(0);
    const auto v = grf.values();
    for (std::size_t p = 0; p < next_gf.plane(); ++p) f0[p] += v[p];
    gf = std::move(next_gf);

    Tensor next_gh(S, geo.m1, geo.m2());
    std::copy_n(gd.input.data.begin(), next_gh.data.size(), next_gh.data.begin());
    gh = std::move(next_gh);
  }
  return grads;
}

double loss_rec(const GridImage& y1, const GridImage& y2) {
  if (!y1.same_shape(y2)) throw ShapeError("loss_rec shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < y1.size(); ++i) {
    const double d = y1.values()[i] - y2.values()[i];
    s += d * d;
  }
  return s;
}

GridImage loss_rec_grad(const GridImage& prediction, const GridImage& target) {
  if (!prediction.same_shape(target)) throw ShapeError("loss_rec shape mismatch");
  GridImage g(prediction.n1(), prediction.n2());
  for (std::size_t i = 0; i < g.size(); ++i) g.values()[i] = 2.0 * (prediction.values()[i] - target.values()[i]);
  return g;
}

double loss_inp(const DigitalWavefrontSet& target, const DigitalWavefrontSet& predicted, double eps_clip) {
  if (!target.same_shape(predicted)) throw ShapeError("loss_inp shape mismatch");
  if (!(eps_clip > 0.0 && eps_clip <= 1.0)) throw std::invalid_argument("eps_clip must lie in (0, 1]");
  double s = 0.0;
  const auto y = target.data(), yp = predicted.data();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] != 0.0) s -= y[i] * std::log(std::clamp(yp[i], eps_clip, 1.0));
  return s;
}

std::vector<double> loss_inp_grad(const DigitalWavefrontSet& target, const DigitalWavefrontSet& predicted,
                                  double eps_clip) {
  if (!target.same_shape(predicted)) throw ShapeError("loss_inp shape mismatch");
  if (!(eps_clip > 0.0 && eps_clip <= 1.0)) throw std::invalid_argument("eps_clip must lie in (0, 1]");
  std::vector<double> g(target.size(), 0.0);
  const auto y = target.data(), yp = predicted.data();
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y[i] != 0.0 && yp[i] > eps_clip && yp[i] < 1.0) g[i] = -y[i] / yp[i];
  return g;
}

double loss_joint(double rec, double inp, double lambda) { return lambda * rec + (1.0 - lambda) * inp; }

double loss_joint(const GridImage& y1, const GridImage& y2, const DigitalWavefrontSet& target,
                  const DigitalWavefrontSet& predicted, double lambda, double eps_clip) {
  return loss_joint(loss_rec(y1, y2), loss_inp(target, predicted, eps_clip), lambda);
}

void write_weights(const std::filesystem::path& path, const LpdParams& params) {
  params.validate();
  io::Container c;
  c.dtype = "f32le";
  c.kind = "weights";
  const auto flat = params.flatten();
  c.shape = {static_cast<std::int64_t>(flat.size())};
  c.meta = {{"iterations", params.config.iterations},
            {"state", params.config.state},
            {"hidden", params.config.hidden},
            {"bias", params.config.bias},
            {"dual_plan", dual_plan(params.config)},
            {"primal_plan", primal_plan(params.config)}};
  c.payload = io::encode_f32(flat);
  io::write_container(path, c);
}

LpdParams read_weights(const std::filesystem::path& path) {
  const auto c = io::read_container(path);
  if (c.kind != "weights" || c.dtype != "f32le" || c.shape.size() != 1)
    throw io::FormatError("not a weights container");
  LpdConfig cfg;
  try {
    cfg.iterations = c.meta.at("iterations").get<int>();
    cfg.state = c.meta.at("state").get<int>();
    cfg.hidden = c.meta.at("hidden").get<int>();
    cfg.bias = c.meta.at("bias").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw io::FormatError(std::string("bad weights header: ") + e.what());
  }
  LpdParams p = LpdParams::zeros(cfg);
  const auto values = io::decode_f32(c.payload);
  if (values.size() != p.parameter_count()) throw io::FormatError("shape/header mismatch");
  p.assign(values);
  return p;
}

}  // namespace mct

#include "mct/train.hpp"

#include <cmath>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>

#include "mct/io.hpp"
#include "mct/microlocal.hpp"
#include "mct/parallel.hpp"
#include "mct/phantom.hpp"

namespace mct {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (steps < 0) throw std::invalid_argument("step count must be non-negative");
  if (batch < 1) throw std::invalid_argument("batch size must be positive");
  if (!(lambda > 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in (0, 1]");
  if (!(soft.tau > 0.0 && soft.tau_grad > 0.0)) throw std::invalid_argument("temperatures must be positive");
  if (bins < 1 || sino_bins < 1) throw std::invalid_argument("bin counts must be positive");
  if (!(eps_clip > 0.0 && eps_clip <= 1.0)) throw std::invalid_argument("eps_clip must lie in (0, 1]");
  if (noise < 0.0) throw std::invalid_argument("noise level must be non-negative");
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.steps = j.value("steps", c.steps);
  c.batch = j.value("batch", c.batch);
  c.lambda = j.value("lambda", c.lambda);
  c.seed = j.value("seed", c.seed);
  if (j.contains("optimizer")) {
    const std::string o = j.at("optimizer");
    if (o == "sgd") c.optimizer = Optimizer::sgd;
    else if (o == "adam") c.optimizer = Optimizer::adam;
    else throw std::invalid_argument("unknown optimizer '" + o + "'");
  }
  if (j.contains("schedule")) {
    const std::string o = j.at("schedule");
    if (o == "constant") c.schedule = Schedule::constant;
    else if (o == "cosine") c.schedule = Schedule::cosine;
    else throw std::invalid_argument("unknown schedule '" + o + "'");
  }
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.soft.tau = j.value("tau", c.soft.tau);
  c.soft.tau_grad = j.value("tau_grad", c.soft.tau_grad);
  c.soft.window = j.value("bump_window", c.soft.window);
  c.bins = j.value("bins", c.bins);
  c.sino_bins = j.value("sino_bins", c.sino_bins);
  c.eps_clip = j.value("eps_clip", c.eps_clip);
  c.noise = j.value("noise", c.noise);
  c.validate();
  return c;
}

double learning_rate_at(const TrainConfig& c, int step) {
  if (c.schedule == Schedule::constant || c.steps <= 1) return c.learning_rate;
  return 0.5 * c.learning_rate * (1.0 + std::cos(std::numbers::pi * (step - 1) / c.steps));
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"steps", c.steps},
          {"batch", c.batch},
          {"lambda", c.lambda},
          {"seed", c.seed},
          {"optimizer", c.optimizer == Optimizer::sgd ? "sgd" : "adam"},
          {"schedule", c.schedule == Schedule::constant ? "constant" : "cosine"},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"tau", c.soft.tau},
          {"tau_grad", c.soft.tau_grad},
          {"bump_window", c.soft.window},
          {"bins", c.bins},
          {"sino_bins", c.sino_bins},
          {"eps_clip", c.eps_clip},
          {"noise", c.noise}};
}

TrainItem make_train_item(const GridImage& image, const DigitalWavefrontSet& dwf, const Geometry& geo,
                          double noise, std::uint64_t noise_seed, int sino_bins) {
  if (image.n1() != geo.n1 || image.n2() != geo.n2 || dwf.n1() != image.n1() || dwf.n2() != image.n2())
    throw ShapeError("training item does not match the geometry");
  TrainItem item;
  item.image = image;
  Sinogram g = radon(image, geo);
  item.data = noise > 0.0 ? add_noise(g, noise, noise_seed) : g;
  const auto visible = visible_orientations(geo, dwf.bins());
  item.dwf_target = dwf;
  for (int j = 0; j < dwf.n2(); ++j)
    for (int i = 0; i < dwf.n1(); ++i)
      for (int k = 0; k < dwf.bins(); ++k)
        if (!visible[k]) item.dwf_target(i, j, k) = 0.0;
  item.dwf_g = dwf_image_to_sino(dwf, geo, sino_bins);
  return item;
}

std::vector<TrainItem> load_train_set(const std::filesystem::path& dir, const Geometry& geo, const TrainConfig& config,
                                      int limit) {
  std::vector<TrainItem> items;
  for (int i = 0; limit < 0 || i < limit; ++i) {
    const auto paths = dataset_item_paths(dir, i);
    if (!std::filesystem::exists(paths.image) || !std::filesystem::exists(paths.dwf)) break;
    const GridImage image = io::read_image(paths.image);
    const DigitalWavefrontSet dwf = io::read_dwf(paths.dwf);
    if (dwf.bins() != config.bins)
      throw ShapeError("dataset DWF has " + std::to_string(dwf.bins()) + " bins, config expects " +
                       std::to_string(config.bins));
    items.push_back(make_train_item(image, dwf, geo, config.noise, mix_seed(config.seed ^ 0x5eedULL, i),
                                    config.sino_bins));
  }
  if (items.empty()) throw std::runtime_error("no training items found in " + dir.string());
  return items;
}

namespace {

SoftLpdConfig soft_config(const TrainConfig& c) {
  SoftLpdConfig s;
  s.bins = c.bins;
  s.sino_bins = c.sino_bins;
  s.options = c.soft;
  return s;
}

void scale_pre_grads(LpdPreGrads& g, double a) {
  for (auto* set : {&g.dual, &g.primal})
    for (auto& arr : *set)
      for (auto& t : arr)
        for (double& v : t.data) v *= a;
}

}  // namespace

ItemLoss item_loss_and_gradient(const LpdParams& params, const TrainItem& item, const Geometry& geo,
                                const TrainConfig& config, const SoftLpdMaps* maps, LpdParams* grad) {
  ItemLoss out;
  const LpdCapture cap = lpd_forward(params, item.data, geo);
  out.rec = loss_rec(cap.output, item.image);
  GridImage gout = loss_rec_grad(cap.output, item.image);
  for (double& v : gout.values()) v *= config.lambda;
  LpdPreGrads pre;
  const bool joint = config.lambda < 1.0;
  if (joint) {
    if (!maps) throw std::invalid_argument("joint training needs pushforward maps");
    const SoftLpdConfig sc = soft_config(config);
    SoftLpdTape tape;
    const DigitalWavefrontSet soft = soft_prop_lpd(item.dwf_g, cap, geo, sc, *maps, grad ? &tape : nullptr);
    out.inp = loss_inp(item.dwf_target, soft, config.eps_clip);
    if (grad) {
      pre = soft_prop_lpd_backward(tape, cap, sc, *maps, loss_inp_grad(item.dwf_target, soft, config.eps_clip));
      scale_pre_grads(pre, 1.0 - config.lambda);
    }
  }
  out.joint = loss_joint(out.rec, out.inp, config.lambda);
  if (grad) *grad = lpd_backward(params, cap, geo, gout, joint ? &pre : nullptr);
  return out;
}

double evaluate_inp(const LpdParams& params, const TrainItem& item, const Geometry& geo, const TrainConfig& config,
                    const SoftLpdMaps& maps) {
  const LpdCapture cap = lpd_forward(params, item.data, geo);
  return loss_inp(item.dwf_target, soft_prop_lpd(item.dwf_g, cap, geo, soft_config(config), maps), config.eps_clip);
}

TrainResult train(const LpdParams& init, const std::vector<TrainItem>& data, const Geometry& geo,
                  const TrainConfig& config, std::ostream* csv) {
  config.validate();
  init.validate();
  if (data.empty()) throw std::invalid_argument("empty training set");
  TrainResult res{init, {}};
  if (config.steps == 0) return res;
  std::optional<SoftLpdMaps> maps;
  if (config.lambda < 1.0) maps.emplace(geo, soft_config(config));

  std::vector<double> theta = init.flatten();
  std::vector<double> m(theta.size(), 0.0), v(theta.size(), 0.0);
  std::mt19937_64 rng(mix_seed(config.seed, 0x7a11));
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  if (csv) *csv << std::setprecision(17) << "step,loss_rec,loss_inp,loss_joint\n";
  LpdParams params = init;
  for (int step = 1; step <= config.steps; ++step) {
    std::vector<double> g(theta.size(), 0.0);
    TrainLogRow row;
    row.step = step;
    for (int b = 0; b < config.batch; ++b) {
      const TrainItem& item = data[pick(rng)];
      LpdParams grad;
      const ItemLoss l = item_loss_and_gradient(params, item, geo, config, maps ? &*maps : nullptr, &grad);
      const auto gf = grad.flatten();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += gf[i] / config.batch;
      row.loss_rec += l.rec / config.batch;
      row.loss_inp += l.inp / config.batch;
      row.loss_joint += l.joint / config.batch;
    }
    bool finite = std::isfinite(row.loss_joint);
    for (double x : g) finite = finite && std::isfinite(x);
    if (!finite) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << ": loss_rec=" << row.loss_rec << " loss_inp=" << row.loss_inp
          << " loss_joint=" << row.loss_joint << " (try a smaller learning rate)";
      throw TrainingDiverged(msg.str());
    }
    const double lr = learning_rate_at(config, step);
    if (config.optimizer == Optimizer::sgd) {
      for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr * g[i];
    } else {
      const double c1 = 1.0 - std::pow(config.beta1, step), c2 = 1.0 - std::pow(config.beta2, step);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.adam_eps);
      }
    }
    params.assign(theta);
    res.log.push_back(row);
    if (csv) {
      *csv << row.step << ',' << row.loss_rec << ',';
      if (config.lambda < 1.0) *csv << row.loss_inp;
      *csv << ',' << row.loss_joint << '\n';
    }
  }
  res.params = params;
  return res;
}

}  // namespace mct

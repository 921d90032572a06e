#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mct/network.hpp"
#include "mct/radon.hpp"
#include "mct/softprop.hpp"

namespace mct {

enum class Optimizer { sgd, adam };
enum class Schedule { constant, cosine };

struct TrainConfig {
  double learning_rate = 1e-3;
  int steps = 500;
  int batch = 1;
  double lambda = 1.0;  // 1: reconstruction loss only
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;
  Schedule schedule = Schedule::cosine;  // learning rate over the steps
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  SoftOptions soft;
  int bins = 16;
  int sino_bins = 64;
  double eps_clip = 1e-7;
  double noise = 0.05;  // relative Gaussian noise added to the training sinograms

  void validate() const;
};

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json train_config_to_json(const TrainConfig& c);

// Learning rate used at step (1-based).
double learning_rate_at(const TrainConfig& c, int step);

struct TrainItem {
  GridImage image;
  Sinogram data;                   // restricted and noisy
  DigitalWavefrontSet dwf_target;  // ground truth restricted to visible bins
  DigitalWavefrontSet dwf_g;       // sinogram-domain DWF fed to the propagation
};

TrainItem make_train_item(const GridImage& image, const DigitalWavefrontSet& dwf, const Geometry& geo,
                          double noise, std::uint64_t noise_seed, int sino_bins);

// Reads image_*/dwf_* pairs written by dataset_generate, in index order.
std::vector<TrainItem> load_train_set(const std::filesystem::path& dir, const Geometry& geo, const TrainConfig& config,
                                      int limit = -1);

struct TrainLogRow {
  int step = 0;
  double loss_rec = 0, loss_inp = 0, loss_joint = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  LpdParams params;
  std::vector<TrainLogRow> log;
};

// One optimisation run. The CSV stream, if given, receives
// "step,loss_rec,loss_inp,loss_joint" rows; loss_inp is only evaluated when lambda < 1.
TrainResult train(const LpdParams& init, const std::vector<TrainItem>& data, const Geometry& geo,
                  const TrainConfig& config, std::ostream* csv = nullptr);

struct ItemLoss {
  double rec = 0, inp = 0, joint = 0;
};

// Losses and parameter gradient for one item.
ItemLoss item_loss_and_gradient(const LpdParams& params, const TrainItem& item, const Geometry& geo,
                                const TrainConfig& config, const SoftLpdMaps* maps, LpdParams* grad);

// Soft-propagated DWF of the reconstruction, and its ell_inp against the target.
double evaluate_inp(const LpdParams& params, const TrainItem& item, const Geometry& geo, const TrainConfig& config,
                    const SoftLpdMaps& maps);

}  // namespace mct

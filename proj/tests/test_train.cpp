#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "mct/io.hpp"
#include "mct/phantom.hpp"
#include "mct/train.hpp"
#include "test_support.hpp"

using namespace mct;

namespace {

constexpr double kPi = std::numbers::pi;

struct Setup {
  Geometry geo;
  std::vector<TrainItem> items;
  LpdParams init;
};

Setup small_setup(int n, int count, int hidden, const TrainConfig& cfg) {
  Setup s;
  s.geo = restrict_geometry(Geometry::uniform(n, 24), LimitedAngle{kPi / 2, 40.0 * kPi / 180.0});
  const auto dir = testing::temp_dir("train_set_" + std::to_string(n));
  PhantomConfig pc;
  dataset_generate(count, 11, n, n, cfg.bins, dir, pc, 2);
  s.items = load_train_set(dir, s.geo, cfg);
  LpdConfig lc;
  lc.hidden = hidden;
  s.init = LpdParams::random(lc, 5);
  return s;
}

TrainConfig base_config() {
  TrainConfig c;
  c.steps = 3;
  c.bins = 16;
  c.sino_bins = 16;
  c.soft.window = 3;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("zero steps returns the initial parameters") {
  auto cfg = base_config();
  auto s = small_setup(16, 2, 4, cfg);
  cfg.steps = 0;
  std::ostringstream csv;
  const auto r = train(s.init, s.items, s.geo, cfg, &csv);
  CHECK(r.params.flatten() == s.init.flatten());
  CHECK(r.log.empty());
}

TEST_CASE("training is bitwise reproducible") {
  auto cfg = base_config();
  cfg.lambda = 0.9;
  auto s = small_setup(16, 3, 4, cfg);
  std::ostringstream a, b;
  const auto r1 = train(s.init, s.items, s.geo, cfg, &a);
  const auto r2 = train(s.init, s.items, s.geo, cfg, &b);
  CHECK(r1.params.flatten() == r2.params.flatten());
  CHECK(a.str() == b.str());
  CHECK(a.str().rfind("step,loss_rec,loss_inp,loss_joint\n", 0) == 0);
  CHECK(r1.log.size() == 3);
  for (const auto& row : r1.log) CHECK(row.loss_inp > 0.0);
}

TEST_CASE("reconstruction loss decreases on a fixed item") {
  auto cfg = base_config();
  cfg.steps = 40;
  cfg.learning_rate = 1e-3;
  auto s = small_setup(16, 1, 8, cfg);
  const auto before = item_loss_and_gradient(s.init, s.items[0], s.geo, cfg, nullptr, nullptr);
  const auto r = train(s.init, s.items, s.geo, cfg);
  const auto after = item_loss_and_gradient(r.params, s.items[0], s.geo, cfg, nullptr, nullptr);
  MESSAGE("loss_rec " << before.rec << " -> " << after.rec);
  CHECK(after.rec < 0.8 * before.rec);
}

TEST_CASE("joint gradient matches finite differences along a random direction") {
  auto cfg = base_config();
  cfg.lambda = 0.7;
  cfg.soft.tau = 0.3;
  cfg.soft.tau_grad = 0.3;
  auto s = small_setup(16, 1, 3, cfg);
  const SoftLpdMaps maps(s.geo, SoftLpdConfig{cfg.bins, cfg.sino_bins, cfg.soft});
  LpdParams grad;
  item_loss_and_gradient(s.init, s.items[0], s.geo, cfg, &maps, &grad);
  const auto theta = s.init.flatten();
  const auto g = grad.flatten();
  std::mt19937_64 rng(9);
  std::normal_distribution<double> nd;
  std::vector<double> dir(theta.size());
  for (double& d : dir) d = nd(rng);
  double analytic = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) analytic += g[i] * dir[i];
  const double h = 1e-6;
  auto at = [&](double t) {
    auto th = theta;
    for (std::size_t i = 0; i < th.size(); ++i) th[i] += t * dir[i];
    LpdParams p = s.init;
    p.assign(th);
    return item_loss_and_gradient(p, s.items[0], s.geo, cfg, &maps, nullptr).joint;
  };
  const double fd = (at(h) - at(-h)) / (2 * h);
  MESSAGE("directional derivative analytic " << analytic << " fd " << fd);
  CHECK(std::abs(analytic - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  auto cfg = base_config();
  cfg.optimizer = Optimizer::sgd;
  cfg.learning_rate = 1e30;
  cfg.steps = 20;
  auto s = small_setup(16, 1, 4, cfg);
  bool thrown = false;
  try {
    train(s.init, s.items, s.geo, cfg);
  } catch (const TrainingDiverged& e) {
    thrown = true;
    CHECK(std::string(e.what()).find("diverged") != std::string::npos);
  }
  CHECK(thrown);
}

TEST_CASE("config validation and json round trip") {
  TrainConfig c;
  c.lambda = 0.0;
  CHECK_THROWS(c.validate());
  c.lambda = 1.5;
  CHECK_THROWS(c.validate());
  c.lambda = 0.5;
  c.optimizer = Optimizer::sgd;
  c.steps = 7;
  c.schedule = Schedule::constant;
  const auto back = train_config_from_json(train_config_to_json(c));
  CHECK(back.lambda == 0.5);
  CHECK(back.optimizer == Optimizer::sgd);
  CHECK(back.steps == 7);
  CHECK(back.schedule == Schedule::constant);
  CHECK_THROWS(train_config_from_json({{"schedule", "step"}}));
  CHECK_THROWS(train_config_from_json({{"optimizer", "rmsprop"}}));
}

TEST_CASE("cosine schedule decays from the base rate") {
  TrainConfig c;
  c.learning_rate = 2e-3;
  c.steps = 100;
  CHECK(learning_rate_at(c, 1) == 2e-3);
  CHECK(learning_rate_at(c, 51) == doctest::Approx(1e-3));
  CHECK(learning_rate_at(c, 100) > 0.0);
  CHECK(learning_rate_at(c, 100) < 1e-6);
  c.schedule = Schedule::constant;
  CHECK(learning_rate_at(c, 100) == 2e-3);
}

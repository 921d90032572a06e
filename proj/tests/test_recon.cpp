#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mct/metrics.hpp"
#include "mct/phantom.hpp"
#include "mct/recon.hpp"
#include "test_support.hpp"

using namespace mct;

namespace {

constexpr double kPi = std::numbers::pi;

double norm(const GridImage& f) { return std::sqrt(image_inner(f, f)); }

struct Problem {
  Geometry geo;
  GridImage truth;
  Sinogram g;
};

Problem disk_problem(int n, int m2, double wedge = 0.0) {
  Problem p;
  p.geo = Geometry::uniform(n, m2);
  if (wedge > 0) p.geo = restrict_geometry(p.geo, LimitedAngle{kPi / 2, wedge});
  p.truth = rasterize(disk_phantom({0.1, -0.05}, 0.5), n, n, 4);
  p.g = radon(p.truth, p.geo);
  return p;
}

}  // namespace

TEST_CASE("fbp") {
  auto full = disk_problem(128, 180);
  CHECK(norm(recon_fbp(full.geo.empty_sinogram(), full.geo)) == 0.0);
  const double e_full = l2_relative_error(recon_fbp(full.g, full.geo), full.truth);
  auto wedge = disk_problem(128, 180, 40 * kPi / 180);
  const double e_wedge = l2_relative_error(recon_fbp(wedge.g, wedge.geo), wedge.truth);
  MESSAGE("full " << e_full << " wedge " << e_wedge);
  CHECK(e_full < 0.10);
  CHECK(e_wedge > e_full);
  CHECK_THROWS_AS(recon_fbp(full.g, Geometry::uniform(64, 180)), ShapeError);
}

TEST_CASE("tikhonov") {
  auto pr = disk_problem(48, 60, 40 * kPi / 180);
  SolverReport rep;
  CHECK(norm(recon_tikhonov(pr.geo.empty_sinogram(), pr.geo, 1e-2, 50, &rep)) == 0.0);
  CHECK(rep.converged);

  auto f = recon_tikhonov(pr.g, pr.geo, 1e-2, 500, &rep);
  // Residual oracle computed here, independently of the solver's own report.
  GridImage lhs = backproject(radon(f, pr.geo), pr.geo);
  const GridImage rhs = backproject(pr.g, pr.geo);
  for (std::size_t i = 0; i < lhs.size(); ++i) lhs.values()[i] += 1e-2 * f.values()[i] - rhs.values()[i];
  const double res = norm(lhs) / norm(rhs);
  MESSAGE("iterations " << rep.iterations << " residual " << res);
  CHECK(res < 1e-6);
  CHECK(rep.converged);
  CHECK(rep.warning.empty());

  auto big = recon_tikhonov(pr.g, pr.geo, 1e6, 50);
  CHECK(norm(big) < 1e-3 * norm(recon_fbp(pr.g, pr.geo)));

  auto capped = recon_tikhonov(pr.g, pr.geo, 1e-4, 2, &rep);
  CHECK_FALSE(rep.converged);
  CHECK_FALSE(rep.warning.empty());
  CHECK(norm(capped) > 0);
  CHECK_THROWS(recon_tikhonov(pr.g, pr.geo, 0.0, 10));
}

TEST_CASE("tv") {
  SUBCASE("zero data") {
    auto pr = disk_problem(32, 30);
    CHECK(norm(recon_tv(pr.geo.empty_sinogram(), pr.geo, 1e-3, 20)) == 0.0);
  }
  SUBCASE("operator norm") {
    auto geo = Geometry::uniform(32, 30);
    const double L = tv_operator_norm(geo, 200);
    // No random image may exceed the estimate.
    for (std::uint64_t s = 1; s <= 5; ++s) {
      auto x = testing::random_image(32, 32, s, -1, 1);
      auto rx = radon(x, geo);
      const double kx = sinogram_inner(rx, rx, geo);
      double gx = 0;
      for (int j = 0; j < 32; ++j)
        for (int i = 0; i < 32; ++i) {
          const double dx = i + 1 < 32 ? (x(i + 1, j) - x(i, j)) / x.hx() : 0.0;
          const double dy = j + 1 < 32 ? (x(i, j + 1) - x(i, j)) / x.hy() : 0.0;
          gx += (dx * dx + dy * dy) * x.hx() * x.hy();
        }
      CHECK(std::sqrt(kx + gx) <= L * norm(x) * (1 + 1e-6));
    }
  }
  SUBCASE("energy trace on the disk") {
    auto pr = disk_problem(64, 60, 40 * kPi / 180);
    SolverReport rep;
    recon_tv(add_noise(pr.g, 0.02, 3), pr.geo, 1e-4, 200, &rep);
    REQUIRE(rep.energy.size() == 200);
    int rises = 0;
    double worst = 0;
    for (std::size_t i = 11; i < rep.energy.size(); ++i)
      if (rep.energy[i] > rep.energy[i - 1]) ++rises, worst = std::max(worst, rep.energy[i] - rep.energy[i - 1]);
    MESSAGE("first " << rep.energy.front() << " last " << rep.energy.back() << " rises " << rises << " worst " << worst);
    CHECK(rises == 0);
  }
  SUBCASE("piecewise constant phantom beats fbp") {
    const int n = 64;
    auto geo = Geometry::uniform(n, 90);
    auto truth = rasterize(sample_phantom(5), n, n, 4);
    auto g = add_noise(radon(truth, geo), 0.02, 6);
    auto tv = recon_tv(g, geo, 1e-4, 300);
    auto fbp = recon_fbp(g, geo);
    const auto mt = evaluate(tv, truth), mf = evaluate(fbp, truth);
    MESSAGE("tv psnr " << mt.psnr << " fbp psnr " << mf.psnr);
    CHECK(mt.psnr >= mf.psnr);
  }
}

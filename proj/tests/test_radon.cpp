#include <cmath>
#include <numbers>

#include "doctest.h"
#include "mct/metrics.hpp"
#include "mct/phantom.hpp"
#include "mct/radon.hpp"
#include "test_support.hpp"

using namespace mct;

namespace {

Sinogram random_sinogram(const Geometry& geo, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  Sinogram g = geo.empty_sinogram();
  for (int l = 0; l < geo.m2(); ++l)
    if (geo.mask[l])
      for (int k = 0; k < geo.m1; ++k) g(k, l) = u(rng);
  return g;
}

double pairing_defect(const GridImage& f, const Sinogram& g, const Geometry& geo) {
  const Sinogram rf = radon(f, geo);
  const GridImage bg = backproject(g, geo);
  const double lhs = sinogram_inner(rf, g, geo);
  const double rhs = image_inner(f, bg);
  return std::abs(lhs - rhs) / (std::sqrt(sinogram_inner(rf, rf, geo)) * std::sqrt(sinogram_inner(g, g, geo)));
}

}  // namespace

TEST_CASE("geometry") {
  auto geo = Geometry::uniform(256, 180);
  CHECK(geo.m1 == 363);
  CHECK(geo.angles[90] == doctest::Approx(std::numbers::pi / 2));
  for (double w : geo.angle_weights()) CHECK(w == doctest::Approx(std::numbers::pi / 180));
  Geometry bad = geo;
  bad.angles[3] = bad.angles[2];
  CHECK_THROWS(bad.validate());
  bad = geo;
  bad.mask.assign(180, false);
  CHECK_THROWS(bad.validate());
}

TEST_CASE("zero in, zero out") {
  auto geo = Geometry::uniform(32, 20);
  auto g = radon(GridImage(32, 32), geo);
  for (double v : g.values()) CHECK(v == 0.0);
  auto f = backproject(geo.empty_sinogram(), geo);
  for (double v : f.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(radon(GridImage(31, 32), geo), ShapeError);
}

TEST_CASE("disk chord lengths away from the tangent rays") {
  // The tangent band |s| ~ r carries an O(sqrt(h)) error from pixelising the
  // disk; the acceptance suite reports the unrestricted maximum.
  const int n = 256;
  auto geo = Geometry::uniform(n, 180, 363);
  auto img = rasterize(disk_phantom({0, 0}, 0.5), n, n, 4);
  auto g = radon(img, geo);
  const double h = img.hx();
  for (int l = 0; l < 180; l += 7)
    for (int k = 0; k < geo.m1; ++k) {
      const double s = geo.detector(k);
      if (std::abs(std::abs(s) - 0.5) <= 2 * h) continue;
      const double exact = std::abs(s) < 0.5 ? 2 * std::sqrt(0.25 - s * s) : 0.0;
      CHECK(std::abs(g(k, l) - exact) < 2 * h);
    }
}

TEST_CASE("single pixel traces its sinusoid") {
  const int n = 64;
  auto geo = Geometry::uniform(n, 45);
  GridImage f(n, n);
  const int i1 = 40, i2 = 20;
  f(i1, i2) = 1.0;
  const Vec2 x = f.world(i1, i2);
  auto g = radon(f, geo);
  const double reach = f.hx() * std::sqrt(2.0);  // bilinear footprint radius
  for (int l = 0; l < geo.m2(); ++l) {
    const double sl = x.x * std::cos(geo.angles[l]) + x.y * std::sin(geo.angles[l]);
    double peak = 0;
    int at = -1;
    for (int k = 0; k < geo.m1; ++k) {
      if (std::abs(geo.detector(k) - sl) > reach + 1e-12) CHECK(g(k, l) == 0.0);
      if (g(k, l) > peak) peak = g(k, l), at = k;
    }
    REQUIRE(at >= 0);
    CHECK(std::abs(geo.detector(at) - sl) <= geo.detector_spacing());
  }
}

TEST_CASE("linearity") {
  auto geo = Geometry::uniform(32, 30);
  auto a = testing::random_image(32, 32, 1), b = testing::random_image(32, 32, 2);
  GridImage c(32, 32);
  for (std::size_t i = 0; i < c.size(); ++i) c.values()[i] = 2.5 * a.values()[i] - 0.75 * b.values()[i];
  auto ra = radon(a, geo), rb = radon(b, geo), rc = radon(c, geo);
  for (std::size_t i = 0; i < rc.values().size(); ++i)
    CHECK(std::abs(rc.values()[i] - (2.5 * ra.values()[i] - 0.75 * rb.values()[i])) < 1e-12);
}

TEST_CASE("matched adjoint") {
  for (auto [n, m2] : {std::pair{64, 90}, std::pair{48, 37}}) {
    auto geo = Geometry::uniform(n, m2);
    for (std::uint64_t seed = 5; seed < 8; ++seed) {
      auto f = testing::random_image(n, n, seed);
      auto g = random_sinogram(geo, seed + 100);
      CHECK(pairing_defect(f, g, geo) < 1e-10);
    }
  }
  SUBCASE("with a mask") {
    auto geo = restrict_geometry(Geometry::uniform(40, 60), LimitedAngle{1.0, 0.8});
    auto f = testing::random_image(40, 40, 9);
    auto g = random_sinogram(geo, 10);
    CHECK(pairing_defect(f, g, geo) < 1e-10);
  }
}

TEST_CASE("backprojecting ones integrates the angle range") {
  const int n = 64;
  auto geo = Geometry::uniform(n, 180);
  Sinogram ones = geo.empty_sinogram();
  for (auto& v : ones.values()) v = 1.0;
  auto b = backproject(ones, geo);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      const Vec2 x = b.world(i, j);
      if (std::hypot(x.x, x.y) > 0.9) continue;
      CHECK(std::abs(b(i, j) - std::numbers::pi) < 1e-2 * std::numbers::pi);
    }
}

TEST_CASE("masked angles are zero and ignored") {
  auto geo = restrict_geometry(Geometry::uniform(32, 40), SparseView{10});
  auto f = testing::random_image(32, 32, 3);
  auto g = radon(f, geo);
  for (int l = 0; l < geo.m2(); ++l)
    if (!geo.mask[l])
      for (int k = 0; k < geo.m1; ++k) CHECK(g(k, l) == 0.0);
  Sinogram junk = g;
  for (int l = 0; l < geo.m2(); ++l)
    if (!geo.mask[l])
      for (int k = 0; k < geo.m1; ++k) junk(k, l) = 7.0;
  auto a = backproject(g, geo), b = backproject(junk, geo);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("restrict") {
  auto geo = Geometry::uniform(32, 180);
  auto g = radon(testing::random_image(32, 32, 1), geo);
  constexpr double deg = std::numbers::pi / 180;
  SUBCASE("zero width keeps everything") {
    auto r = restrict_angles(g, LimitedAngle{90 * deg, 0.0});
    CHECK(r.available_count() == 180);
    for (std::size_t i = 0; i < g.values().size(); ++i) CHECK(r.values()[i] == g.values()[i]);
  }
  SUBCASE("80 degree wedge around 90") {
    auto r = restrict_angles(g, LimitedAngle{90 * deg, 80 * deg});
    CHECK(r.available_count() == 100);
    CHECK(r.available(49));
    CHECK_FALSE(r.available(50));
    CHECK_FALSE(r.available(129));
    CHECK(r.available(130));
    for (int k = 0; k < r.m1(); ++k) CHECK(r(k, 90) == 0.0);
  }
  SUBCASE("wedge wrapping through zero") {
    auto r = restrict_angles(g, LimitedAngle{0.0, 20 * deg});
    CHECK(r.available_count() == 160);
    CHECK_FALSE(r.available(0));
    CHECK_FALSE(r.available(175));
    CHECK(r.available(10));
  }
  SUBCASE("sparse view") {
    auto r = restrict_angles(g, SparseView{40});
    CHECK(r.available_count() == 40);
    CHECK(r.available(0));
    CHECK(r.available(4));
    CHECK(r.available(9));
  }
  SUBCASE("errors") {
    CHECK_THROWS(restrict_angles(g, SparseView{180}));
    CHECK_THROWS(restrict_angles(g, SparseView{0}));
    CHECK_THROWS(restrict_angles(g, LimitedAngle{0.0, std::numbers::pi}));
    auto narrow = restrict_angles(g, SparseView{2});
    CHECK_THROWS(restrict_angles(narrow, LimitedAngle{45 * deg, 179.5 * deg}));
  }
}

TEST_CASE("ramp filter") {
  auto geo = Geometry::uniform(32, 8);
  SUBCASE("zero") {
    auto r = ramp_filter(geo.empty_sinogram());
    for (double v : r.values()) CHECK(v == 0.0);
  }
  SUBCASE("DC response vanishes") {
    for (auto w : {RampWindow::none, RampWindow::hann}) {
      auto h = ramp_response(128, 0.01, w);
      CHECK(h[0] == 0.0);
      CHECK(h[1] > 0.0);
    }
    CHECK(ramp_response(128, 0.01, RampWindow::hann).back() == doctest::Approx(0.0));
    CHECK(ramp_padded_length(46) == 128);
    CHECK(ramp_padded_length(64) == 128);
  }
}

TEST_CASE("filtered back-projection of a disk") {
  const int n = 256;
  auto geo = Geometry::uniform(n, 180);
  auto disk = rasterize(disk_phantom({0, 0}, 0.5), n, n, 4);
  auto rec = backproject(ramp_filter(radon(disk, geo)), geo);
  const double err = l2_relative_error(rec, disk);
  MESSAGE("fbp relative error " << err << ", centre " << rec(n / 2, n / 2));
  CHECK(err < 0.10);
  CHECK(std::abs(rec(n / 2, n / 2) - 1.0) < 0.02);
}

TEST_CASE("noise") {
  auto geo = Geometry::uniform(32, 16);
  auto g = radon(testing::random_image(32, 32, 2), geo);
  auto same = add_noise(g, 0.0, 1);
  for (std::size_t i = 0; i < g.values().size(); ++i) CHECK(same.values()[i] == g.values()[i]);
  auto a = add_noise(g, 0.1, 5), b = add_noise(g, 0.1, 5);
  for (std::size_t i = 0; i < g.values().size(); ++i) CHECK(a.values()[i] == b.values()[i]);
  CHECK_THROWS(add_noise(g, -0.1, 1));

  // 10^5 samples: empirical sigma within 2%.
  std::vector<double> angles(1000);
  for (int l = 0; l < 1000; ++l) angles[l] = std::numbers::pi * l / 1000;
  Sinogram big(100, angles, std::vector<bool>(1000, true));
  big(0, 0) = 2.0;
  auto noisy = add_noise(big, 0.05, 77);
  double sum = 0, sq = 0;
  for (std::size_t i = 0; i < big.values().size(); ++i) {
    const double d = noisy.values()[i] - big.values()[i];
    sum += d, sq += d * d;
  }
  const double m = sum / 1e5;
  const double sigma = std::sqrt(sq / 1e5 - m * m);
  CHECK(std::abs(sigma - 0.1) < 0.002);
}

TEST_CASE("Euclidean transposes") {
  auto geo = restrict_geometry(Geometry::uniform(24, 20), LimitedAngle{0.7, 0.5});
  auto f = testing::random_image(24, 24, 4);
  auto g = random_sinogram(geo, 5);
  auto dot_s = [](const Sinogram& a, const Sinogram& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.values().size(); ++i) s += a.values()[i] * b.values()[i];
    return s;
  };
  auto dot_i = [](const GridImage& a, const GridImage& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a.values()[i] * b.values()[i];
    return s;
  };
  const double a = dot_s(radon(f, geo), g), b = dot_i(f, radon_transpose(g, geo));
  CHECK(std::abs(a - b) < 1e-11 * std::abs(a));
  const double c = dot_i(backproject(g, geo), f), d = dot_s(g, backproject_transpose(f, geo));
  CHECK(std::abs(c - d) < 1e-11 * std::abs(c));
}

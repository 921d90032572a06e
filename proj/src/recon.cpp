#include "mct/recon.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mct {

namespace {

Sinogram available_only(const Sinogram& g, const Geometry& geo) {
  Sinogram out = g;
  for (int l = 0; l < geo.m2(); ++l)
    if (!geo.mask[l])
      for (int k = 0; k < geo.m1; ++k) out(k, l) = 0.0;
  return out;
}

void require(const Sinogram& g, const Geometry& geo) {
  geo.validate();
  if (!geo.matches(g)) throw ShapeError("sinogram layout does not match geometry");
}

void axpy(double a, const GridImage& x, GridImage& y) {
  auto xv = x.values();
  auto yv = y.values();
  for (std::size_t i = 0; i < yv.size(); ++i) yv[i] += a * xv[i];
}

struct Field {
  GridImage x, y;
};

Field gradient(const GridImage& f) {
  const int n1 = f.n1(), n2 = f.n2();
  Field d{GridImage(n1, n2), GridImage(n1, n2)};
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      d.x(i, j) = i + 1 < n1 ? (f(i + 1, j) - f(i, j)) / f.hx() : 0.0;
      d.y(i, j) = j + 1 < n2 ? (f(i, j + 1) - f(i, j)) / f.hy() : 0.0;
    }
  return d;
}

// Negative adjoint of gradient.
GridImage divergence(const Field& q) {
  const int n1 = q.x.n1(), n2 = q.x.n2();
  GridImage d(n1, n2);
  for (int j = 0; j < n2; ++j)
    for (int i = 0; i < n1; ++i) {
      double v = 0.0;
      if (i + 1 < n1) v += q.x(i, j);
      if (i > 0) v -= q.x(i - 1, j);
      double w = 0.0;
      if (j + 1 < n2) w += q.y(i, j);
      if (j > 0) w -= q.y(i, j - 1);
      d(i, j) = v / q.x.hx() + w / q.x.hy();
    }
  return d;
}

double total_variation(const GridImage& f) {
  const Field d = gradient(f);
  double s = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) s += std::hypot(d.x.values()[i], d.y.values()[i]);
  return s * f.hx() * f.hy();
}

}  // namespace

GridImage recon_fbp(const Sinogram& g, const Geometry& geo, RampWindow window) {
  require(g, geo);
  return backproject(ramp_filter(available_only(g, geo), window), geo);
}

GridImage recon_tikhonov(const Sinogram& g_in, const Geometry& geo, double lambda, int iterations,
                         SolverReport* report, double tolerance) {
  require(g_in, geo);
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  const Sinogram g = available_only(g_in, geo);
  auto normal = [&](const GridImage& x) {
    GridImage y = backproject(radon(x, geo), geo);
    axpy(lambda, x, y);
    return y;
  };
  const GridImage b = backproject(g, geo);
  const double bnorm = std::sqrt(image_inner(b, b));
  GridImage x(geo.n1, geo.n2);
  SolverReport rep;
  if (bnorm == 0.0) {
    rep.converged = true;
    if (report) *report = rep;
    return x;
  }
  GridImage r = b, p = b;
  double rr = image_inner(r, r);
  GridImage best = x;
  double best_res = 1.0;
  for (int it = 0; it < iterations; ++it) {
    const GridImage Ap = normal(p);
    const double alpha = rr / image_inner(p, Ap);
    axpy(alpha, p, x);
    axpy(-alpha, Ap, r);
    const double rr_new = image_inner(r, r);
    rep.iterations = it + 1;
    const double res = std::sqrt(rr_new) / bnorm;
    if (res < best_res) best_res = res, best = x;
    if (res < tolerance) break;
    const double beta = rr_new / rr;
    rr = rr_new;
    auto pv = p.values();
    auto rv = r.values();
    for (std::size_t i = 0; i < pv.size(); ++i) pv[i] = rv[i] + beta * pv[i];
  }
  // Report the true residual of the returned iterate.
  GridImage res = normal(best);
  axpy(-1.0, b, res);
  rep.residual = std::sqrt(image_inner(res, res)) / bnorm;
  rep.converged = rep.residual < std::max(tolerance, 1e-6);
  if (!rep.converged)
    rep.warning = "conjugate gradients stopped after " + std::to_string(rep.iterations) +
                  " iterations with relative residual " + std::to_string(rep.residual);
  if (report) *report = rep;
  return best;
}

double tv_energy(const GridImage& f, const Sinogram& g_in, const Geometry& geo, double lambda) {
  const Sinogram g = available_only(g_in, geo);
  Sinogram r = available_only(radon(f, geo), geo);
  auto rv = r.values();
  auto gv = g.values();
  for (std::size_t i = 0; i < rv.size(); ++i) rv[i] -= gv[i];
  return 0.5 * sinogram_inner(r, r, geo) + lambda * total_variation(f);
}

namespace {

template <class Op>
double power_norm(const Geometry& geo, int iterations, Op normal) {
  std::mt19937_64 rng(0x7f4a7c15);
  std::normal_distribution<double> nd;
  GridImage x(geo.n1, geo.n2);
  for (double& v : x.values()) v = nd(rng);
  double lam = 0.0;
  for (int it = 0; it < iterations; ++it) {
    const double nx = std::sqrt(image_inner(x, x));
    for (double& v : x.values()) v /= nx;
    GridImage y = normal(x);
    lam = image_inner(x, y);
    x = std::move(y);
  }
  return std::sqrt(std::max(lam, 0.0));
}

double radon_norm(const Geometry& geo, int iterations) {
  return power_norm(geo, iterations, [&](const GridImage& x) { return backproject(available_only(radon(x, geo), geo), geo); });
}

double gradient_norm(const Geometry& geo, int iterations) {
  return power_norm(geo, iterations, [&](const GridImage& x) {
    GridImage y = divergence(gradient(x));
    for (double& v : y.values()) v = -v;
    return y;
  });
}

}  // namespace

double tv_operator_norm(const Geometry& geo, int iterations) {
  return power_norm(geo, iterations, [&](const GridImage& x) {
    GridImage y = backproject(available_only(radon(x, geo), geo), geo);
    axpy(-1.0, divergence(gradient(x)), y);
    return y;
  });
}

GridImage recon_tv(const Sinogram& g_in, const Geometry& geo, double lambda, int iterations, SolverReport* report) {
  require(g_in, geo);
  if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
  const Sinogram g = available_only(g_in, geo);
  SolverReport rep;
  GridImage f(geo.n1, geo.n2);
  if (std::all_of(g.values().begin(), g.values().end(), [](double v) { return v == 0.0; })) {
    rep.converged = true;
    if (report) *report = rep;
    return f;
  }
  // The gradient block is rescaled by mu so both blocks of K = (R, mu grad)
  // have comparable norms; the TV dual bound becomes lambda / mu.
  const double mu = radon_norm(geo, 50) / gradient_norm(geo, 50);
  const double L = 1.01 * std::sqrt(2.0) * radon_norm(geo, 50);
  const double tau = 0.99 / L, sigma = 0.99 / L, bound = lambda / mu;
  rep.step = tau;
  GridImage fbar = f;
  Sinogram p = geo.empty_sinogram();
  Field q{GridImage(geo.n1, geo.n2), GridImage(geo.n1, geo.n2)};
  double prev = tv_energy(f, g, geo, lambda);
  int increases = 0;
  for (int it = 0; it < iterations; ++it) {
    // Dual ascent on the data term: prox of sigma * (|. - g|^2 / 2)^*.
    const Sinogram rf = available_only(radon(fbar, geo), geo);
    {
      auto pv = p.values();
      auto rv = rf.values();
      auto gv = g.values();
      for (std::size_t i = 0; i < pv.size(); ++i) pv[i] = (pv[i] + sigma * (rv[i] - gv[i])) / (1.0 + sigma);
    }
    // Dual ascent on TV: projection onto |q| <= lambda.
    const Field d = gradient(fbar);
    for (std::size_t i = 0; i < f.size(); ++i) {
      double& qx = q.x.values()[i];
      double& qy = q.y.values()[i];
      qx += sigma * mu * d.x.values()[i];
      qy += sigma * mu * d.y.values()[i];
      const double s = std::max(1.0, std::hypot(qx, qy) / bound);
      qx /= s;
      qy /= s;
    }
    GridImage step = backproject(p, geo);
    axpy(-mu, divergence(q), step);
    GridImage next = f;
    axpy(-tau, step, next);
    {
      auto nb = fbar.values();
      auto nv = next.values();
      auto fv = f.values();
      for (std::size_t i = 0; i < nb.size(); ++i) nb[i] = 2.0 * nv[i] - fv[i];
    }
    f = std::move(next);
    const double e = tv_energy(f, g, geo, lambda);
    rep.energy.push_back(e);
    rep.iterations = it + 1;
    increases = e > prev ? increases + 1 : 0;
    prev = e;
    if (!std::isfinite(e) || increases >= 50)
      throw DivergenceError("TV solver diverged: energy rose for " + std::to_string(increases) +
                            " consecutive iterations (last " + std::to_string(e) + ")");
  }
  rep.converged = true;
  if (report) *report = rep;
  return f;
}

}  // namespace mct

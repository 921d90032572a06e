#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "mct/grid.hpp"
#include "mct/radon.hpp"

namespace mct {

GridImage recon_fbp(const Sinogram& g, const Geometry& geo, RampWindow window = RampWindow::none);

struct SolverReport {
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;       // Tikhonov: relative normal-equation residual
  std::vector<double> energy;  // TV: primal energy per iteration
  double step = 0.0;           // TV: primal = dual step size
  std::string warning;
};

// argmin |Rf - g|^2 + lambda |f|^2 in the quadrature-weighted norms, by
// conjugate gradients on (R*R + lambda I) f = R*g.
GridImage recon_tikhonov(const Sinogram& g, const Geometry& geo, double lambda, int iterations,
                         SolverReport* report = nullptr, double tolerance = 1e-8);

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// argmin |Rf - g|^2 / 2 + lambda TV(f), isotropic TV with forward differences,
// by the primal-dual hybrid gradient method.
GridImage recon_tv(const Sinogram& g, const Geometry& geo, double lambda, int iterations,
                   SolverReport* report = nullptr);

double tv_energy(const GridImage& f, const Sinogram& g, const Geometry& geo, double lambda);

// Largest singular value of f -> (Rf, grad f) by power iteration.
double tv_operator_norm(const Geometry& geo, int iterations = 50);

}  // namespace mct

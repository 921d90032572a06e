#pragma once

#include "mct/grid.hpp"

namespace mct {

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double l2_relative_error = 0.0;
};

constexpr double kPsnrCap = 300.0;

double mse(const GridImage& a, const GridImage& b);

// 10*log10(range^2 / MSE); kPsnrCap when the images coincide.
double psnr(const GridImage& a, const GridImage& b, double data_range);

// Mean SSIM over all 8x8 windows (stride 1). Stabilisers use the joint
// value range of both images, which keeps the measure symmetric.
double ssim(const GridImage& a, const GridImage& b);

// ||rec - truth|| / ||truth||
double l2_relative_error(const GridImage& rec, const GridImage& truth);

// data_range for psnr is the ground-truth range (at least 1e-12).
MetricsReport evaluate(const GridImage& rec, const GridImage& truth);

}  // namespace mct

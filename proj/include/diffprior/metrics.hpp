#pragma once

#include <array>
#include <cstddef>
#include <limits>

#include "diffprior/grid.hpp"

namespace diffprior {

inline constexpr double kDefaultDataRange = 2.0;
inline constexpr int kDefaultSsimWindow = 7;
/// GMSD stability constant on [0, 1]-scaled intensities.
inline constexpr double kGmsdConstant = 0.0026;

double mae(const Volume& a, const Volume& b);

/// 10 log10(range^2 / MSE); +infinity for identical inputs.
double psnr(const Volume& estimate, const Volume& reference, double data_range = kDefaultDataRange);

/// 2.5D metrics: a 2D metric evaluated on every slice along each axis. Slices
/// whose reference is constant are skipped, as are orientations whose slices
/// are smaller than the metric's footprint. The volume value is the mean of
/// the per-orientation slice means.
struct OrientationScores {
  std::array<double, 3> value{};
  std::array<std::size_t, 3> slices{};
  double mean() const;
};

/// Gaussian-weighted SSIM (sigma 1.5, k1 0.01, k2 0.03) over valid window positions.
double ssim_2d(std::span<const double> a, std::span<const double> ref, std::size_t width, std::size_t height,
               double data_range, int window);
/// GMSD with 3x3 Prewitt gradients on interior pixels; inputs are divided by data_range.
double gmsd_2d(std::span<const double> a, std::span<const double> ref, std::size_t width, std::size_t height,
               double data_range);

OrientationScores ssim_orientations(const Volume& estimate, const Volume& reference,
                                    double data_range = kDefaultDataRange, int window = kDefaultSsimWindow);
OrientationScores gmsd_orientations(const Volume& estimate, const Volume& reference,
                                    double data_range = kDefaultDataRange);

double ssim_2p5d(const Volume& estimate, const Volume& reference, double data_range = kDefaultDataRange,
                 int window = kDefaultSsimWindow);
double gmsd_2p5d(const Volume& estimate, const Volume& reference, double data_range = kDefaultDataRange);

struct MetricReport {
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double gmsd = 0.0;
  OrientationScores ssim_by_axis;
  OrientationScores gmsd_by_axis;
  double data_range = kDefaultDataRange;
};

MetricReport evaluate(const Volume& estimate, const Volume& reference, double data_range = kDefaultDataRange,
                      int window = kDefaultSsimWindow);

}  // namespace diffprior

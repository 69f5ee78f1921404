#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffprior/grid.hpp"
#include "diffprior/rng.hpp"

namespace diffprior {

struct DegradeConfig {
  /// Target voxel spacing over source voxel spacing, per axis.
  Vec3 factors{1.0, 1.0, 1.0};
  /// Fourier low-pass width per axis is filter_sigma_scale * (factor - 1) voxels.
  double filter_sigma_scale = 0.5;
  int bias_order = 4;
  /// Standard deviation of log b over the basis terms; 0 disables the bias.
  double bias_amplitude = 0.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  Vec3 filter_sigma() const;
};

/// Gaussian low-pass in the Fourier domain (periodic boundary, unit DC gain).
/// `sigma_vox` is the width of the equivalent spatial Gaussian in voxels.
Volume fourier_lowpass(const Volume& vol, const Vec3& sigma_vox);

struct Degraded {
  Volume low;
  /// Bias coefficients on the low-resolution grid's basis (zero when disabled).
  std::vector<double> bias_c;
};

/// low-pass -> trilinear resampling to floor(dims / factors) -> bias -> noise.
Degraded degrade(const Volume& vol, const DegradeConfig& cfg, Rng& rng);
Degraded degrade(const Volume& vol, const DegradeConfig& cfg);

enum class PhantomKind { ellipsoid_stack, smooth_random_field, checker_smoothed };

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string& name);

struct Phantom {
  PhantomKind kind = PhantomKind::ellipsoid_stack;
  Dims dims{32, 32, 32};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
};

/// Deterministic structured volume normalized to [-1, 1]. Every axis must
/// have at least 4 voxels or exactly 1 (2D phantoms).
Volume make_phantom(const Phantom& p);

/// Intensity plateaus used by ellipsoid-stack phantoms: background, head and
/// the inner structure levels.
inline constexpr double kPhantomBackground = -1.0;
inline constexpr double kPhantomTissue = 0.0;
inline constexpr double kPhantomLevels[3] = {-0.6, 0.5, 1.0};

}  // namespace diffprior

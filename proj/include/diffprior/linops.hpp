#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "diffprior/grid.hpp"

namespace diffprior {

/// A linear map between flat voxel arrays with an exact adjoint.
///
/// Inputs and outputs are row-major, x-fastest arrays whose extents are given
/// by input_dims() / output_dims(). Vector-valued outputs (the selection
/// operator) use dims {n, 1, 1}. Implementations are immutable and their
/// apply/adjoint are deterministic, so sharing across threads is safe.
class LinearOperator {
 public:
  virtual ~LinearOperator() = default;

  virtual Dims input_dims() const = 0;
  virtual Dims output_dims() const = 0;

  /// out = A * in. `out` must have output_size() entries.
  virtual void apply(std::span<const double> in, std::span<double> out) const = 0;
  /// out = A^T * in. `out` must have input_size() entries.
  virtual void adjoint(std::span<const double> in, std::span<double> out) const = 0;

  std::size_t input_size() const { return voxel_count(input_dims()); }
  std::size_t output_size() const { return voxel_count(output_dims()); }

  std::vector<double> apply(std::span<const double> in) const;
  std::vector<double> adjoint(std::span<const double> in) const;
};

using OperatorPtr = std::shared_ptr<const LinearOperator>;

/// Per-axis Gaussian slice profile, full width at half maximum in mm.
struct SliceProfile {
  Vec3 fwhm_mm{0.0, 0.0, 0.0};
};

/// Binary voxel mask: 1 = observed, 0 = missing.
class Mask {
 public:
  Mask() = default;
  /// Throws InvalidArgument unless all values are 0/1, at least one is 1 and
  /// the length matches dims.
  Mask(Dims dims, std::vector<std::uint8_t> values);
  /// Voxels with value > 0.5 become 1.
  static Mask from_volume(const Volume& v);

  const Dims& dims() const { return dims_; }
  std::span<const std::uint8_t> values() const { return values_; }
  std::size_t observed_count() const { return observed_; }

 private:
  Dims dims_{1, 1, 1};
  std::vector<std::uint8_t> values_;
  std::size_t observed_ = 0;
};

OperatorPtr op_identity(const Dims& dims);

/// Trilinear resampling under `map` (operator T); the adjoint scatters the
/// interpolation weights back. Source dims equal target dims.
OperatorPtr op_align(const GridMap& map);
/// Same as op_align but with an explicit source grid size.
OperatorPtr op_resample(const Dims& source_dims, const GridMap& map);

/// Separable Gaussian blur (operator S) on a grid of `dims` with voxel `spacing`.
OperatorPtr op_blur(const SliceProfile& profile, const Vec3& spacing, const Dims& dims);

/// Point sampling at low-resolution voxel centres (operator R).
OperatorPtr op_downsample(const Vec3& factors, const Dims& hr_dims);

/// R * S * T, with geometry checks between stages.
OperatorPtr op_project(OperatorPtr t, OperatorPtr s, OperatorPtr r);

/// Selection of the mask == 1 voxels in row-major order.
OperatorPtr op_select(const Mask& mask);

/// Discrete normalized Gaussian blur kernel for a given sigma in voxels:
/// taps -radius..radius with radius = ceil(4 sigma), summing to 1.
std::vector<double> gaussian_kernel(double sigma_vox);

/// FWHM -> Gaussian sigma.
double fwhm_to_sigma(double fwhm);

/// Estimate of the largest singular value of `op` by power iteration on A^T A
/// from a fixed start vector.
double operator_norm(const LinearOperator& op, int iterations = 30);

}  // namespace diffprior

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace diffprior {

using Dims = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;
/// Voxel index (i, j, k, 1) to world millimetres.
using Affine = Eigen::Matrix4d;

inline std::size_t voxel_count(const Dims& d) { return d[0] * d[1] * d[2]; }

/// Row-major with x fastest.
inline std::size_t linear_index(const Dims& d, std::size_t i, std::size_t j, std::size_t k) {
  return i + d[0] * (j + d[1] * k);
}

/// Diagonal affine with the given voxel spacing and zero origin.
Affine spacing_affine(const Vec3& spacing);

/// Throws InvalidArgument unless the upper-left 3x3 block is invertible.
void require_invertible(const Affine& a, const char* what);

/// Grid description shared by volumes, operators and bias bases.
struct Geometry {
  Dims dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Affine affine = Affine::Identity();

  /// Checks dims >= 1, spacing > 0 and an invertible affine.
  void validate() const;
  std::size_t size() const { return voxel_count(dims); }
};

/// A 3D scalar grid. Values are immutable after construction and always finite.
class Volume {
 public:
  Volume() = default;
  /// Throws InvalidArgument on bad geometry or length mismatch and
  /// NumericRangeError on non-finite data.
  Volume(Geometry geometry, std::vector<double> data);

  const Geometry& geometry() const { return geometry_; }
  const Dims& dims() const { return geometry_.dims; }
  const Vec3& spacing() const { return geometry_.spacing; }
  const Affine& affine() const { return geometry_.affine; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  double operator[](std::size_t n) const { return data_[n]; }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[linear_index(geometry_.dims, i, j, k)];
  }

  /// Same geometry, new values.
  Volume with_data(std::vector<double> data) const { return Volume(geometry_, std::move(data)); }

 private:
  Geometry geometry_;
  std::vector<double> data_;
};

/// Source grid, target grid and the target dimensions of a resampling.
/// A target voxel v maps to source continuous index inv(source_affine) * target_affine * v.
struct GridMap {
  Affine source_affine = Affine::Identity();
  Affine target_affine = Affine::Identity();
  Dims target_dims{1, 1, 1};

  /// target-voxel -> source-voxel index transform. Exactly the identity when
  /// both affines are equal.
  Affine index_transform() const;
};

Volume make_volume(const Dims& dims, const Vec3& spacing, double fill);

/// Low-resolution dims under the floor rule, floor(hr / factor) per axis.
Dims downsampled_dims(const Dims& hr_dims, const Vec3& factors);

/// Geometry of the grid obtained by downsampling `hr` by `factors`. Low-res
/// voxel i is centred at high-res continuous index (i + 0.5) * f - 0.5.
Geometry downsampled_geometry(const Geometry& hr, const Vec3& factors);

/// Trilinear resampling with clamp-to-edge boundary.
Volume resample_trilinear(const Volume& src, const GridMap& map);

/// Affine intensity rescale so that min -> lo and max -> hi.
Volume normalize_minmax(const Volume& vol, double lo, double hi);

/// Interpolation stencil of one target sample: 8 source indices and weights.
struct TrilinearStencil {
  std::array<std::size_t, 8> index{};
  std::array<double, 8> weight{};
};

/// Stencils for every target voxel of `map` over a source of `source_dims`,
/// in target row-major order. Shared by resampling and the alignment operator.
std::vector<TrilinearStencil> trilinear_stencils(const Dims& source_dims, const GridMap& map);

}  // namespace diffprior

#include "diffprior/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/LU>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

// Sample coordinates this close to a grid node are snapped onto it, so that
// maps which are mathematically the identity stay bit-exact.
constexpr double kSnapTolerance = 1e-9;

double snap(double c) {
  const double r = std::round(c);
  return std::abs(c - r) < kSnapTolerance ? r : c;
}

// Lower node index and fractional offset along one axis, clamp-to-edge.
void axis_weights(double c, std::size_t n, std::size_t& lo, std::size_t& hi, double& t) {
  if (n == 1) {
    lo = hi = 0;
    t = 0.0;
    return;
  }
  const double top = static_cast<double>(n - 1);
  c = std::clamp(c, 0.0, top);
  auto base = static_cast<std::size_t>(std::floor(c));
  base = std::min(base, n - 2);
  lo = base;
  hi = base + 1;
  t = c - static_cast<double>(base);
}

}  // namespace

Affine spacing_affine(const Vec3& spacing) {
  Affine a = Affine::Identity();
  for (int d = 0; d < 3; ++d) a(d, d) = spacing[d];
  return a;
}

void require_invertible(const Affine& a, const char* what) {
  if (!a.allFinite()) throw InvalidArgument(std::string(what) + ": affine has non-finite entries");
  const double det = a.topLeftCorner<3, 3>().determinant();
  if (!(std::abs(det) > 1e-300)) throw InvalidArgument(std::string(what) + ": affine is singular");
}

void Geometry::validate() const {
  for (int d = 0; d < 3; ++d) {
    if (dims[d] < 1) throw InvalidArgument("dims must be >= 1 on every axis");
    if (!(spacing[d] > 0.0) || !std::isfinite(spacing[d]))
      throw InvalidArgument("spacing must be positive and finite on every axis");
  }
  require_invertible(affine, "geometry");
}

Volume::Volume(Geometry geometry, std::vector<double> data)
    : geometry_(std::move(geometry)), data_(std::move(data)) {
  geometry_.validate();
  if (data_.size() != geometry_.size())
    throw InvalidArgument("volume data length " + std::to_string(data_.size()) +
                          " does not match dims product " + std::to_string(geometry_.size()));
  for (std::size_t n = 0; n < data_.size(); ++n)
    if (!std::isfinite(data_[n]))
      throw NumericRangeError("non-finite voxel value at index " + std::to_string(n));
}

Affine GridMap::index_transform() const {
  require_invertible(source_affine, "grid map source");
  require_invertible(target_affine, "grid map target");
  if (source_affine == target_affine) return Affine::Identity();
  return source_affine.inverse() * target_affine;
}

Volume make_volume(const Dims& dims, const Vec3& spacing, double fill) {
  Geometry g{dims, spacing, spacing_affine(spacing)};
  g.validate();
  return Volume(g, std::vector<double>(g.size(), fill));
}

Dims downsampled_dims(const Dims& hr_dims, const Vec3& factors) {
  Dims out{};
  for (int d = 0; d < 3; ++d) {
    if (!(factors[d] >= 1.0) || !std::isfinite(factors[d]))
      throw InvalidArgument("downsampling factors must be finite and >= 1");
    // The small epsilon keeps exact quotients such as 32 / 1.6 from flooring to 19.
    const double q = static_cast<double>(hr_dims[d]) / factors[d];
    const auto n = static_cast<long long>(std::floor(q + 1e-9));
    if (n < 1)
      throw InvalidArgument("downsampled size on axis " + std::to_string(d) + " is below 1");
    out[d] = static_cast<std::size_t>(n);
  }
  return out;
}

Geometry downsampled_geometry(const Geometry& hr, const Vec3& factors) {
  Geometry lr;
  lr.dims = downsampled_dims(hr.dims, factors);
  Affine index_map = Affine::Identity();
  for (int d = 0; d < 3; ++d) {
    index_map(d, d) = factors[d];
    index_map(d, 3) = 0.5 * factors[d] - 0.5;
    lr.spacing[d] = hr.spacing[d] * factors[d];
  }
  lr.affine = hr.affine * index_map;
  return lr;
}

std::vector<TrilinearStencil> trilinear_stencils(const Dims& source_dims, const GridMap& map) {
  const Affine m = map.index_transform();
  const Dims& td = map.target_dims;
  std::vector<TrilinearStencil> out(voxel_count(td));
  std::size_t n = 0;
  for (std::size_t k = 0; k < td[2]; ++k)
    for (std::size_t j = 0; j < td[1]; ++j)
      for (std::size_t i = 0; i < td[0]; ++i, ++n) {
        const Eigen::Vector4d v(static_cast<double>(i), static_cast<double>(j),
                                static_cast<double>(k), 1.0);
        const Eigen::Vector4d c = m * v;
        std::array<std::size_t, 3> lo{}, hi{};
        std::array<double, 3> t{};
        for (int d = 0; d < 3; ++d) axis_weights(snap(c[d]), source_dims[d], lo[d], hi[d], t[d]);
        auto& s = out[n];
        int corner = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx, ++corner) {
              const std::size_t x = dx ? hi[0] : lo[0];
              const std::size_t y = dy ? hi[1] : lo[1];
              const std::size_t z = dz ? hi[2] : lo[2];
              s.index[corner] = linear_index(source_dims, x, y, z);
              s.weight[corner] = (dx ? t[0] : 1.0 - t[0]) * (dy ? t[1] : 1.0 - t[1]) *
                                 (dz ? t[2] : 1.0 - t[2]);
            }
      }
  return out;
}

Volume resample_trilinear(const Volume& src, const GridMap& map) {
  for (int d = 0; d < 3; ++d)
    if (map.target_dims[d] < 1) throw InvalidArgument("target dims must be >= 1");
  const auto stencils = trilinear_stencils(src.dims(), map);
  std::vector<double> out(stencils.size());
  const auto data = src.data();
  for (std::size_t n = 0; n < stencils.size(); ++n) {
    double acc = 0.0;
    for (int c = 0; c < 8; ++c) acc += stencils[n].weight[c] * data[stencils[n].index[c]];
    out[n] = acc;
  }
  Geometry g;
  g.dims = map.target_dims;
  g.affine = map.target_affine;
  for (int d = 0; d < 3; ++d) g.spacing[d] = map.target_affine.col(d).head<3>().norm();
  return Volume(g, std::move(out));
}

Volume normalize_minmax(const Volume& vol, double lo, double hi) {
  if (!(lo < hi)) throw InvalidArgument("normalize_minmax requires lo < hi");
  const auto data = vol.data();
  if (data.empty()) throw DegenerateInput("cannot normalize an empty volume");
  const auto [mn, mx] = std::minmax_element(data.begin(), data.end());
  const double vmin = *mn, vmax = *mx;
  if (!(vmax > vmin)) throw DegenerateInput("cannot normalize a constant volume");
  const double scale = (hi - lo) / (vmax - vmin);
  std::vector<double> out(data.size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    out[n] = data[n] == vmax ? hi : lo + (data[n] - vmin) * scale;
  }
  return vol.with_data(std::move(out));
}

}  // namespace diffprior

#pragma once

#include <cmath>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "diffprior/grid.hpp"
#include "diffprior/linops.hpp"
#include "diffprior/rng.hpp"

namespace testutil {

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double rel_l2(std::span<const double> a, std::span<const double> ref) {
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num += (a[i] - ref[i]) * (a[i] - ref[i]);
  return std::sqrt(num) / norm(ref);
}

/// |<Ax, y> - <x, A^T y>| / max(|<Ax, y>|, tiny) for random x, y.
inline double dot_test(const diffprior::LinearOperator& op, diffprior::Rng& rng) {
  const auto x = rng.normal_vector(op.input_size());
  const auto y = rng.normal_vector(op.output_size());
  const double lhs = dot(op.apply(x), y);
  const double rhs = dot(x, op.adjoint(y));
  return std::abs(lhs - rhs) / std::max(std::abs(lhs), 1e-300);
}

/// Dense matrix of a linear operator, built column by column.
inline Eigen::MatrixXd dense(const diffprior::LinearOperator& op, bool adjoint = false) {
  const std::size_t n = adjoint ? op.output_size() : op.input_size();
  const std::size_t m = adjoint ? op.input_size() : op.output_size();
  Eigen::MatrixXd a(m, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    e[j] = 1.0;
    const auto col = adjoint ? op.adjoint(e) : op.apply(e);
    for (std::size_t i = 0; i < m; ++i) a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = col[i];
    e[j] = 0.0;
  }
  return a;
}

inline diffprior::Volume random_volume(const diffprior::Dims& d, diffprior::Rng& rng,
                                       const diffprior::Vec3& spacing = {1.0, 1.0, 1.0}) {
  diffprior::Geometry g{d, spacing, diffprior::spacing_affine(spacing)};
  return diffprior::Volume(g, rng.normal_vector(g.size()));
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("diffprior_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil

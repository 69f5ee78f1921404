#pragma once

#include <array>
#include <span>
#include <vector>

#include "diffprior/grid.hpp"
#include "diffprior/linops.hpp"

namespace diffprior {

/// 3D monomials x^a y^b z^c with a + b + c <= order, evaluated on a grid whose
/// coordinates are normalized to [-1, 1] per axis.
///
/// Ordering is graded lexicographic: by total degree, then by descending
/// power of x, then of y. Order 1 therefore gives [1, x, y, z].
class BiasBasis {
 public:
  BiasBasis(int order, Geometry grid);

  int order() const { return order_; }
  const Geometry& grid() const { return grid_; }
  std::size_t num_terms() const { return exponents_.size(); }
  std::size_t num_voxels() const { return grid_.size(); }
  const std::vector<std::array<int, 3>>& exponents() const { return exponents_; }

  /// phi_k evaluated at every voxel.
  std::span<const double> term(std::size_t k) const {
    return {values_.data() + k * num_voxels(), num_voxels()};
  }

  /// (order + 1)(order + 2)(order + 3) / 6.
  static std::size_t term_count(int order);

 private:
  int order_;
  Geometry grid_;
  std::vector<std::array<int, 3>> exponents_;
  std::vector<double> values_;  // num_terms x num_voxels
};

/// Coefficients c of log b together with the Gaussian prior weight lambda.
struct BiasField {
  std::vector<double> c;
  double lambda = 1e-2;
};

BiasBasis basis_build(int order, const Geometry& grid);

/// log b_i = sum_k c_k phi_k(r_i) as a flat array.
std::vector<double> bias_log(std::span<const double> c, const BiasBasis& basis);

/// b_i = exp(sum_k c_k phi_k(r_i)). Throws NumericRangeError on overflow.
Volume bias_eval(const BiasField& field, const BiasBasis& basis);
std::vector<double> bias_values(std::span<const double> c, const BiasBasis& basis);

/// ||y - b .* Ax||^2 / (2 tau_y^2) + lambda ||c||^2 / 2, with `ax` = A x0 precomputed.
double bias_objective(std::span<const double> c, double lambda, const BiasBasis& basis,
                      std::span<const double> ax, std::span<const double> y, double tau_y);

/// Gradient of bias_objective with respect to c, using d b_i / d c_k = b_i phi_k(r_i).
std::vector<double> bias_objective_grad(std::span<const double> c, double lambda, const BiasBasis& basis,
                                        std::span<const double> ax, std::span<const double> y, double tau_y);

/// Same as above, computing A x0 first.
std::vector<double> bias_objective_grad(const BiasField& field, const BiasBasis& basis,
                                        std::span<const double> x0, std::span<const double> y,
                                        const LinearOperator& a, double tau_y);

/// c' = c - alpha_t * grad.
std::vector<double> bias_update(std::span<const double> c, std::span<const double> grad, double alpha_t);

/// Annealed step-size multiplier alpha0 * (1 - sigma / sigma_max), clipped to [0, alpha0].
double bias_step_schedule(double alpha0, double sigma, double sigma_max);

/// Upper bound on the curvature of bias_objective along any unit direction at c.
double bias_curvature_bound(std::span<const double> c, double lambda, const BiasBasis& basis,
                            std::span<const double> ax, std::span<const double> y, double tau_y);

}  // namespace diffprior

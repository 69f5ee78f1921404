#include "diffprior/biasfield.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

double normalized_coordinate(std::size_t i, std::size_t n) {
  if (n <= 1) return 0.0;
  return 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
}

void check_lengths(std::span<const double> c, const BiasBasis& basis, std::span<const double> ax,
                   std::span<const double> y, double tau_y) {
  if (c.size() != basis.num_terms())
    throw InvalidArgument("bias coefficients: expected " + std::to_string(basis.num_terms()) + ", got " +
                          std::to_string(c.size()));
  if (ax.size() != basis.num_voxels() || y.size() != basis.num_voxels())
    throw InvalidArgument("bias objective: observation and A x0 must match the basis grid");
  if (!(tau_y > 0.0)) throw InvalidArgument("tau_y must be positive");
}

}  // namespace

std::size_t BiasBasis::term_count(int order) {
  const auto o = static_cast<std::size_t>(order);
  return (o + 1) * (o + 2) * (o + 3) / 6;
}

BiasBasis::BiasBasis(int order, Geometry grid) : order_(order), grid_(std::move(grid)) {
  if (order < 0) throw InvalidArgument("bias basis order must be >= 0");
  grid_.validate();
  for (int deg = 0; deg <= order; ++deg)
    for (int a = deg; a >= 0; --a)
      for (int b = deg - a; b >= 0; --b) exponents_.push_back({a, b, deg - a - b});

  const Dims& d = grid_.dims;
  const std::size_t nv = num_voxels();
  values_.resize(exponents_.size() * nv);
  std::vector<std::array<double, 3>> coords(nv);
  std::size_t n = 0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i, ++n)
        coords[n] = {normalized_coordinate(i, d[0]), normalized_coordinate(j, d[1]), normalized_coordinate(k, d[2])};
  for (std::size_t t = 0; t < exponents_.size(); ++t) {
    const auto& e = exponents_[t];
    double* row = values_.data() + t * nv;
    for (std::size_t v = 0; v < nv; ++v) {
      double p = 1.0;
      for (int axis = 0; axis < 3; ++axis)
        for (int r = 0; r < e[axis]; ++r) p *= coords[v][axis];
      row[v] = p;
    }
  }
}

BiasBasis basis_build(int order, const Geometry& grid) { return BiasBasis(order, grid); }

std::vector<double> bias_log(std::span<const double> c, const BiasBasis& basis) {
  if (c.size() != basis.num_terms())
    throw InvalidArgument("bias coefficients: expected " + std::to_string(basis.num_terms()) + ", got " +
                          std::to_string(c.size()));
  std::vector<double> out(basis.num_voxels(), 0.0);
  for (std::size_t k = 0; k < c.size(); ++k) {
    if (c[k] == 0.0) continue;
    const auto phi = basis.term(k);
    for (std::size_t v = 0; v < out.size(); ++v) out[v] += c[k] * phi[v];
  }
  return out;
}

std::vector<double> bias_values(std::span<const double> c, const BiasBasis& basis) {
  auto out = bias_log(c, basis);
  for (double& v : out) {
    v = std::exp(v);
    if (!std::isfinite(v) || v == 0.0) throw NumericRangeError("bias field exponent out of range");
  }
  return out;
}

Volume bias_eval(const BiasField& field, const BiasBasis& basis) {
  return Volume(basis.grid(), bias_values(field.c, basis));
}

double bias_objective(std::span<const double> c, double lambda, const BiasBasis& basis,
                      std::span<const double> ax, std::span<const double> y, double tau_y) {
  check_lengths(c, basis, ax, y, tau_y);
  const auto b = bias_values(c, basis);
  double fit = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double r = y[i] - b[i] * ax[i];
    fit += r * r;
  }
  double reg = 0.0;
  for (double v : c) reg += v * v;
  const double obj = fit / (2.0 * tau_y * tau_y) + 0.5 * lambda * reg;
  if (!std::isfinite(obj)) throw NumericRangeError("bias objective is not finite");
  return obj;
}

std::vector<double> bias_objective_grad(std::span<const double> c, double lambda, const BiasBasis& basis,
                                        std::span<const double> ax, std::span<const double> y, double tau_y) {
  check_lengths(c, basis, ax, y, tau_y);
  const auto b = bias_values(c, basis);
  // d/dc_k = sum_i (b_i a_i - y_i) b_i a_i phi_k(r_i) / tau^2 + lambda c_k
  std::vector<double> w(b.size());
  const double inv_tau2 = 1.0 / (tau_y * tau_y);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double pred = b[i] * ax[i];
    w[i] = (pred - y[i]) * pred * inv_tau2;
  }
  std::vector<double> g(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) {
    const auto phi = basis.term(k);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * phi[i];
    g[k] = acc + lambda * c[k];
    if (!std::isfinite(g[k])) throw NumericRangeError("bias gradient is not finite");
  }
  return g;
}

std::vector<double> bias_objective_grad(const BiasField& field, const BiasBasis& basis,
                                        std::span<const double> x0, std::span<const double> y,
                                        const LinearOperator& a, double tau_y) {
  if (x0.size() != a.input_size()) throw InvalidArgument("bias gradient: x0 does not match operator input");
  const auto ax = a.apply(x0);
  return bias_objective_grad(field.c, field.lambda, basis, ax, y, tau_y);
}

std::vector<double> bias_update(std::span<const double> c, std::span<const double> grad, double alpha_t) {
  if (!(alpha_t >= 0.0)) throw InvalidArgument("bias step size must be non-negative");
  if (c.size() != grad.size()) throw InvalidArgument("bias update: gradient length mismatch");
  std::vector<double> out(c.begin(), c.end());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= alpha_t * grad[k];
  return out;
}

double bias_step_schedule(double alpha0, double sigma, double sigma_max) {
  if (!(sigma_max > 0.0)) throw InvalidArgument("sigma_max must be positive");
  return std::clamp(alpha0 * (1.0 - sigma / sigma_max), 0.0, alpha0);
}

double bias_curvature_bound(std::span<const double> c, double lambda, const BiasBasis& basis,
                            std::span<const double> ax, std::span<const double> y, double tau_y) {
  check_lengths(c, basis, ax, y, tau_y);
  const auto b = bias_values(c, basis);
  // Hessian = sum_i p_i (2 p_i - y_i) phi_i phi_i^T / tau^2 + lambda I with p_i = b_i a_i.
  // Its spectral norm is bounded by the top eigenvalue of the same sum with |weights|.
  const std::size_t k = basis.num_terms();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::VectorXd phi(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < b.size(); ++i) {
    const double p = b[i] * ax[i];
    const double w = std::abs(p * (2.0 * p - y[i]));
    if (w == 0.0) continue;
    for (std::size_t t = 0; t < k; ++t) phi[static_cast<Eigen::Index>(t)] = basis.term(t)[i];
    h.selfadjointView<Eigen::Lower>().rankUpdate(phi, w);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h.selfadjointView<Eigen::Lower>(), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().maxCoeff() / (tau_y * tau_y) + lambda;
}

}  // namespace diffprior

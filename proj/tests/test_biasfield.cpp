#include "doctest.h"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "diffprior/biasfield.hpp"
#include "diffprior/error.hpp"
#include "helpers.hpp"

using namespace diffprior;

namespace {

Geometry grid(const Dims& d) { return {d, {1, 1, 1}, Affine::Identity()}; }

struct Problem {
  BiasBasis basis;
  std::vector<double> c, ax, y;
};

Problem make_problem(int order, std::uint64_t seed) {
  Rng rng(seed);
  BiasBasis basis(order, grid({6, 5, 4}));
  std::vector<double> c(basis.num_terms());
  for (auto& v : c) v = 0.1 * rng.normal();
  std::vector<double> ax(basis.num_voxels()), y(basis.num_voxels());
  for (std::size_t i = 0; i < ax.size(); ++i) {
    ax[i] = rng.uniform(-1.0, 1.0);
    y[i] = 1.2 * ax[i] + 0.05 * rng.normal();
  }
  return {std::move(basis), std::move(c), std::move(ax), std::move(y)};
}

}  // namespace

TEST_CASE("term count and graded-lex ordering") {
  CHECK(BiasBasis::term_count(0) == 1);
  CHECK(BiasBasis::term_count(1) == 4);
  CHECK(BiasBasis::term_count(4) == 35);
  const BiasBasis b1(1, grid({3, 3, 3}));
  REQUIRE(b1.num_terms() == 4);
  CHECK(b1.exponents()[0] == std::array<int, 3>{0, 0, 0});
  CHECK(b1.exponents()[1] == std::array<int, 3>{1, 0, 0});
  CHECK(b1.exponents()[2] == std::array<int, 3>{0, 1, 0});
  CHECK(b1.exponents()[3] == std::array<int, 3>{0, 0, 1});
  // x at voxel (2, 0, 1) of a 3-wide axis is +1; z at k = 1 of 3 is 0.
  const std::size_t v = linear_index({3, 3, 3}, 2, 0, 1);
  CHECK(b1.term(1)[v] == 1.0);
  CHECK(b1.term(2)[v] == -1.0);
  CHECK(b1.term(3)[v] == 0.0);
  const BiasBasis b4(4, grid({4, 4, 4}));
  CHECK(b4.num_terms() == 35);
  CHECK(b4.exponents()[4] == std::array<int, 3>{2, 0, 0});
}

TEST_CASE("zero coefficients give a unit field") {
  const BiasBasis b(4, grid({5, 5, 5}));
  const Volume v = bias_eval(BiasField{std::vector<double>(35, 0.0)}, b);
  for (double x : v.data()) CHECK(x == 1.0);
  CHECK_THROWS_AS(bias_values(std::vector<double>(34, 0.0), b), InvalidArgument);
}

TEST_CASE("constant term scales the field uniformly") {
  const BiasBasis b(2, grid({4, 4, 4}));
  std::vector<double> c(b.num_terms(), 0.0);
  c[0] = std::log(3.0);
  for (double x : bias_values(c, b)) CHECK(x == doctest::Approx(3.0));
}

TEST_CASE("overflow is a numeric-range error") {
  const BiasBasis b(1, grid({3, 3, 3}));
  CHECK_THROWS_AS(bias_values(std::vector<double>{800.0, 0, 0, 0}, b), NumericRangeError);
}

TEST_CASE("objective gradient matches central differences") {
  auto p = make_problem(3, 1);
  const double tau = 0.1, lambda = 0.01;
  const auto g = bias_objective_grad(p.c, lambda, p.basis, p.ax, p.y, tau);
  for (std::size_t k = 0; k < p.c.size(); ++k) {
    auto cp = p.c, cm = p.c;
    const double h = 1e-6;
    cp[k] += h;
    cm[k] -= h;
    const double fd = (bias_objective(cp, lambda, p.basis, p.ax, p.y, tau) -
                       bias_objective(cm, lambda, p.basis, p.ax, p.y, tau)) /
                      (2 * h);
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("operator overload of the gradient computes A x0 first") {
  auto p = make_problem(2, 2);
  auto id = op_identity(p.basis.grid().dims);
  const auto a = bias_objective_grad(BiasField{p.c, 0.05}, p.basis, p.ax, p.y, *id, 0.2);
  const auto b = bias_objective_grad(p.c, 0.05, p.basis, p.ax, p.y, 0.2);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
}

TEST_CASE("curvature bound dominates the Hessian") {
  auto p = make_problem(2, 3);
  const double tau = 0.1, lambda = 0.01;
  const std::size_t k = p.c.size();
  Eigen::MatrixXd h(k, k);
  const double eps = 1e-5;
  for (std::size_t j = 0; j < k; ++j) {
    auto cp = p.c, cm = p.c;
    cp[j] += eps;
    cm[j] -= eps;
    const auto gp = bias_objective_grad(cp, lambda, p.basis, p.ax, p.y, tau);
    const auto gm = bias_objective_grad(cm, lambda, p.basis, p.ax, p.y, tau);
    for (std::size_t i = 0; i < k; ++i)
      h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = (gp[i] - gm[i]) / (2 * eps);
  }
  const Eigen::MatrixXd sym = 0.5 * (h + h.transpose());
  const double top = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(sym).eigenvalues().maxCoeff();
  CHECK(bias_curvature_bound(p.c, lambda, p.basis, p.ax, p.y, tau) >= top * (1 - 1e-6));
}

TEST_CASE("update and step schedule") {
  const std::vector<double> c{1.0, 2.0}, g{0.5, -1.0};
  CHECK(bias_update(c, g, 0.0) == c);
  CHECK(bias_update(c, g, 2.0) == std::vector<double>{0.0, 4.0});
  CHECK_THROWS_AS(bias_update(c, g, -1.0), InvalidArgument);
  CHECK(bias_step_schedule(1.0, 100.0, 100.0) == 0.0);
  CHECK(bias_step_schedule(1.0, 25.0, 100.0) == doctest::Approx(0.75));
  CHECK(bias_step_schedule(2.0, 0.0, 100.0) == 2.0);
  CHECK(bias_step_schedule(1.0, 200.0, 100.0) == 0.0);
}

TEST_CASE("a curvature-scaled step decreases the objective") {
  auto p = make_problem(4, 4);
  const double tau = 0.05, lambda = 0.01;
  const double f0 = bias_objective(p.c, lambda, p.basis, p.ax, p.y, tau);
  const auto g = bias_objective_grad(p.c, lambda, p.basis, p.ax, p.y, tau);
  const double alpha = 1.0 / bias_curvature_bound(p.c, lambda, p.basis, p.ax, p.y, tau);
  CHECK(bias_objective(bias_update(p.c, g, alpha), lambda, p.basis, p.ax, p.y, tau) < f0);
}

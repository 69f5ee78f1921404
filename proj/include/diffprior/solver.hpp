#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "diffprior/biasfield.hpp"
#include "diffprior/grid.hpp"
#include "diffprior/linops.hpp"
#include "diffprior/prior.hpp"
#include "diffprior/rng.hpp"

namespace diffprior {

inline constexpr double kDefaultRestorationTauY = 0.025;
inline constexpr double kDefaultInpaintingTauY = 0.005;
inline constexpr double kDefaultRefinementTauS = 0.05;

/// How the Langevin step size varies.
///  - annealing_linear: constant within one inner loop, decaying linearly over
///    the annealing steps from eta to eta * decay_ratio.
///  - inner_geometric / inner_linear: the full eta -> eta * decay_ratio decay
///    happens inside every inner loop (geometric or linear in j).
enum class LangevinSchedule { annealing_linear, inner_geometric, inner_linear };

struct BiasConfig {
  bool enabled = true;
  int order = 4;
  double lambda = 1e-2;
  /// Dimensionless step multiplier; the applied step is
  /// alpha0 * (1 - sigma_t / sigma_max) divided by a local curvature bound.
  double alpha0 = 1.0;
  std::size_t updates_per_step = 1;
};

struct SolverConfig {
  std::size_t annealing_steps = 50;
  double sigma_max = 100.0;
  double sigma_min = 0.1;
  std::size_t ode_steps = 5;
  double ode_sigma_min = 0.01;
  OdeMethod ode_method = OdeMethod::euler;
  std::size_t langevin_steps = 20;
  double langevin_eta = 1e-4;
  double eta_decay_ratio = 0.01;
  LangevinSchedule eta_schedule = LangevinSchedule::annealing_linear;
  /// Langevin steps are capped at langevin_stability / L, with L the
  /// curvature of the inner potential.
  double langevin_stability = 1.0;
  /// Likelihood noise scale; task-specific default when unset.
  std::optional<double> tau_y;
  double tau_t_multiplier = 1.0;
  BiasConfig bias;
  std::uint64_t seed = 0;

  void validate() const;
  OdeConfig ode() const { return {ode_steps, ode_sigma_min, ode_method}; }
};

/// y = b .* A x + n. With estimate_bias false, b stays fixed at exp(basis * c)
/// (or 1 without a basis).
struct RestorationTask {
  std::vector<double> y;
  OperatorPtr a;
  std::shared_ptr<const BiasBasis> basis;
  BiasField bias;
  bool estimate_bias = true;
  /// Largest singular value of A; computed on demand when zero.
  double a_norm = 0.0;
};

/// y_hat = S x + n with S the mask selection.
struct InpaintingTask {
  std::vector<double> y_hat;
  OperatorPtr select;
};

/// x_hat = x + n, with precision tau_s.
struct RefinementTask {
  std::vector<double> x_hat;
  double tau_s = kDefaultRefinementTauS;
};

/// No observation; the sampler reduces to prior sampling.
struct UnconditionalTask {
  std::size_t size = 0;
};

using Task = std::variant<RestorationTask, InpaintingTask, RefinementTask, UnconditionalTask>;

std::size_t state_size(const Task& task);

/// Gradient of the negative log-likelihood with respect to x0:
///  restoration  A^T (b .* (b .* A x0 - y)) / tau_y^2
///  inpainting   S^T (S x0 - y_hat) / tau_y^2
///  refinement   tau_s (x0 - x_hat)
///  unconditional 0
std::vector<double> likelihood_grad(const Task& task, std::span<const double> x0, double tau_y);

/// The matching negative log-likelihood (up to a constant).
double likelihood_value(const Task& task, std::span<const double> x0, double tau_y);

/// Step sizes of one inner Langevin loop.
struct LangevinParams {
  std::size_t steps = 20;
  double eta = 1e-4;
  double decay_ratio = 0.01;
  LangevinSchedule schedule = LangevinSchedule::annealing_linear;
  double stability = 1.0;
};

/// Inner-loop parameters at annealing index `index` of `cfg`.
LangevinParams langevin_params_at(const SolverConfig& cfg, std::size_t index);

/// Langevin sampling of x0 from N(x0; anchor, tau_t^2 I) p(y | x0), started at x_init:
///   x <- x - eta_j ((x - anchor) / tau_t^2 + likelihood_grad) + sqrt(2 eta_j) eps_j.
/// Throws NumericRangeError with the inner step index on a non-finite state.
std::vector<double> langevin_x0(std::span<const double> x_init, std::span<const double> anchor, double tau_t,
                                const Task& task, const LangevinParams& params, double tau_y, Rng& rng);

struct StepRecord {
  std::size_t index = 0;
  double sigma = 0.0;
  double eta = 0.0;
  /// Negative log-likelihood of x0|y.
  double data_fit = 0.0;
  /// RMS distance between x0|y and the prior estimate x0_hat.
  double prior_residual = 0.0;
  bool finite = true;
  /// Bias objective before the first c-update and after each accepted one.
  std::vector<double> bias_objective;
};

struct SolveReport {
  std::vector<double> estimate;  // last x0|y
  std::vector<StepRecord> steps;
  std::vector<double> bias_coefficients;
  double tau_y = 0.0;
  double wall_seconds = 0.0;

  /// Per-step scalars as JSON (wall time included).
  std::string to_json() const;
};

/// Decoupled annealing posterior sampling. Throws NumericRangeError carrying
/// the annealing index on numeric failure.
SolveReport daps_solve(const Task& task, const ScoreProvider& score, const SolverConfig& cfg, Rng& rng);

/// Acquisition geometry for restoration. The high-resolution grid is derived
/// from the observation's affine: low-res voxel i is centred at high-res
/// index (i + 0.5) f - 0.5.
struct RestorationParams {
  Vec3 factors{1.0, 1.0, 1.0};
  /// Zero entries mean "derive from factors".
  Dims hr_dims{0, 0, 0};
  /// Unset: slice thickness on the through-plane (largest factor) axis, 0 in plane.
  std::optional<SliceProfile> profile;
  /// Unset: identity alignment.
  std::optional<Affine> alignment;
};

/// High-resolution geometry implied by `y` and `params`.
Geometry restoration_grid(const Geometry& y, const RestorationParams& params);
SliceProfile default_slice_profile(const Vec3& factors, const Vec3& lr_spacing);
/// A = R S T for `params`.
OperatorPtr restoration_operator(const Geometry& y, const RestorationParams& params);

struct RestoreResult {
  Volume x;
  std::vector<double> bias_coefficients;
  SolveReport report;
};

RestoreResult restore(const Volume& y, const RestorationParams& params, const ScoreProvider& score,
                      const SolverConfig& cfg);

struct SolveResult {
  Volume x;
  SolveReport report;
};

SolveResult inpaint(const Volume& y, const Mask& mask, const ScoreProvider& score, const SolverConfig& cfg);
SolveResult refine(const Volume& x_hat, double tau_s, const ScoreProvider& score, const SolverConfig& cfg);

}  // namespace diffprior

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "diffprior/grid.hpp"
#include "diffprior/rng.hpp"

namespace diffprior {

/// Strictly decreasing noise levels sigma_0 > ... > sigma_{n-1}.
struct NoiseSchedule {
  std::vector<double> sigmas;

  std::size_t size() const { return sigmas.size(); }
  double operator[](std::size_t i) const { return sigmas[i]; }
};

/// sigma_i = (smax^(1/rho) + i/(steps-1) * (smin^(1/rho) - smax^(1/rho)))^rho.
NoiseSchedule schedule_poly(std::size_t steps, double sigma_min, double sigma_max, double rho);

/// The rho = 7 schedule. Endpoints are exact.
NoiseSchedule schedule_poly7(std::size_t steps, double sigma_min, double sigma_max);

/// Score of a noise-smoothed prior, grad_x log p_sigma(x).
class ScoreProvider {
 public:
  virtual ~ScoreProvider() = default;

  virtual std::string_view kind() const = 0;
  virtual std::vector<double> score(std::span<const double> x, double sigma) const = 0;
  /// Tweedie estimate x + sigma^2 * score(x, sigma).
  virtual std::vector<double> denoise(std::span<const double> x, double sigma) const;
};

/// Isotropic Gaussian prior N(mean, variance I). A one-element mean broadcasts.
class GaussianPrior final : public ScoreProvider {
 public:
  GaussianPrior(std::vector<double> mean, double variance);

  std::string_view kind() const override { return "gaussian"; }
  std::vector<double> score(std::span<const double> x, double sigma) const override;

  double mean_at(std::size_t i) const { return mean_.size() == 1 ? mean_[0] : mean_[i]; }
  const std::vector<double>& mean() const { return mean_; }
  double variance() const { return variance_; }

 private:
  std::vector<double> mean_;
  double variance_;
};

/// Gaussian mixture sum_j w_j N(mu_j, s_j^2 I) in `dim` dimensions.
///
/// Smoothing with noise sigma keeps it a mixture with variances s_j^2 + sigma^2,
/// so scores and log-densities are closed form. With `voxelwise` set the
/// mixture must be one-dimensional and is applied independently to every
/// coordinate of the state (an intensity prior).
class GmmPrior final : public ScoreProvider {
 public:
  GmmPrior(std::vector<double> weights, std::vector<double> means, std::vector<double> variances,
           std::size_t dim, bool voxelwise = false);

  std::string_view kind() const override { return "gmm"; }
  std::vector<double> score(std::span<const double> x, double sigma) const override;
  double log_density(std::span<const double> x, double sigma) const;

  std::size_t num_components() const { return weights_.size(); }
  std::size_t dim() const { return dim_; }
  bool voxelwise() const { return voxelwise_; }
  const std::vector<double>& weights() const { return weights_; }
  /// Row-major num_components x dim.
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& variances() const { return variances_; }
  std::span<const double> component_mean(std::size_t j) const { return {means_.data() + j * dim_, dim_}; }

  /// Posterior component responsibilities of a dim-sized point at noise sigma.
  std::vector<double> responsibilities(std::span<const double> x, double sigma) const;

 private:
  void score_block(std::span<const double> x, double sigma, std::span<double> out) const;
  double log_density_block(std::span<const double> x, double sigma) const;

  std::vector<double> weights_;
  std::vector<double> means_;
  std::vector<double> variances_;
  std::size_t dim_;
  bool voxelwise_;
};

std::vector<double> gmm_score(std::span<const double> x, double sigma, const GmmPrior& prior);

/// One-dimensional voxelwise mixture fitted to intensity samples by EM.
/// Means start evenly spaced over the sample range (quantiles collapse on
/// plateau-heavy data); variances are floored at `variance_floor`.
GmmPrior fit_gmm_1d(std::span<const double> samples, std::size_t components, int iterations = 200,
                    double variance_floor = 1e-4);

std::string gmm_to_json(const GmmPrior& prior);
GmmPrior gmm_from_json(const std::string& text);

enum class OdeMethod { euler, heun };

/// Inner probability-flow integration used to estimate a clean state.
struct OdeConfig {
  std::size_t steps = 5;
  double sigma_stop = 0.01;
  OdeMethod method = OdeMethod::euler;
};

/// Integrates dx/dsigma = -sigma * score(x, sigma) from sigma_t down to
/// cfg.sigma_stop over a rho = 7 sub-schedule, then applies one Tweedie
/// step at sigma_stop. When sigma_t <= sigma_stop only the Tweedie step at
/// sigma_t is taken. Throws NumericRangeError with the step index if the
/// state becomes non-finite.
std::vector<double> estimate_x0(std::span<const double> x_t, double sigma_t, const ScoreProvider& score,
                                const OdeConfig& cfg);

/// Ancestral sampling: x <- estimate_x0(x, sigma_i) + sigma_{i+1} * eps from
/// x ~ N(0, sigma_0^2 I), with a final estimate_x0 at the last level.
std::vector<double> sample_prior(const NoiseSchedule& schedule, const ScoreProvider& score, Rng& rng,
                                 std::size_t size, const OdeConfig& ode = {});
Volume sample_prior(const NoiseSchedule& schedule, const ScoreProvider& score, Rng& rng,
                    const Geometry& shape, const OdeConfig& ode = {});

}  // namespace diffprior

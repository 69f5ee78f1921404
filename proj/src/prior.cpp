#include "diffprior/prior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "json.hpp"

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

void require_finite(std::span<const double> x, const char* what, std::size_t step) {
  for (double v : x)
    if (!std::isfinite(v)) throw NumericRangeError(std::string(what) + ": state became non-finite", step);
}

}  // namespace

NoiseSchedule schedule_poly(std::size_t steps, double sigma_min, double sigma_max, double rho) {
  if (steps < 2) throw InvalidArgument("noise schedule needs at least 2 steps");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min) || !std::isfinite(sigma_max))
    throw InvalidArgument("noise schedule requires 0 < sigma_min < sigma_max");
  const double a = std::pow(sigma_max, 1.0 / rho);
  const double b = std::pow(sigma_min, 1.0 / rho);
  NoiseSchedule s;
  s.sigmas.resize(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(steps - 1);
    s.sigmas[i] = std::pow(a + t * (b - a), rho);
  }
  s.sigmas.front() = sigma_max;
  s.sigmas.back() = sigma_min;
  return s;
}

NoiseSchedule schedule_poly7(std::size_t steps, double sigma_min, double sigma_max) {
  return schedule_poly(steps, sigma_min, sigma_max, 7.0);
}

std::vector<double> ScoreProvider::denoise(std::span<const double> x, double sigma) const {
  auto s = score(x, sigma);
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = x[i] + s2 * s[i];
  return s;
}

// ---------------------------------------------------------------------------

GaussianPrior::GaussianPrior(std::vector<double> mean, double variance)
    : mean_(std::move(mean)), variance_(variance) {
  if (mean_.empty()) throw InvalidArgument("gaussian prior mean must not be empty");
  if (!(variance_ > 0.0)) throw InvalidArgument("gaussian prior variance must be positive");
}

std::vector<double> GaussianPrior::score(std::span<const double> x, double sigma) const {
  if (mean_.size() != 1 && mean_.size() != x.size())
    throw InvalidArgument("gaussian prior: state length does not match the mean");
  const double v = variance_ + sigma * sigma;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (mean_at(i) - x[i]) / v;
  return out;
}

// ---------------------------------------------------------------------------

GmmPrior::GmmPrior(std::vector<double> weights, std::vector<double> means, std::vector<double> variances,
                   std::size_t dim, bool voxelwise)
    : weights_(std::move(weights)),
      means_(std::move(means)),
      variances_(std::move(variances)),
      dim_(dim),
      voxelwise_(voxelwise) {
  if (weights_.empty()) throw InvalidArgument("gmm needs at least one component");
  if (dim_ == 0) throw InvalidArgument("gmm dimension must be positive");
  if (voxelwise_ && dim_ != 1) throw InvalidArgument("voxelwise gmm must be one-dimensional");
  if (means_.size() != weights_.size() * dim_) throw InvalidArgument("gmm means must be components x dim");
  if (variances_.size() != weights_.size()) throw InvalidArgument("gmm needs one variance per component");
  double sum = 0.0;
  for (double w : weights_) {
    if (!(w >= 0.0)) throw InvalidArgument("gmm weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("gmm weights must sum to 1");
  for (double v : variances_)
    if (!(v > 0.0)) throw InvalidArgument("gmm variances must be positive");
}

std::vector<double> GmmPrior::responsibilities(std::span<const double> x, double sigma) const {
  const std::size_t k = weights_.size();
  std::vector<double> logp(k);
  const double s2 = sigma * sigma;
  for (std::size_t j = 0; j < k; ++j) {
    const double v = variances_[j] + s2;
    const auto mu = component_mean(j);
    double d2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) {
      const double d = x[i] - mu[i];
      d2 += d * d;
    }
    logp[j] = (weights_[j] > 0.0 ? std::log(weights_[j]) : -INFINITY) -
              0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi * v) - 0.5 * d2 / v;
  }
  const double lse = log_sum_exp(logp);
  for (double& l : logp) l = std::exp(l - lse);
  return logp;
}

void GmmPrior::score_block(std::span<const double> x, double sigma, std::span<double> out) const {
  const auto r = responsibilities(x, sigma);
  std::fill(out.begin(), out.end(), 0.0);
  const double s2 = sigma * sigma;
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (r[j] == 0.0) continue;
    const double scale = r[j] / (variances_[j] + s2);
    const auto mu = component_mean(j);
    for (std::size_t i = 0; i < dim_; ++i) out[i] += scale * (mu[i] - x[i]);
  }
}

double GmmPrior::log_density_block(std::span<const double> x, double sigma) const {
  std::vector<double> logp(weights_.size());
  const double s2 = sigma * sigma;
  for (std::size_t j = 0; j < weights_.size(); ++j) {
    const double v = variances_[j] + s2;
    const auto mu = component_mean(j);
    double d2 = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) d2 += (x[i] - mu[i]) * (x[i] - mu[i]);
    logp[j] = (weights_[j] > 0.0 ? std::log(weights_[j]) : -INFINITY) -
              0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi * v) - 0.5 * d2 / v;
  }
  return log_sum_exp(logp);
}

std::vector<double> GmmPrior::score(std::span<const double> x, double sigma) const {
  if (!(sigma >= 0.0)) throw InvalidArgument("gmm score requires sigma >= 0");
  std::vector<double> out(x.size());
  if (voxelwise_) {
    const std::size_t k = weights_.size();
    const double s2 = sigma * sigma;
    std::vector<double> offset(k), inv_v(k), logp(k);
    for (std::size_t j = 0; j < k; ++j) {
      const double v = variances_[j] + s2;
      inv_v[j] = 1.0 / v;
      offset[j] = (weights_[j] > 0.0 ? std::log(weights_[j]) : -INFINITY) - 0.5 * std::log(2.0 * std::numbers::pi * v);
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
      double m = -INFINITY;
      for (std::size_t j = 0; j < k; ++j) {
        const double d = x[i] - means_[j];
        logp[j] = offset[j] - 0.5 * d * d * inv_v[j];
        m = std::max(m, logp[j]);
      }
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double r = std::exp(logp[j] - m);
        den += r;
        num += r * (means_[j] - x[i]) * inv_v[j];
      }
      out[i] = num / den;
    }
    return out;
  }
  if (x.size() != dim_) throw InvalidArgument("gmm: state length does not match the mixture dimension");
  score_block(x, sigma, out);
  return out;
}

double GmmPrior::log_density(std::span<const double> x, double sigma) const {
  if (voxelwise_) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += log_density_block(x.subspan(i, 1), sigma);
    return acc;
  }
  if (x.size() != dim_) throw InvalidArgument("gmm: state length does not match the mixture dimension");
  return log_density_block(x, sigma);
}

std::vector<double> gmm_score(std::span<const double> x, double sigma, const GmmPrior& prior) {
  return prior.score(x, sigma);
}

GmmPrior fit_gmm_1d(std::span<const double> samples, std::size_t components, int iterations,
                    double variance_floor) {
  if (samples.size() < components || components == 0)
    throw InvalidArgument("gmm fit needs at least as many samples as components");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : sorted) var += (v - mean) * (v - mean);
  var = std::max(var / static_cast<double>(n), variance_floor);

  std::vector<double> w(components, 1.0 / static_cast<double>(components)), mu(components),
      s2(components, var);
  for (std::size_t j = 0; j < components; ++j) {
    const double q = (static_cast<double>(j) + 0.5) / static_cast<double>(components);
    mu[j] = sorted.front() + q * (sorted.back() - sorted.front());
  }

  std::vector<double> logp(components), nk(components), sx(components), sxx(components);
  for (int it = 0; it < iterations; ++it) {
    std::fill(nk.begin(), nk.end(), 0.0);
    std::fill(sx.begin(), sx.end(), 0.0);
    std::fill(sxx.begin(), sxx.end(), 0.0);
    for (double x : sorted) {
      for (std::size_t j = 0; j < components; ++j)
        logp[j] = std::log(w[j]) - 0.5 * std::log(2.0 * std::numbers::pi * s2[j]) -
                  0.5 * (x - mu[j]) * (x - mu[j]) / s2[j];
      const double lse = log_sum_exp(logp);
      for (std::size_t j = 0; j < components; ++j) {
        const double r = std::exp(logp[j] - lse);
        nk[j] += r;
        sx[j] += r * x;
        sxx[j] += r * x * x;
      }
    }
    for (std::size_t j = 0; j < components; ++j) {
      const double count = std::max(nk[j], 1e-12);
      w[j] = std::max(nk[j] / static_cast<double>(n), 1e-12);
      mu[j] = sx[j] / count;
      s2[j] = std::max(sxx[j] / count - mu[j] * mu[j], variance_floor);
    }
    double total = 0.0;
    for (double v : w) total += v;
    for (double& v : w) v /= total;
  }
  // Renormalize so the weights sum to one within the constructor's tolerance.
  double total = 0.0;
  for (double v : w) total += v;
  for (double& v : w) v /= total;
  w.back() = 1.0;
  for (std::size_t j = 0; j + 1 < components; ++j) w.back() -= w[j];
  return GmmPrior(w, mu, s2, 1, true);
}

std::string gmm_to_json(const GmmPrior& prior) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = "gmm";
  j["dim"] = prior.dim();
  j["voxelwise"] = prior.voxelwise();
  j["weights"] = prior.weights();
  j["means"] = prior.means();
  j["variances"] = prior.variances();
  return j.dump(2);
}

GmmPrior gmm_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    if (j.value("kind", std::string("gmm")) != "gmm") throw InvalidArgument("json does not describe a gmm prior");
    return GmmPrior(j.at("weights").get<std::vector<double>>(), j.at("means").get<std::vector<double>>(),
                    j.at("variances").get<std::vector<double>>(), j.value("dim", std::size_t{1}),
                    j.value("voxelwise", false));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("invalid gmm json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------

std::vector<double> estimate_x0(std::span<const double> x_t, double sigma_t, const ScoreProvider& score,
                                const OdeConfig& cfg) {
  if (cfg.steps < 1) throw InvalidArgument("estimate_x0 needs at least one ODE step");
  if (!(sigma_t > 0.0) || !(cfg.sigma_stop > 0.0)) throw InvalidArgument("estimate_x0 needs positive noise levels");
  std::vector<double> x(x_t.begin(), x_t.end());
  require_finite(x, "estimate_x0", 0);
  double sigma_end = sigma_t;
  if (sigma_t > cfg.sigma_stop) {
    const auto sub = schedule_poly7(cfg.steps + 1, cfg.sigma_stop, sigma_t);
    std::vector<double> drift(x.size());
    for (std::size_t i = 0; i + 1 < sub.size(); ++i) {
      const double s0 = sub[i], s1 = sub[i + 1], h = s1 - s0;
      const auto g0 = score.score(x, s0);
      // dx/dsigma = -sigma * score
      for (std::size_t n = 0; n < x.size(); ++n) drift[n] = -s0 * g0[n];
      if (cfg.method == OdeMethod::heun) {
        std::vector<double> xe(x.size());
        for (std::size_t n = 0; n < x.size(); ++n) xe[n] = x[n] + h * drift[n];
        const auto g1 = score.score(xe, s1);
        for (std::size_t n = 0; n < x.size(); ++n) x[n] += 0.5 * h * (drift[n] - s1 * g1[n]);
      } else {
        for (std::size_t n = 0; n < x.size(); ++n) x[n] += h * drift[n];
      }
      require_finite(x, "estimate_x0", i + 1);
    }
    sigma_end = cfg.sigma_stop;
  }
  x = score.denoise(x, sigma_end);
  require_finite(x, "estimate_x0", cfg.steps + 1);
  return x;
}

std::vector<double> sample_prior(const NoiseSchedule& schedule, const ScoreProvider& score, Rng& rng,
                                 std::size_t size, const OdeConfig& ode) {
  if (schedule.size() < 2) throw InvalidArgument("sample_prior needs a schedule with at least 2 levels");
  std::vector<double> x = rng.normal_vector(size);
  for (double& v : x) v *= schedule[0];
  for (std::size_t i = 0; i + 1 < schedule.size(); ++i) {
    x = estimate_x0(x, schedule[i], score, ode);
    for (double& v : x) v += schedule[i + 1] * rng.normal();
  }
  return estimate_x0(x, schedule.sigmas.back(), score, ode);
}

Volume sample_prior(const NoiseSchedule& schedule, const ScoreProvider& score, Rng& rng, const Geometry& shape,
                    const OdeConfig& ode) {
  return Volume(shape, sample_prior(schedule, score, rng, shape.size(), ode));
}

}  // namespace diffprior

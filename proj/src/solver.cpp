#include "diffprior/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>

#include <Eigen/LU>

#include "json.hpp"

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_tau(double tau_y) {
  if (!(tau_y > 0.0) || !std::isfinite(tau_y)) throw InvalidArgument("tau_y must be positive and finite");
}

std::vector<double> bias_or_ones(const RestorationTask& t) {
  if (!t.basis) return std::vector<double>(t.y.size(), 1.0);
  return bias_values(t.bias.c, *t.basis);
}

void check_restoration(const RestorationTask& t) {
  if (!t.a) throw InvalidArgument("restoration task has no forward operator");
  if (t.y.size() != t.a->output_size()) throw InvalidArgument("observation does not match the operator output");
  if (t.basis && t.basis->num_voxels() != t.y.size())
    throw InvalidArgument("bias basis grid does not match the observation");
  if (t.basis && t.bias.c.size() != t.basis->num_terms())
    throw InvalidArgument("bias coefficients do not match the basis");
}

// Likelihood terms with the bias field evaluated once.
class Likelihood {
 public:
  Likelihood(const Task& task, double tau_y) : task_(task), tau_y_(tau_y) {
    if (const auto* r = std::get_if<RestorationTask>(&task)) {
      check_restoration(*r);
      b_ = bias_or_ones(*r);
    } else if (const auto* p = std::get_if<InpaintingTask>(&task)) {
      if (!p->select) throw InvalidArgument("inpainting task has no selection operator");
      if (p->y_hat.size() != p->select->output_size())
        throw InvalidArgument("observed values do not match the mask");
    } else if (const auto* f = std::get_if<RefinementTask>(&task)) {
      if (!(f->tau_s > 0.0)) throw InvalidArgument("tau_s must be positive");
    }
    if (!std::holds_alternative<RefinementTask>(task) && !std::holds_alternative<UnconditionalTask>(task))
      require_tau(tau_y);
  }

  std::vector<double> grad(std::span<const double> x0) const {
    if (x0.size() != state_size(task_)) throw InvalidArgument("state does not match the task geometry");
    const double inv = 1.0 / (tau_y_ * tau_y_);
    return std::visit(
        Overloaded{[&](const RestorationTask& t) {
                     auto r = t.a->apply(x0);
                     for (std::size_t i = 0; i < r.size(); ++i) r[i] = b_[i] * (b_[i] * r[i] - t.y[i]) * inv;
                     return t.a->adjoint(r);
                   },
                   [&](const InpaintingTask& t) {
                     auto r = t.select->apply(x0);
                     for (std::size_t i = 0; i < r.size(); ++i) r[i] = (r[i] - t.y_hat[i]) * inv;
                     return t.select->adjoint(r);
                   },
                   [&](const RefinementTask& t) {
                     std::vector<double> g(x0.size());
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] = t.tau_s * (x0[i] - t.x_hat[i]);
                     return g;
                   },
                   [&](const UnconditionalTask&) { return std::vector<double>(x0.size(), 0.0); }},
        task_);
  }

  double value(std::span<const double> x0) const {
    if (x0.size() != state_size(task_)) throw InvalidArgument("state does not match the task geometry");
    const double half_inv = 0.5 / (tau_y_ * tau_y_);
    return std::visit(Overloaded{[&](const RestorationTask& t) {
                                   const auto ax = t.a->apply(x0);
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < ax.size(); ++i) {
                                     const double r = b_[i] * ax[i] - t.y[i];
                                     acc += r * r;
                                   }
                                   return acc * half_inv;
                                 },
                                 [&](const InpaintingTask& t) {
                                   const auto sx = t.select->apply(x0);
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < sx.size(); ++i)
                                     acc += (sx[i] - t.y_hat[i]) * (sx[i] - t.y_hat[i]);
                                   return acc * half_inv;
                                 },
                                 [&](const RefinementTask& t) {
                                   double acc = 0.0;
                                   for (std::size_t i = 0; i < x0.size(); ++i)
                                     acc += (x0[i] - t.x_hat[i]) * (x0[i] - t.x_hat[i]);
                                   return 0.5 * t.tau_s * acc;
                                 },
                                 [&](const UnconditionalTask&) { return 0.0; }},
                      task_);
  }

  // Curvature of the likelihood term along its stiffest direction.
  double lipschitz(double a_norm) const {
    return std::visit(Overloaded{[&](const RestorationTask&) {
                                   double bmax = 0.0;
                                   for (double v : b_) bmax = std::max(bmax, std::abs(v));
                                   return bmax * bmax * a_norm * a_norm / (tau_y_ * tau_y_);
                                 },
                                 [&](const InpaintingTask&) { return 1.0 / (tau_y_ * tau_y_); },
                                 [&](const RefinementTask& t) { return t.tau_s; },
                                 [&](const UnconditionalTask&) { return 0.0; }},
                      task_);
  }

 private:
  const Task& task_;
  double tau_y_;
  std::vector<double> b_;
};

double restoration_norm(const Task& task) {
  const auto* r = std::get_if<RestorationTask>(&task);
  if (!r) return 1.0;
  return r->a_norm > 0.0 ? r->a_norm : operator_norm(*r->a);
}

std::vector<double> inner_step_sizes(const LangevinParams& p) {
  std::vector<double> eta(p.steps, p.eta);
  if (p.steps < 2) return eta;
  for (std::size_t j = 0; j < p.steps; ++j) {
    const double u = static_cast<double>(j) / static_cast<double>(p.steps - 1);
    if (p.schedule == LangevinSchedule::inner_geometric) eta[j] = p.eta * std::pow(p.decay_ratio, u);
    else if (p.schedule == LangevinSchedule::inner_linear) eta[j] = p.eta * (1.0 + u * (p.decay_ratio - 1.0));
  }
  return eta;
}

std::vector<double> run_langevin(std::span<const double> x_init, std::span<const double> anchor, double tau_t,
                                 const Likelihood& lik, double lik_lipschitz, const LangevinParams& params,
                                 Rng& rng) {
  if (!(tau_t > 0.0)) throw InvalidArgument("tau_t must be positive");
  if (x_init.size() != anchor.size()) throw InvalidArgument("langevin: anchor length mismatch");
  const double inv_tau2 = 1.0 / (tau_t * tau_t);
  const double cap = params.stability / (inv_tau2 + lik_lipschitz);
  std::vector<double> x(x_init.begin(), x_init.end());
  const auto etas = inner_step_sizes(params);
  for (std::size_t j = 0; j < etas.size(); ++j) {
    const double eta = std::min(etas[j], cap);
    if (eta <= 0.0) continue;
    const auto g = lik.grad(x);
    const double noise = std::sqrt(2.0 * eta);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] -= eta * ((x[i] - anchor[i]) * inv_tau2 + g[i]);
      x[i] += noise * rng.normal();
      if (!std::isfinite(x[i])) throw NumericRangeError("langevin state became non-finite", j);
    }
  }
  return x;
}

double rms_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return a.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(a.size()));
}

// Annealed gradient steps on the bias coefficients at fixed x0. A step is only
// accepted when it does not increase the objective; otherwise it is halved.
void update_bias(RestorationTask& task, std::span<const double> x0, double sigma, const SolverConfig& cfg,
                 double tau_y, StepRecord& record) {
  const auto ax = task.a->apply(x0);
  const double lambda = task.bias.lambda;
  double obj = bias_objective(task.bias.c, lambda, *task.basis, ax, task.y, tau_y);
  record.bias_objective.push_back(obj);
  const double schedule = bias_step_schedule(cfg.bias.alpha0, sigma, cfg.sigma_max);
  if (schedule <= 0.0) return;
  for (std::size_t u = 0; u < cfg.bias.updates_per_step; ++u) {
    const auto grad = bias_objective_grad(task.bias.c, lambda, *task.basis, ax, task.y, tau_y);
    double alpha = schedule / bias_curvature_bound(task.bias.c, lambda, *task.basis, ax, task.y, tau_y);
    bool accepted = false;
    for (int halving = 0; halving < 40 && !accepted; ++halving, alpha *= 0.5) {
      auto candidate = bias_update(task.bias.c, grad, alpha);
      double next;
      try {
        next = bias_objective(candidate, lambda, *task.basis, ax, task.y, tau_y);
      } catch (const NumericRangeError&) {
        continue;
      }
      if (next <= obj) {
        task.bias.c = std::move(candidate);
        obj = next;
        accepted = true;
      }
    }
    if (!accepted) break;
    record.bias_objective.push_back(obj);
  }
}

}  // namespace

void SolverConfig::validate() const {
  if (annealing_steps < 2) throw InvalidArgument("annealing_steps must be >= 2");
  if (!(sigma_min > 0.0) || !(sigma_max > sigma_min)) throw InvalidArgument("need 0 < sigma_min < sigma_max");
  if (ode_steps < 1) throw InvalidArgument("ode_steps must be >= 1");
  if (!(ode_sigma_min > 0.0)) throw InvalidArgument("ode_sigma_min must be positive");
  if (!(langevin_eta >= 0.0)) throw InvalidArgument("langevin_eta must be non-negative");
  if (!(eta_decay_ratio > 0.0)) throw InvalidArgument("eta_decay_ratio must be positive");
  if (!(langevin_stability > 0.0)) throw InvalidArgument("langevin_stability must be positive");
  if (tau_y && !(*tau_y > 0.0)) throw InvalidArgument("tau_y must be positive");
  if (!(tau_t_multiplier > 0.0)) throw InvalidArgument("tau_t_multiplier must be positive");
  if (bias.order < 0) throw InvalidArgument("bias order must be >= 0");
  if (!(bias.lambda >= 0.0)) throw InvalidArgument("bias lambda must be non-negative");
  if (!(bias.alpha0 >= 0.0)) throw InvalidArgument("bias alpha0 must be non-negative");
}

std::size_t state_size(const Task& task) {
  return std::visit(Overloaded{[](const RestorationTask& t) { return t.a ? t.a->input_size() : std::size_t{0}; },
                               [](const InpaintingTask& t) { return t.select ? t.select->input_size() : std::size_t{0}; },
                               [](const RefinementTask& t) { return t.x_hat.size(); },
                               [](const UnconditionalTask& t) { return t.size; }},
                    task);
}

std::vector<double> likelihood_grad(const Task& task, std::span<const double> x0, double tau_y) {
  return Likelihood(task, tau_y).grad(x0);
}

double likelihood_value(const Task& task, std::span<const double> x0, double tau_y) {
  return Likelihood(task, tau_y).value(x0);
}

LangevinParams langevin_params_at(const SolverConfig& cfg, std::size_t index) {
  LangevinParams p;
  p.steps = cfg.langevin_steps;
  p.decay_ratio = cfg.eta_decay_ratio;
  p.schedule = cfg.eta_schedule;
  p.stability = cfg.langevin_stability;
  p.eta = cfg.langevin_eta;
  if (cfg.eta_schedule == LangevinSchedule::annealing_linear && cfg.annealing_steps > 1) {
    const double u = static_cast<double>(index) / static_cast<double>(cfg.annealing_steps - 1);
    p.eta = cfg.langevin_eta * (1.0 + u * (cfg.eta_decay_ratio - 1.0));
  }
  return p;
}

std::vector<double> langevin_x0(std::span<const double> x_init, std::span<const double> anchor, double tau_t,
                                const Task& task, const LangevinParams& params, double tau_y, Rng& rng) {
  const Likelihood lik(task, tau_y);
  return run_langevin(x_init, anchor, tau_t, lik, lik.lipschitz(restoration_norm(task)), params, rng);
}

SolveReport daps_solve(const Task& task_in, const ScoreProvider& score, const SolverConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  Task task = task_in;
  const double tau_y = cfg.tau_y.value_or(kDefaultRestorationTauY);
  const std::size_t n = state_size(task);
  if (n == 0) throw InvalidArgument("task has an empty state");

  auto* restoration = std::get_if<RestorationTask>(&task);
  const bool bias_active = restoration && restoration->basis && restoration->estimate_bias && cfg.bias.enabled;
  const double a_norm = restoration_norm(task);

  const auto sched = schedule_poly7(cfg.annealing_steps, cfg.sigma_min, cfg.sigma_max);
  SolveReport report;
  report.tau_y = tau_y;
  std::vector<double> x = rng.normal_vector(n);
  for (double& v : x) v *= cfg.sigma_max;
  std::vector<double> x0y;

  for (std::size_t i = 0; i < sched.size(); ++i) {
    const double sigma = sched[i];
    StepRecord rec;
    rec.index = i;
    rec.sigma = sigma;
    try {
      const auto x0hat = estimate_x0(x, sigma, score, cfg.ode());
      const Likelihood lik(task, tau_y);
      auto params = langevin_params_at(cfg, i);
      rec.eta = params.eta;
      x0y = run_langevin(x0hat, x0hat, cfg.tau_t_multiplier * sigma, lik, lik.lipschitz(a_norm), params, rng);
      rec.data_fit = lik.value(x0y);
      rec.prior_residual = rms_distance(x0y, x0hat);
      if (bias_active) update_bias(*restoration, x0y, sigma, cfg, tau_y, rec);
    } catch (const NumericRangeError& e) {
      throw NumericRangeError(std::string("annealing step ") + std::to_string(i) + ": " + e.what(), i);
    }
    report.steps.push_back(std::move(rec));
    if (i + 1 < sched.size()) {
      x = x0y;
      for (double& v : x) v += sched[i + 1] * rng.normal();
    }
  }
  report.estimate = std::move(x0y);
  if (restoration) report.bias_coefficients = restoration->bias.c;
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string SolveReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["tau_y"] = tau_y;
  j["wall_seconds"] = wall_seconds;
  j["bias_coefficients"] = bias_coefficients;
  j["output"] = "last x0|y sample";
  auto& steps_json = j["steps"] = nlohmann::json::array();
  for (const auto& s : steps)
    steps_json.push_back({{"index", s.index},
                          {"sigma", s.sigma},
                          {"eta", s.eta},
                          {"data_fit", s.data_fit},
                          {"prior_residual", s.prior_residual},
                          {"finite", s.finite},
                          {"bias_objective", s.bias_objective}});
  return j.dump(2);
}

// ---------------------------------------------------------------------------

SliceProfile default_slice_profile(const Vec3& factors, const Vec3& lr_spacing) {
  int axis = 0;
  for (int d = 1; d < 3; ++d)
    if (factors[d] > factors[axis]) axis = d;
  SliceProfile p;
  if (factors[axis] > 1.0) p.fwhm_mm[axis] = lr_spacing[axis];
  return p;
}

Geometry restoration_grid(const Geometry& y, const RestorationParams& params) {
  Geometry hr;
  Affine index_map = Affine::Identity();
  for (int d = 0; d < 3; ++d) {
    const double f = params.factors[d];
    if (!(f >= 1.0)) throw InvalidArgument("restoration factors must be >= 1");
    hr.dims[d] = params.hr_dims[d] > 0 ? params.hr_dims[d]
                                       : static_cast<std::size_t>(std::llround(static_cast<double>(y.dims[d]) * f));
    hr.spacing[d] = y.spacing[d] / f;
    index_map(d, d) = f;
    index_map(d, 3) = 0.5 * f - 0.5;
  }
  hr.affine = y.affine * index_map.inverse();
  hr.validate();
  return hr;
}

OperatorPtr restoration_operator(const Geometry& y, const RestorationParams& params) {
  const Geometry hr = restoration_grid(y, params);
  const Affine world = params.alignment.value_or(Affine::Identity());
  require_invertible(world, "alignment");
  auto t = op_align(GridMap{hr.affine, world * hr.affine, hr.dims});
  const SliceProfile profile = params.profile.value_or(default_slice_profile(params.factors, y.spacing));
  auto s = op_blur(profile, hr.spacing, hr.dims);
  auto r = op_resample(hr.dims, GridMap{hr.affine, y.affine, y.dims});
  return op_project(std::move(t), std::move(s), std::move(r));
}

RestoreResult restore(const Volume& y, const RestorationParams& params, const ScoreProvider& score,
                      const SolverConfig& cfg_in) {
  SolverConfig cfg = cfg_in;
  if (!cfg.tau_y) cfg.tau_y = kDefaultRestorationTauY;
  RestorationTask task;
  task.y.assign(y.data().begin(), y.data().end());
  task.a = restoration_operator(y.geometry(), params);
  task.estimate_bias = cfg.bias.enabled;
  if (cfg.bias.enabled) {
    task.basis = std::make_shared<const BiasBasis>(cfg.bias.order, y.geometry());
    task.bias.c.assign(task.basis->num_terms(), 0.0);
    task.bias.lambda = cfg.bias.lambda;
  }
  Rng rng(cfg.seed);
  auto report = daps_solve(task, score, cfg, rng);
  const Geometry hr = restoration_grid(y.geometry(), params);
  Volume x(hr, report.estimate);
  auto c = report.bias_coefficients;
  return {std::move(x), std::move(c), std::move(report)};
}

SolveResult inpaint(const Volume& y, const Mask& mask, const ScoreProvider& score, const SolverConfig& cfg_in) {
  SolverConfig cfg = cfg_in;
  if (!cfg.tau_y) cfg.tau_y = kDefaultInpaintingTauY;
  if (mask.dims() != y.dims()) throw InvalidArgument("mask dims do not match the observation");
  InpaintingTask task;
  task.select = op_select(mask);
  task.y_hat = task.select->apply(y.data());
  Rng rng(cfg.seed);
  auto report = daps_solve(task, score, cfg, rng);
  Volume x = y.with_data(report.estimate);
  return {std::move(x), std::move(report)};
}

SolveResult refine(const Volume& x_hat, double tau_s, const ScoreProvider& score, const SolverConfig& cfg) {
  if (!(tau_s > 0.0)) throw InvalidArgument("tau_s must be positive");
  RefinementTask task;
  task.x_hat.assign(x_hat.data().begin(), x_hat.data().end());
  task.tau_s = tau_s;
  Rng rng(cfg.seed);
  auto report = daps_solve(task, score, cfg, rng);
  Volume x = x_hat.with_data(report.estimate);
  return {std::move(x), std::move(report)};
}

}  // namespace diffprior

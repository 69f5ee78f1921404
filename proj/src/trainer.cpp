#include "diffprior/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

struct NoiseDraw {
  double sigma;
  std::vector<double> noisy;
};

NoiseDraw draw_noise(std::span<const double> x0, Rng& rng, const TrainConfig& cfg) {
  NoiseDraw d;
  d.sigma = std::exp(cfg.p_mean + cfg.p_std * rng.normal());
  d.noisy.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) d.noisy[i] = x0[i] + d.sigma * rng.normal();
  return d;
}

double loss_weight(double sigma, double sigma_data) {
  return (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma * sigma_data * sigma_data);
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw InvalidArgument("learning rate must be positive");
  if (batch == 0) throw InvalidArgument("batch size must be positive");
  if (!(ema_decay > 0.0 && ema_decay < 1.0))
    throw InvalidArgument("ema decay must lie in (0, 1)");
  if (!(sigma_data > 0.0)) throw InvalidArgument("sigma_data must be positive");
  if (!(p_std >= 0.0)) throw InvalidArgument("p_std must be non-negative");
  if (!(grad_clip > 0.0)) throw InvalidArgument("gradient clip must be positive");
  if (ema_every == 0) throw InvalidArgument("ema update interval must be positive");
}

TrainState::TrainState(Denoiser d) : model(std::move(d)) {
  const auto p = model.network().params();
  m.assign(p.size(), 0.0);
  v.assign(p.size(), 0.0);
  ema.assign(p.begin(), p.end());
}

Denoiser TrainState::ema_model() const {
  return Denoiser(Mlp(model.network().widths(), ema), model.sigma_data());
}

double edm_loss(const DenoiseFn& d, Batch batch, Rng& rng, const TrainConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("edm loss needs a non-empty batch");
  double total = 0.0;
  for (const auto& x0 : batch) {
    const auto draw = draw_noise(x0, rng, cfg);
    const auto out = d(draw.noisy, draw.sigma);
    double se = 0.0;
    for (std::size_t i = 0; i < x0.size(); ++i) se += (out[i] - x0[i]) * (out[i] - x0[i]);
    total += loss_weight(draw.sigma, cfg.sigma_data) * se / static_cast<double>(x0.size());
  }
  const double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw NumericRangeError("edm loss is not finite");
  return loss;
}

LossAndGrad edm_loss_and_grad(const Denoiser& d, Batch batch, Rng& rng, const TrainConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("edm loss needs a non-empty batch");
  const Mlp& net = d.network();
  const std::size_t dim = d.dim();
  LossAndGrad out;
  out.grad.assign(net.num_params(), 0.0);
  Mlp::Cache cache;
  std::vector<double> in(dim + 1), grad_f(dim);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto& x0 : batch) {
    if (x0.size() != dim) throw InvalidArgument("training sample length does not match the denoiser");
    const auto draw = draw_noise(x0, rng, cfg);
    const auto p = Preconditioning::at(draw.sigma, d.sigma_data());
    for (std::size_t i = 0; i < dim; ++i) in[i] = p.c_in * draw.noisy[i];
    in[dim] = p.c_noise;
    const auto f = net.forward(in, &cache);
    const double w = loss_weight(draw.sigma, cfg.sigma_data) / static_cast<double>(dim);
    double se = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double r = p.c_skip * draw.noisy[i] + p.c_out * f[i] - x0[i];
      se += r * r;
      grad_f[i] = 2.0 * w * r * p.c_out * inv_batch;
    }
    out.loss += w * se * inv_batch;
    net.backward(cache, grad_f, out.grad);
  }
  if (!std::isfinite(out.loss)) throw NumericRangeError("edm loss is not finite");
  return out;
}

StepInfo adam_step(TrainState& state, std::span<const double> grads, const TrainConfig& cfg) {
  auto params = state.model.network().params();
  if (grads.size() != params.size()) throw InvalidArgument("adam: gradient length does not match parameters");
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  StepInfo info;
  double norm2 = 0.0;
  for (double g : grads) norm2 += g * g;
  info.grad_norm = std::sqrt(norm2);
  const double clip = info.grad_norm > cfg.grad_clip ? cfg.grad_clip / info.grad_norm : 1.0;

  state.step += 1;
  const double t = static_cast<double>(state.step);
  info.lr = cfg.warmup_steps > 0 ? cfg.lr * std::min(1.0, t / static_cast<double>(cfg.warmup_steps)) : cfg.lr;
  const double bc1 = 1.0 - std::pow(beta1, t), bc2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] * clip;
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
    const double mhat = state.m[i] / bc1, vhat = state.v[i] / bc2;
    params[i] -= info.lr * mhat / (std::sqrt(vhat) + eps);
  }
  return info;
}

void ema_update(TrainState& state, const TrainConfig& cfg) {
  const double halflife = cfg.ema_rampup * static_cast<double>(state.step);
  const double ramp = halflife > 0.0 ? std::pow(0.5, static_cast<double>(cfg.ema_every) / halflife) : 0.0;
  const double beta = std::min(cfg.ema_decay, ramp);
  const auto params = state.model.network().params();
  for (std::size_t i = 0; i < params.size(); ++i) state.ema[i] = beta * state.ema[i] + (1.0 - beta) * params[i];
}

TrainResult train(const std::vector<std::vector<double>>& dataset, const TrainConfig& cfg, Denoiser initial) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("training dataset is empty");
  TrainState state(std::move(initial));
  Rng rng(cfg.seed);
  std::vector<TrainRecord> curve;
  curve.reserve(cfg.steps);
  std::vector<std::vector<double>> batch(cfg.batch);
  for (std::size_t s = 1; s <= cfg.steps; ++s) {
    for (auto& b : batch) b = dataset[rng.uniform_index(dataset.size())];
    LossAndGrad lg;
    try {
      lg = edm_loss_and_grad(state.model, batch, rng, cfg);
    } catch (const NumericRangeError&) {
      throw TrainingDiverged("training loss became non-finite", s);
    }
    if (lg.loss > cfg.divergence_threshold) throw TrainingDiverged("training loss exceeded the divergence threshold", s);
    const auto info = adam_step(state, lg.grad, cfg);
    if (s % cfg.ema_every == 0) ema_update(state, cfg);
    curve.push_back({s, lg.loss, info.grad_norm, info.lr});
  }
  return {state.ema_model(), std::move(curve)};
}

void write_curve_csv(const std::string& path, const std::vector<TrainRecord>& curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open training curve for writing: " + path);
  out.precision(10);
  out << "step,loss,grad_norm,lr\n";
  for (const auto& r : curve) out << r.step << ',' << r.loss << ',' << r.grad_norm << ',' << r.lr << '\n';
}

}  // namespace diffprior

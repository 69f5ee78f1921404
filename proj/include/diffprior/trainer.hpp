#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "diffprior/denoiser.hpp"
#include "diffprior/rng.hpp"

namespace diffprior {

/// Denoising score matching hyperparameters. Defaults follow the EDM
/// recipe; `steps` and `batch` are desk-scale.
struct TrainConfig {
  double p_mean = -1.2;
  double p_std = 1.2;
  double sigma_data = 0.5;
  double lr = 1e-4;
  std::size_t batch = 16;
  std::size_t steps = 5000;
  std::size_t warmup_steps = 500;
  double grad_clip = 1.0;
  double ema_decay = 0.9999;
  double ema_rampup = 0.05;
  std::size_t ema_every = 10;
  double divergence_threshold = 1e6;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Optimizer state for one model.
struct TrainState {
  Denoiser model;
  std::vector<double> m;    // first moments
  std::vector<double> v;    // second moments
  std::vector<double> ema;  // shadow parameters
  std::size_t step = 0;

  explicit TrainState(Denoiser d);
  Denoiser ema_model() const;
};

using Batch = std::span<const std::vector<double>>;

/// EDM-weighted denoising loss for an arbitrary denoiser. For every sample:
/// sigma = exp(p_mean + p_std z), x_t = x0 + sigma eps, and the loss is
/// lambda(sigma) * mean_i (D(x_t, sigma)_i - x0_i)^2 with
/// lambda = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2, averaged over the batch.
double edm_loss(const DenoiseFn& d, Batch batch, Rng& rng, const TrainConfig& cfg);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Same loss (and the same random draws) as edm_loss, plus exact parameter gradients.
LossAndGrad edm_loss_and_grad(const Denoiser& d, Batch batch, Rng& rng, const TrainConfig& cfg);

struct StepInfo {
  double grad_norm = 0.0;  // before clipping
  double lr = 0.0;
};

/// One Adam update with global-norm clipping and linear warmup.
StepInfo adam_step(TrainState& state, std::span<const double> grads, const TrainConfig& cfg);

/// EMA update; the decay is min(ema_decay, 0.5^(ema_every / (ema_rampup * step))).
void ema_update(TrainState& state, const TrainConfig& cfg);

struct TrainRecord {
  std::size_t step;
  double loss;
  double grad_norm;
  double lr;
};

struct TrainResult {
  Denoiser model;  // EMA weights
  std::vector<TrainRecord> curve;
};

/// Trains `initial` on `dataset`. Throws TrainingDiverged if the loss is
/// non-finite or exceeds cfg.divergence_threshold.
TrainResult train(const std::vector<std::vector<double>>& dataset, const TrainConfig& cfg, Denoiser initial);

/// CSV with header step,loss,grad_norm,lr.
void write_curve_csv(const std::string& path, const std::vector<TrainRecord>& curve);

}  // namespace diffprior

#include "doctest.h"

#include <cmath>
#include <fstream>

#include "diffprior/error.hpp"
#include "diffprior/trainer.hpp"
#include "helpers.hpp"

using namespace diffprior;

namespace {

std::vector<std::vector<double>> toy_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> data;
  for (std::size_t i = 0; i < n; ++i) {
    const double a = rng.uniform(-0.8, 0.8);
    std::vector<double> x(dim);
    for (std::size_t j = 0; j < dim; ++j) x[j] = a * std::cos(0.7 * static_cast<double>(j)) + 0.05 * rng.normal();
    data.push_back(std::move(x));
  }
  return data;
}

}  // namespace

TEST_CASE("loss gradients match finite differences on a small net") {
  Rng init(1);
  Denoiser d(3, {5, 5}, 0.5, init);
  REQUIRE(d.network().num_params() <= 100);
  const auto data = toy_dataset(4, 3, 2);
  TrainConfig cfg;
  const auto lg = [&] {
    Rng rng(77);
    return edm_loss_and_grad(d, data, rng, cfg);
  }();
  auto loss_at = [&](const Denoiser& m) {
    Rng rng(77);
    return edm_loss([&](std::span<const double> x, double s) { return m.denoise(x, s); }, data, rng, cfg);
  };
  CHECK(loss_at(d) == doctest::Approx(lg.loss).epsilon(1e-12));
  double worst = 0.0;
  for (std::size_t i = 0; i < d.network().num_params(); ++i) {
    Denoiser plus = d, minus = d;
    const double h = 1e-6;
    plus.network().params()[i] += h;
    minus.network().params()[i] -= h;
    const double fd = (loss_at(plus) - loss_at(minus)) / (2 * h);
    worst = std::max(worst, std::abs(lg.grad[i] - fd) / std::max(std::abs(fd), 1e-4));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("adam warmup and clipping") {
  Rng init(3);
  TrainState st(Denoiser(2, {3}, 0.5, init));
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.warmup_steps = 10;
  cfg.grad_clip = 1.0;
  std::vector<double> g(st.model.network().num_params(), 5.0);
  const auto before = std::vector<double>(st.model.network().params().begin(), st.model.network().params().end());
  const auto info = adam_step(st, g, cfg);
  CHECK(info.lr == doctest::Approx(1e-3));
  CHECK(info.grad_norm == doctest::Approx(5.0 * std::sqrt(static_cast<double>(g.size()))));
  // First bias-corrected Adam step moves every weight by lr against the gradient sign.
  for (std::size_t i = 0; i < g.size(); ++i)
    CHECK(st.model.network().params()[i] == doctest::Approx(before[i] - 1e-3).epsilon(1e-6));
  for (int i = 0; i < 20; ++i) adam_step(st, g, cfg);
  CHECK(adam_step(st, g, cfg).lr == doctest::Approx(1e-2));
  CHECK_THROWS_AS(adam_step(st, std::vector<double>(3), cfg), InvalidArgument);
}

TEST_CASE("EMA ramp and decay") {
  Rng init(4);
  TrainState st(Denoiser(2, {3}, 0.5, init));
  TrainConfig cfg;
  for (auto& p : st.model.network().params()) p = 1.0;
  std::fill(st.ema.begin(), st.ema.end(), 0.0);
  st.step = 10;
  cfg.ema_decay = 0.9999;
  cfg.ema_every = 10;
  cfg.ema_rampup = 0.05;
  // halflife = 0.5 steps, so beta = 0.5^20 and the EMA almost copies the weights.
  ema_update(st, cfg);
  CHECK(st.ema[0] == doctest::Approx(1.0 - std::pow(0.5, 20)));
  std::fill(st.ema.begin(), st.ema.end(), 0.0);
  st.step = 1000000;
  cfg.ema_decay = 0.9;
  ema_update(st, cfg);
  CHECK(st.ema[0] == doctest::Approx(0.1));
  std::fill(st.ema.begin(), st.ema.end(), 0.0);
  cfg.ema_decay = 1e-12;
  ema_update(st, cfg);
  CHECK(st.ema[0] == doctest::Approx(1.0));
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.ema_decay = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg = {};
  cfg.batch = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}

TEST_CASE("short training lowers the loss and is reproducible") {
  const auto data = toy_dataset(64, 6, 5);
  TrainConfig cfg;
  cfg.steps = 600;
  cfg.lr = 3e-3;
  cfg.warmup_steps = 50;
  cfg.batch = 16;
  cfg.seed = 9;
  Rng init(8);
  const Denoiser d0(6, {32}, 0.5, init);
  const auto a = train(data, cfg, d0);
  const auto b = train(data, cfg, d0);
  REQUIRE(a.curve.size() == 600);
  CHECK(a.curve.back().loss == b.curve.back().loss);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 50; ++i) {
    first += a.curve[i].loss;
    last += a.curve[a.curve.size() - 1 - i].loss;
  }
  CHECK(last < 0.75 * first);
}

TEST_CASE("divergence is reported with the step") {
  const auto data = toy_dataset(8, 4, 6);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.divergence_threshold = 1e-6;
  Rng init(1);
  try {
    train(data, cfg, Denoiser(4, {8}, 0.5, init));
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() == 1);
  }
}

TEST_CASE("curve CSV") {
  const auto dir = testutil::temp_dir("curve");
  const std::string path = (dir / "curve.csv").string();
  write_curve_csv(path, {{1, 0.5, 2.0, 1e-4}, {2, 0.25, 1.0, 2e-4}});
  std::ifstream in(path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "step,loss,grad_norm,lr");
  CHECK(row == "1,0.5,2,0.0001");
}

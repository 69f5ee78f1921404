#include "doctest.h"

#include <cmath>
#include <complex>
#include <numbers>
#include <set>

#include "diffprior/error.hpp"
#include "diffprior/metrics.hpp"
#include "diffprior/synth.hpp"
#include "helpers.hpp"

using namespace diffprior;

namespace {

using Spectrum = std::vector<std::complex<double>>;

// Separable naive DFT, one axis at a time.
Spectrum naive_dft(const Volume& v) {
  const Dims d = v.dims();
  Spectrum a(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) a[i] = v[i];
  for (int axis = 0; axis < 3; ++axis) {
    Spectrum b(a.size());
    const std::size_t n = d[axis];
    for (std::size_t k = 0; k < d[2]; ++k)
      for (std::size_t j = 0; j < d[1]; ++j)
        for (std::size_t i = 0; i < d[0]; ++i) {
          std::array<std::size_t, 3> idx{i, j, k};
          std::complex<double> acc = 0.0;
          const std::size_t f = idx[axis];
          for (std::size_t t = 0; t < n; ++t) {
            idx[axis] = t;
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(f * t) / static_cast<double>(n);
            acc += a[linear_index(d, idx[0], idx[1], idx[2])] * std::polar(1.0, ang);
          }
          b[linear_index(d, i, j, k)] = acc;
        }
    a = std::move(b);
  }
  return a;
}

double gain(std::size_t k, std::size_t n, double sigma) {
  double f = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
  f /= static_cast<double>(n);
  return std::exp(-2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma * f * f);
}

double energy(std::span<const double> x) { return testutil::dot(x, x); }

}  // namespace

TEST_CASE("fourier low-pass basics") {
  Rng rng(1);
  const Volume v = testutil::random_volume({6, 5, 4}, rng);
  const Volume same = fourier_lowpass(v, {0, 0, 0});
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(same[i] == v[i]);
  const Volume c = fourier_lowpass(make_volume({6, 5, 4}, {1, 1, 1}, 0.75), {1.0, 2.0, 0.5});
  for (double x : c.data()) CHECK(x == doctest::Approx(0.75).epsilon(1e-13));
  CHECK_THROWS_AS(fourier_lowpass(v, {-1, 0, 0}), InvalidArgument);
}

TEST_CASE("white noise: variance drops and Parseval matches the filtered spectrum") {
  Rng rng(2);
  const Dims d{8, 6, 5};
  const Volume v = testutil::random_volume(d, rng);
  const Vec3 sigma{1.0, 0.7, 1.5};
  const Volume out = fourier_lowpass(v, sigma);
  CHECK(energy(out.data()) < energy(v.data()));
  const auto spec = naive_dft(v);
  double filtered = 0.0;
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) {
        const double h = gain(i, d[0], sigma[0]) * gain(j, d[1], sigma[1]) * gain(k, d[2], sigma[2]);
        filtered += std::norm(h * spec[linear_index(d, i, j, k)]);
      }
  filtered /= static_cast<double>(v.size());
  CHECK(std::abs(energy(out.data()) - filtered) / filtered < 1e-10);
}

TEST_CASE("fourier low-pass is linear and self-adjoint") {
  Rng rng(3);
  const Dims d{7, 6, 5};
  const Vec3 sigma{0.8, 1.2, 0.4};
  const Volume a = testutil::random_volume(d, rng), b = testutil::random_volume(d, rng);
  const Volume fa = fourier_lowpass(a, sigma), fb = fourier_lowpass(b, sigma);
  const double lhs = testutil::dot(fa.data(), b.data()), rhs = testutil::dot(a.data(), fb.data());
  CHECK(std::abs(lhs - rhs) / std::abs(lhs) < 1e-8);
  std::vector<double> sum(a.size());
  for (std::size_t i = 0; i < sum.size(); ++i) sum[i] = 2.0 * a[i] - b[i];
  const Volume fs = fourier_lowpass(a.with_data(sum), sigma);
  for (std::size_t i = 0; i < sum.size(); ++i) CHECK(fs[i] == doctest::Approx(2.0 * fa[i] - fb[i]).epsilon(1e-12));
}

TEST_CASE("degrade with an identity configuration is exact") {
  const Volume v = make_phantom({PhantomKind::ellipsoid_stack, {12, 12, 12}, {1, 1, 1}, 4});
  DegradeConfig cfg;
  const auto out = degrade(v, cfg);
  REQUIRE(out.low.dims() == v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) CHECK(out.low[i] == v[i]);
  for (double c : out.bias_c) CHECK(c == 0.0);
  CHECK(out.bias_c.size() == 35);
}

TEST_CASE("degrade follows the floor rule and records the bias") {
  const Volume v = make_phantom({PhantomKind::ellipsoid_stack, {32, 32, 32}, {1, 1, 1}, 5});
  DegradeConfig cfg;
  cfg.factors = {1.6, 1.6, 5.0};
  cfg.bias_amplitude = 0.3;
  cfg.noise_sigma = 0.02;
  cfg.seed = 6;
  const auto out = degrade(v, cfg);
  CHECK(out.low.dims() == Dims{20, 20, 6});
  CHECK(out.low.spacing()[2] == doctest::Approx(5.0));
  CHECK(out.bias_c[0] == 0.0);
  bool nonzero = false;
  for (double c : out.bias_c) nonzero = nonzero || c != 0.0;
  CHECK(nonzero);
  const auto again = degrade(v, cfg);
  CHECK(std::equal(again.low.data().begin(), again.low.data().end(), out.low.data().begin()));
  cfg.factors = {1.0, 1.0, 40.0};
  CHECK_THROWS_AS(degrade(v, cfg), InvalidArgument);
  cfg.factors = {0.5, 1.0, 1.0};
  CHECK_THROWS_AS(degrade(v, cfg), InvalidArgument);
}

TEST_CASE("degradation worsens as factors grow") {
  const Volume v = make_phantom({PhantomKind::ellipsoid_stack, {32, 32, 32}, {1, 1, 1}, 7});
  double prev = std::numeric_limits<double>::infinity();
  bool first = true;
  for (double f : {1.0, 2.0, 4.0}) {
    DegradeConfig cfg;
    cfg.factors = {f, f, f};
    const auto out = degrade(v, cfg);
    const Geometry lg = downsampled_geometry(v.geometry(), cfg.factors);
    const Volume plain = resample_trilinear(v, GridMap{v.affine(), lg.affine, lg.dims});
    const double p = psnr(out.low, plain);
    if (first) CHECK(std::isinf(p));
    else CHECK(p < prev);
    prev = p;
    first = false;
  }
}

TEST_CASE("phantoms") {
  for (auto kind : {PhantomKind::ellipsoid_stack, PhantomKind::smooth_random_field, PhantomKind::checker_smoothed}) {
    const Phantom p{kind, {16, 12, 10}, {1, 1, 1}, 11};
    const Volume a = make_phantom(p), b = make_phantom(p);
    CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
    double lo = 1e9, hi = -1e9;
    for (double x : a.data()) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    CHECK(lo == -1.0);
    CHECK(hi == 1.0);
    CHECK(phantom_kind_from_string(to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(make_phantom({PhantomKind::ellipsoid_stack, {3, 8, 8}, {1, 1, 1}, 0}), InvalidArgument);
  CHECK_NOTHROW(make_phantom({PhantomKind::ellipsoid_stack, {16, 16, 1}, {1, 1, 1}, 0}));
  CHECK_THROWS_AS(phantom_kind_from_string("cube"), InvalidArgument);
}

TEST_CASE("ellipsoid stacks have several plateaus") {
  const Volume v = make_phantom({PhantomKind::ellipsoid_stack, {24, 24, 24}, {1, 1, 1}, 12});
  std::set<double> levels(v.data().begin(), v.data().end());
  CHECK(levels.size() >= 2);
  CHECK(levels.count(-1.0) == 1);
  CHECK(levels.count(1.0) == 1);
}

TEST_CASE("smooth random field spectrum decays with frequency") {
  const Dims d{16, 16, 16};
  const Volume v = make_phantom({PhantomKind::smooth_random_field, d, {1, 1, 1}, 13});
  const auto spec = naive_dft(v);
  std::vector<double> power(9, 0.0);
  std::vector<int> count(9, 0);
  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t j = 0; j < 16; ++j)
      for (std::size_t i = 0; i < 16; ++i) {
        auto s = [](std::size_t q) { return q <= 8 ? double(q) : double(q) - 16.0; };
        const double r = std::sqrt(s(i) * s(i) + s(j) * s(j) + s(k) * s(k));
        const auto bin = static_cast<std::size_t>(std::lround(r));
        if (bin == 0 || bin >= power.size()) continue;
        power[bin] += std::norm(spec[linear_index(d, i, j, k)]);
        ++count[bin];
      }
  for (std::size_t b = 1; b < power.size(); ++b) power[b] /= count[b];
  for (std::size_t b = 2; b < power.size(); ++b) CHECK(power[b] <= 1.1 * power[b - 1]);
  CHECK(power[8] < 1e-3 * power[1]);
}

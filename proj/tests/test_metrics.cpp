#include "doctest.h"

#include <cmath>

#include "diffprior/error.hpp"
#include "diffprior/metrics.hpp"
#include "diffprior/synth.hpp"
#include "helpers.hpp"
#include "metric_oracles.hpp"

using namespace diffprior;
using namespace oracle;

namespace {

Volume with_offset(const Volume& v, double off) {
  std::vector<double> x(v.data().begin(), v.data().end());
  for (auto& a : x) a += off;
  return v.with_data(x);
}

}  // namespace

TEST_CASE("MAE") {
  Rng rng(1);
  const Volume a = testutil::random_volume({5, 4, 3}, rng), b = testutil::random_volume({5, 4, 3}, rng);
  CHECK(mae(a, a) == 0.0);
  CHECK(mae(with_offset(a, 0.1), a) == doctest::Approx(0.1).epsilon(1e-12));
  double acc = 0.0;
  for (std::size_t i = a.size(); i-- > 0;) acc += std::fabs(b[i] - a[i]);
  CHECK(std::abs(mae(a, b) - acc / a.size()) < 1e-12);
  CHECK(mae(a, b) == mae(b, a));
  CHECK_THROWS_AS(mae(a, testutil::random_volume({5, 4, 4}, rng)), InvalidArgument);
}

TEST_CASE("PSNR") {
  Rng rng(2);
  const Volume a = testutil::random_volume({6, 6, 6}, rng);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(psnr(with_offset(a, 2.0), a, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(psnr(with_offset(a, 0.1), a, 2.0) == doctest::Approx(26.0206).epsilon(1e-5));
  CHECK_THROWS_AS(psnr(a, a, 0.0), InvalidArgument);
}

TEST_CASE("PSNR falls as noise grows") {
  const Volume ref = make_phantom({PhantomKind::smooth_random_field, {12, 12, 12}, {1, 1, 1}, 3});
  double prev = std::numeric_limits<double>::infinity();
  for (double s : {0.01, 0.03, 0.1, 0.3}) {
    Rng rng(4);
    std::vector<double> x(ref.data().begin(), ref.data().end());
    for (auto& v : x) v += s * rng.normal();
    const double p = psnr(ref.with_data(x), ref);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("SSIM identities and sign") {
  Rng rng(5);
  const Volume a = testutil::random_volume({9, 9, 9}, rng);
  CHECK(ssim_2p5d(a, a) == 1.0);
  // Alternating signs keep every local window mean near zero, so negation
  // flips the structure term without a compensating luminance flip.
  std::vector<double> alt(a.size()), neg(a.size());
  for (std::size_t k = 0; k < 9; ++k)
    for (std::size_t j = 0; j < 9; ++j)
      for (std::size_t i = 0; i < 9; ++i) {
        const std::size_t n = linear_index({9, 9, 9}, i, j, k);
        alt[n] = ((i + j + k) % 2 ? 1.0 : -1.0) * (0.5 + 0.1 * std::abs(a[n]));
        neg[n] = -alt[n];
      }
  CHECK(ssim_2p5d(a.with_data(neg), a.with_data(alt)) < 0.0);
  CHECK_THROWS_AS(ssim_2p5d(testutil::random_volume({5, 5, 5}, rng), testutil::random_volume({5, 5, 5}, rng)),
                  InvalidArgument);
  CHECK_THROWS_AS(ssim_2p5d(a, a, 2.0, 4), InvalidArgument);
}

TEST_CASE("SSIM matches the slice-wise oracle") {
  Rng rng(6);
  const Volume r = testutil::random_volume({8, 8, 8}, rng);
  std::vector<double> x(r.data().begin(), r.data().end());
  for (auto& v : x) v = 0.8 * v + 0.3 * rng.normal();
  const Volume a = r.with_data(x);
  const double oracle = mean_over_orientations(a, r, [](const auto& s, const auto& t) { return ssim_oracle(s, t, 2.0, 7); });
  CHECK(std::abs(ssim_2p5d(a, r, 2.0, 7) - oracle) < 1e-10);
  const double o5 = mean_over_orientations(a, r, [](const auto& s, const auto& t) { return ssim_oracle(s, t, 2.0, 5); });
  CHECK(std::abs(ssim_2p5d(a, r, 2.0, 5) - o5) < 1e-10);
}

TEST_CASE("GMSD identities and oracle") {
  Rng rng(7);
  const Volume r = testutil::random_volume({7, 6, 5}, rng);
  CHECK(gmsd_2p5d(r, r) == 0.0);
  std::vector<double> twice(r.data().begin(), r.data().end());
  for (auto& v : twice) v *= 2.0;
  CHECK(gmsd_2p5d(r.with_data(twice), r) > 0.0);
  std::vector<double> x(r.data().begin(), r.data().end());
  for (auto& v : x) v += 0.2 * rng.normal();
  const Volume a = r.with_data(x);
  const double oracle = mean_over_orientations(a, r, [](const auto& s, const auto& t) { return gmsd_oracle(s, t, 2.0); });
  CHECK(std::abs(gmsd_2p5d(a, r) - oracle) < 1e-10);
}

TEST_CASE("constant reference slices are skipped") {
  Rng rng(8);
  std::vector<double> x = rng.normal_vector(8 * 8 * 8);
  for (std::size_t j = 0; j < 8; ++j)
    for (std::size_t i = 0; i < 8; ++i) x[linear_index({8, 8, 8}, i, j, 0)] = 0.5;
  const Volume r(Geometry{{8, 8, 8}, {1, 1, 1}, Affine::Identity()}, x);
  const auto s = ssim_orientations(r, r);
  CHECK(s.slices[2] == 7);
  CHECK(s.slices[0] == 8);
}

TEST_CASE("thin axes drop orientations that do not fit the window") {
  Rng rng(9);
  const Volume a = testutil::random_volume({20, 20, 6}, rng);
  const auto s = ssim_orientations(a, a);
  CHECK(s.slices[0] == 0);
  CHECK(s.slices[1] == 0);
  CHECK(s.slices[2] == 6);
  const auto report = evaluate(a, a);
  CHECK(report.ssim == 1.0);
  CHECK(report.gmsd == 0.0);
  CHECK(report.mae == 0.0);
  CHECK(std::isinf(report.psnr));
  CHECK(report.gmsd_by_axis.slices[0] == 20);
}

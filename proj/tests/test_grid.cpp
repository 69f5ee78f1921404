#include "doctest.h"

#include <cmath>

#include "diffprior/error.hpp"
#include "diffprior/grid.hpp"
#include "helpers.hpp"

using namespace diffprior;

TEST_CASE("linear index runs x fastest") {
  const Dims d{3, 4, 5};
  CHECK(linear_index(d, 0, 0, 0) == 0);
  CHECK(linear_index(d, 1, 0, 0) == 1);
  CHECK(linear_index(d, 0, 1, 0) == 3);
  CHECK(linear_index(d, 0, 0, 1) == 12);
  CHECK(linear_index(d, 2, 3, 4) == voxel_count(d) - 1);
}

TEST_CASE("volume validates geometry, length and finiteness") {
  Geometry g{{2, 2, 2}, {1.0, 1.0, 1.0}, Affine::Identity()};
  CHECK_NOTHROW(Volume(g, std::vector<double>(8, 0.0)));
  CHECK_THROWS_AS(Volume(g, std::vector<double>(7, 0.0)), InvalidArgument);
  std::vector<double> bad(8, 0.0);
  bad[3] = std::nan("");
  CHECK_THROWS_AS(Volume(g, bad), NumericRangeError);
  Geometry zero = g;
  zero.dims = {0, 2, 2};
  CHECK_THROWS_AS(zero.validate(), InvalidArgument);
  Geometry singular = g;
  singular.affine(1, 1) = 0.0;
  CHECK_THROWS_AS(singular.validate(), InvalidArgument);
}

TEST_CASE("floor rule for downsampled dims") {
  CHECK(downsampled_dims({32, 32, 32}, {1.6, 1.6, 5.0}) == Dims{20, 20, 6});
  CHECK(downsampled_dims({10, 10, 10}, {1.0, 2.0, 3.0}) == Dims{10, 5, 3});
  CHECK_THROWS_AS(downsampled_dims({4, 4, 4}, {1.0, 1.0, 5.0}), InvalidArgument);
}

TEST_CASE("downsampled geometry centres low-res voxels at (i + 0.5) f - 0.5") {
  Geometry hr{{32, 32, 32}, {1.0, 1.0, 1.0}, spacing_affine({1.0, 1.0, 1.0})};
  hr.affine(0, 3) = 5.0;
  const Vec3 f{1.6, 1.6, 5.0};
  const Geometry lr = downsampled_geometry(hr, f);
  CHECK(lr.dims == Dims{20, 20, 6});
  const Affine m = hr.affine.inverse() * lr.affine;
  for (int i : {0, 3, 5}) {
    const Eigen::Vector4d p = m * Eigen::Vector4d(i, i, i, 1.0);
    for (int a = 0; a < 3; ++a) CHECK(p[a] == doctest::Approx((i + 0.5) * f[a] - 0.5).epsilon(1e-12));
  }
  CHECK(lr.spacing[2] == doctest::Approx(5.0));
}

TEST_CASE("grid map with equal affines is exactly the identity") {
  Affine a = spacing_affine({1.5, 2.0, 0.7});
  a(0, 3) = 3.3;
  a(1, 0) = 0.2;
  const GridMap map{a, a, {4, 4, 4}};
  CHECK(map.index_transform() == Affine::Identity());
}

TEST_CASE("trilinear resampling") {
  Rng rng(1);
  const Volume v = testutil::random_volume({5, 6, 7}, rng);

  SUBCASE("identity map copies exactly") {
    const Volume r = resample_trilinear(v, GridMap{v.affine(), v.affine(), v.dims()});
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(r[i] == v[i]);
  }

  SUBCASE("affine functions are reproduced at interior points") {
    // f = 1 + 2x - y + 0.5z is interpolated exactly by trilinear weights.
    const Dims d{6, 6, 6};
    std::vector<double> f(voxel_count(d));
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t j = 0; j < 6; ++j)
        for (std::size_t i = 0; i < 6; ++i) f[linear_index(d, i, j, k)] = 1.0 + 2.0 * i - 1.0 * j + 0.5 * k;
    const Volume src(Geometry{d, {1, 1, 1}, Affine::Identity()}, f);
    Affine target = Affine::Identity();
    target.block<3, 1>(0, 3) = Eigen::Vector3d(0.3, 0.45, 1.7);
    const Volume r = resample_trilinear(src, GridMap{Affine::Identity(), target, {4, 4, 4}});
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 4; ++i) {
          const double x = i + 0.3, y = j + 0.45, z = k + 1.7;
          CHECK(r.at(i, j, k) == doctest::Approx(1.0 + 2.0 * x - y + 0.5 * z).epsilon(1e-12));
        }
  }

  SUBCASE("clamp to edge outside the source") {
    Affine target = Affine::Identity();
    target(0, 3) = -10.0;
    const Volume r = resample_trilinear(v, GridMap{v.affine(), target, v.dims()});
    CHECK(r.at(0, 2, 3) == v.at(0, 2, 3));
  }

  SUBCASE("stencil weights sum to one") {
    Affine target = spacing_affine({0.7, 1.3, 0.9});
    const auto st = trilinear_stencils(v.dims(), GridMap{v.affine(), target, {6, 4, 6}});
    CHECK(st.size() == 6 * 4 * 6);
    for (const auto& s : st) {
      double sum = 0.0;
      for (double w : s.weight) sum += w;
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    }
  }
}

TEST_CASE("min-max normalization") {
  Rng rng(2);
  const Volume v = testutil::random_volume({4, 4, 4}, rng);
  const Volume n = normalize_minmax(v, -1.0, 1.0);
  double lo = 1e9, hi = -1e9;
  for (double x : n.data()) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  CHECK(lo == -1.0);
  CHECK(hi == 1.0);
  CHECK_THROWS_AS(normalize_minmax(make_volume({3, 3, 3}, {1, 1, 1}, 0.5), -1.0, 1.0), DegenerateInput);
}

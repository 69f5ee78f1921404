#include "diffprior/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <mutex>
#include <numbers>

#include <fftw3.h>

#include "diffprior/biasfield.hpp"
#include "diffprior/error.hpp"

namespace diffprior {

namespace {

// FFTW planning is not thread-safe.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

double signed_frequency(std::size_t k, std::size_t n) {
  const double kk = k <= n / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
  return kk / static_cast<double>(n);
}

std::vector<double> frequency_gain(std::size_t n, double sigma) {
  std::vector<double> h(n, 1.0);
  if (sigma <= 0.0) return h;
  const double c = 2.0 * std::numbers::pi * std::numbers::pi * sigma * sigma;
  for (std::size_t k = 0; k < n; ++k) {
    const double f = signed_frequency(k, n);
    h[k] = std::exp(-c * f * f);
  }
  return h;
}

}  // namespace

void DegradeConfig::validate() const {
  for (double f : factors)
    if (!(f >= 1.0) || !std::isfinite(f)) throw InvalidArgument("degrade factors must be >= 1");
  if (!(filter_sigma_scale >= 0.0)) throw InvalidArgument("filter_sigma_scale must be >= 0");
  if (bias_order < 0) throw InvalidArgument("bias_order must be >= 0");
  if (!(bias_amplitude >= 0.0)) throw InvalidArgument("bias_amplitude must be >= 0");
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise_sigma must be >= 0");
}

Vec3 DegradeConfig::filter_sigma() const {
  return {filter_sigma_scale * (factors[0] - 1.0), filter_sigma_scale * (factors[1] - 1.0),
          filter_sigma_scale * (factors[2] - 1.0)};
}

Volume fourier_lowpass(const Volume& vol, const Vec3& sigma_vox) {
  for (double s : sigma_vox)
    if (!(s >= 0.0)) throw InvalidArgument("fourier_lowpass: sigma must be >= 0");
  if (sigma_vox[0] == 0.0 && sigma_vox[1] == 0.0 && sigma_vox[2] == 0.0) return vol;

  const Dims& d = vol.dims();
  const std::size_t n = vol.size();
  auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (!buf) throw Error("fourier_lowpass: allocation failed");
  fftw_plan fwd, inv;
  {
    std::lock_guard lock(fftw_plan_mutex());
    // FFTW takes the slowest axis first.
    fwd = fftw_plan_dft_3d(static_cast<int>(d[2]), static_cast<int>(d[1]), static_cast<int>(d[0]), buf, buf,
                           FFTW_FORWARD, FFTW_ESTIMATE);
    inv = fftw_plan_dft_3d(static_cast<int>(d[2]), static_cast<int>(d[1]), static_cast<int>(d[0]), buf, buf,
                           FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  const auto data = vol.data();
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = data[i];
    buf[i][1] = 0.0;
  }
  fftw_execute(fwd);
  const auto hx = frequency_gain(d[0], sigma_vox[0]);
  const auto hy = frequency_gain(d[1], sigma_vox[1]);
  const auto hz = frequency_gain(d[2], sigma_vox[2]);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) {
        const double g = hx[i] * hy[j] * hz[k] * scale;
        auto& c = buf[linear_index(d, i, j, k)];
        c[0] *= g;
        c[1] *= g;
      }
  fftw_execute(inv);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i][0];
  {
    std::lock_guard lock(fftw_plan_mutex());
    fftw_destroy_plan(fwd);
    fftw_destroy_plan(inv);
  }
  fftw_free(buf);
  return vol.with_data(std::move(out));
}

Degraded degrade(const Volume& vol, const DegradeConfig& cfg, Rng& rng) {
  cfg.validate();
  const Geometry low_geom = downsampled_geometry(vol.geometry(), cfg.factors);
  const Volume filtered = fourier_lowpass(vol, cfg.filter_sigma());
  const Volume resampled =
      resample_trilinear(filtered, GridMap{vol.affine(), low_geom.affine, low_geom.dims});

  const BiasBasis basis(cfg.bias_order, resampled.geometry());
  std::vector<double> c(basis.num_terms(), 0.0);
  std::vector<double> values(resampled.data().begin(), resampled.data().end());
  if (cfg.bias_amplitude > 0.0) {
    const double scale = cfg.bias_amplitude / std::sqrt(static_cast<double>(basis.num_terms()));
    for (std::size_t k = 1; k < c.size(); ++k) c[k] = scale * rng.normal();
    const auto b = bias_values(c, basis);
    for (std::size_t i = 0; i < values.size(); ++i) values[i] *= b[i];
  }
  if (cfg.noise_sigma > 0.0)
    for (double& v : values) v += cfg.noise_sigma * rng.normal();
  return {resampled.with_data(std::move(values)), std::move(c)};
}

Degraded degrade(const Volume& vol, const DegradeConfig& cfg) {
  Rng rng(cfg.seed);
  return degrade(vol, cfg, rng);
}

std::string to_string(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::ellipsoid_stack: return "ellipsoid-stack";
    case PhantomKind::smooth_random_field: return "smooth-random-field";
    case PhantomKind::checker_smoothed: return "checker-smoothed";
  }
  return "unknown";
}

PhantomKind phantom_kind_from_string(const std::string& name) {
  if (name == "ellipsoid-stack") return PhantomKind::ellipsoid_stack;
  if (name == "smooth-random-field") return PhantomKind::smooth_random_field;
  if (name == "checker-smoothed") return PhantomKind::checker_smoothed;
  throw InvalidArgument("unknown phantom kind '" + name + "'");
}

namespace {

// Voxel centre in [-1, 1] per axis; singleton axes sit at 0.
double unit_coord(std::size_t i, std::size_t n) {
  return n == 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
}

struct Ellipsoid {
  Vec3 centre;
  Vec3 radii;
  double angle;  // rotation about the last axis
  double value;

  bool contains(const Vec3& p) const {
    const double dx = p[0] - centre[0], dy = p[1] - centre[1], dz = p[2] - centre[2];
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ca * dx + sa * dy, v = -sa * dx + ca * dy;
    const double r = (u * u) / (radii[0] * radii[0]) + (v * v) / (radii[1] * radii[1]) +
                     (dz * dz) / (radii[2] * radii[2]);
    return r <= 1.0;
  }
};

std::vector<double> ellipsoid_stack(const Dims& d, Rng& rng) {
  std::vector<Ellipsoid> shapes;
  const Vec3 head_r{rng.uniform(0.7, 0.9), rng.uniform(0.7, 0.9), rng.uniform(0.7, 0.9)};
  shapes.push_back({{0.0, 0.0, 0.0}, head_r, rng.uniform(-0.3, 0.3), kPhantomTissue});
  const std::size_t inner = 3 + rng.uniform_index(4);
  for (std::size_t e = 0; e < inner; ++e) {
    Ellipsoid s;
    for (int a = 0; a < 3; ++a) {
      s.radii[a] = rng.uniform(e + 1 == inner ? 0.25 : 0.15, 0.4) * head_r[a];
      s.centre[a] = rng.uniform(-0.45, 0.45) * head_r[a];
    }
    s.angle = rng.uniform(0.0, std::numbers::pi);
    // The brightest structure is painted last so it is never occluded.
    s.value = e + 1 == inner ? kPhantomLevels[2] : kPhantomLevels[rng.uniform_index(3)];
    shapes.push_back(s);
  }
  std::vector<double> v(voxel_count(d), kPhantomBackground);
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) {
        const Vec3 p{unit_coord(i, d[0]), unit_coord(j, d[1]), unit_coord(k, d[2])};
        double value = kPhantomBackground;
        if (!shapes[0].contains(p)) {
          v[linear_index(d, i, j, k)] = value;
          continue;
        }
        value = shapes[0].value;
        for (std::size_t s = 1; s < shapes.size(); ++s)
          if (shapes[s].contains(p)) value = shapes[s].value;
        v[linear_index(d, i, j, k)] = value;
      }
  return v;
}

std::vector<double> checkerboard(const Dims& d, Rng& rng) {
  const std::size_t block = 2 + rng.uniform_index(4);
  Dims offset{};
  for (int a = 0; a < 3; ++a) offset[a] = rng.uniform_index(block);
  std::vector<double> v(voxel_count(d));
  for (std::size_t k = 0; k < d[2]; ++k)
    for (std::size_t j = 0; j < d[1]; ++j)
      for (std::size_t i = 0; i < d[0]; ++i) {
        const std::size_t parity = (i + offset[0]) / block + (j + offset[1]) / block + (k + offset[2]) / block;
        v[linear_index(d, i, j, k)] = parity % 2 == 0 ? 1.0 : -1.0;
      }
  return v;
}

}  // namespace

Volume make_phantom(const Phantom& p) {
  for (std::size_t n : p.dims)
    if (n != 1 && n < 4) throw InvalidArgument("phantom axes need at least 4 voxels (or exactly 1)");
  Rng rng(p.seed);
  Geometry g{p.dims, p.spacing, spacing_affine(p.spacing)};
  g.validate();
  std::vector<double> values;
  Vec3 smooth{0.0, 0.0, 0.0};
  switch (p.kind) {
    case PhantomKind::ellipsoid_stack:
      values = ellipsoid_stack(p.dims, rng);
      break;
    case PhantomKind::smooth_random_field:
      values = rng.normal_vector(g.size());
      for (int a = 0; a < 3; ++a) smooth[a] = p.dims[a] == 1 ? 0.0 : static_cast<double>(p.dims[a]) / 10.0;
      break;
    case PhantomKind::checker_smoothed:
      values = checkerboard(p.dims, rng);
      for (int a = 0; a < 3; ++a) smooth[a] = p.dims[a] == 1 ? 0.0 : 0.8;
      break;
  }
  Volume v(g, std::move(values));
  v = fourier_lowpass(v, smooth);
  return normalize_minmax(v, -1.0, 1.0);
}

}  // namespace diffprior

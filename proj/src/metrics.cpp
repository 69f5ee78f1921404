#include "diffprior/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

void require_same(const Volume& a, const Volume& b) {
  if (a.dims() != b.dims()) throw InvalidArgument("metric inputs have different dims");
}

void require_range(double data_range) {
  if (!(data_range > 0.0)) throw InvalidArgument("data_range must be positive");
}

// Extracts slice `s` orthogonal to `axis`; the in-plane axes keep their order.
struct SlicePlane {
  int u, v;
};

SlicePlane plane_axes(int axis) {
  if (axis == 0) return {1, 2};
  if (axis == 1) return {0, 2};
  return {0, 1};
}

std::vector<double> extract(const Volume& vol, int axis, std::size_t s) {
  const Dims& d = vol.dims();
  const auto [u, v] = plane_axes(axis);
  std::vector<double> out(d[u] * d[v]);
  std::array<std::size_t, 3> idx{};
  idx[axis] = s;
  for (std::size_t b = 0; b < d[v]; ++b)
    for (std::size_t a = 0; a < d[u]; ++a) {
      idx[u] = a;
      idx[v] = b;
      out[a + d[u] * b] = vol.at(idx[0], idx[1], idx[2]);
    }
  return out;
}

bool is_constant(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [&](double v) { return v == x.front(); });
}

template <class SliceMetric>
OrientationScores per_orientation(const Volume& est, const Volume& ref, std::size_t min_extent,
                                  SliceMetric metric) {
  OrientationScores out;
  const Dims& d = ref.dims();
  bool any = false;
  for (int axis = 0; axis < 3; ++axis) {
    const auto [u, v] = plane_axes(axis);
    if (d[u] < min_extent || d[v] < min_extent) continue;
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < d[axis]; ++s) {
      const auto r = extract(ref, axis, s);
      if (is_constant(r)) continue;
      acc += metric(extract(est, axis, s), r, d[u], d[v]);
      ++count;
    }
    out.slices[axis] = count;
    out.value[axis] = count ? acc / static_cast<double>(count) : 0.0;
    any = any || count > 0;
  }
  if (!any) throw InvalidArgument("no slice is large enough and non-constant for the 2.5D metric");
  return out;
}

std::vector<double> gaussian_window(int window) {
  const int r = window / 2;
  std::vector<double> w(window);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) sum += w[i + r] = std::exp(-0.5 * i * i / (1.5 * 1.5));
  for (double& x : w) x /= sum;
  return w;
}

}  // namespace

double OrientationScores::mean() const {
  double acc = 0.0;
  int n = 0;
  for (int a = 0; a < 3; ++a)
    if (slices[a] > 0) {
      acc += value[a];
      ++n;
    }
  return n ? acc / n : 0.0;
}

double mae(const Volume& a, const Volume& b) {
  require_same(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return acc / static_cast<double>(a.size());
}

double psnr(const Volume& estimate, const Volume& reference, double data_range) {
  require_same(estimate, reference);
  require_range(data_range);
  double mse = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) mse += (estimate[i] - reference[i]) * (estimate[i] - reference[i]);
  mse /= static_cast<double>(estimate.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / mse);
}

double ssim_2d(std::span<const double> a, std::span<const double> ref, std::size_t width, std::size_t height,
               double data_range, int window) {
  require_range(data_range);
  if (window < 3 || window % 2 == 0) throw InvalidArgument("SSIM window must be odd and >= 3");
  const auto w = static_cast<std::size_t>(window);
  if (width < w || height < w) throw InvalidArgument("image smaller than the SSIM window");
  const auto g = gaussian_window(window);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  double acc = 0.0;
  for (std::size_t y0 = 0; y0 + w <= height; ++y0)
    for (std::size_t x0 = 0; x0 + w <= width; ++x0) {
      double ma = 0, mr = 0, saa = 0, srr = 0, sar = 0;
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t i = 0; i < w; ++i) {
          const double wt = g[i] * g[j];
          const std::size_t p = (x0 + i) + width * (y0 + j);
          ma += wt * a[p];
          mr += wt * ref[p];
          saa += wt * a[p] * a[p];
          srr += wt * ref[p] * ref[p];
          sar += wt * a[p] * ref[p];
        }
      const double va = saa - ma * ma, vr = srr - mr * mr, cov = sar - ma * mr;
      acc += ((2 * ma * mr + c1) * (2 * cov + c2)) / ((ma * ma + mr * mr + c1) * (va + vr + c2));
    }
  return acc / static_cast<double>((width - w + 1) * (height - w + 1));
}

double gmsd_2d(std::span<const double> a, std::span<const double> ref, std::size_t width, std::size_t height,
               double data_range) {
  require_range(data_range);
  if (width < 3 || height < 3) throw InvalidArgument("image smaller than the gradient stencil");
  auto magnitude = [&](std::span<const double> img, std::size_t x, std::size_t y) {
    auto at = [&](std::size_t i, std::size_t j) { return img[i + width * j] / data_range; };
    double gx = 0, gy = 0;
    for (int d = -1; d <= 1; ++d) {
      gx += at(x + 1, y + d) - at(x - 1, y + d);
      gy += at(x + d, y + 1) - at(x + d, y - 1);
    }
    gx /= 3.0;
    gy /= 3.0;
    return std::sqrt(gx * gx + gy * gy);
  };
  std::vector<double> map;
  map.reserve((width - 2) * (height - 2));
  for (std::size_t y = 1; y + 1 < height; ++y)
    for (std::size_t x = 1; x + 1 < width; ++x) {
      const double ga = magnitude(a, x, y), gr = magnitude(ref, x, y);
      map.push_back((2 * ga * gr + kGmsdConstant) / (ga * ga + gr * gr + kGmsdConstant));
    }
  double mean = 0.0;
  for (double m : map) mean += m;
  mean /= static_cast<double>(map.size());
  double var = 0.0;
  for (double m : map) var += (m - mean) * (m - mean);
  return std::sqrt(var / static_cast<double>(map.size()));
}

OrientationScores ssim_orientations(const Volume& estimate, const Volume& reference, double data_range,
                                    int window) {
  require_same(estimate, reference);
  require_range(data_range);
  if (window < 3 || window % 2 == 0) throw InvalidArgument("SSIM window must be odd and >= 3");
  return per_orientation(estimate, reference, static_cast<std::size_t>(window),
                         [&](const std::vector<double>& a, const std::vector<double>& r, std::size_t w,
                             std::size_t h) { return ssim_2d(a, r, w, h, data_range, window); });
}

OrientationScores gmsd_orientations(const Volume& estimate, const Volume& reference, double data_range) {
  require_same(estimate, reference);
  require_range(data_range);
  return per_orientation(estimate, reference, 3,
                         [&](const std::vector<double>& a, const std::vector<double>& r, std::size_t w,
                             std::size_t h) { return gmsd_2d(a, r, w, h, data_range); });
}

double ssim_2p5d(const Volume& estimate, const Volume& reference, double data_range, int window) {
  return ssim_orientations(estimate, reference, data_range, window).mean();
}

double gmsd_2p5d(const Volume& estimate, const Volume& reference, double data_range) {
  return gmsd_orientations(estimate, reference, data_range).mean();
}

MetricReport evaluate(const Volume& estimate, const Volume& reference, double data_range, int window) {
  MetricReport r;
  r.data_range = data_range;
  r.mae = mae(estimate, reference);
  r.psnr = psnr(estimate, reference, data_range);
  r.ssim_by_axis = ssim_orientations(estimate, reference, data_range, window);
  r.gmsd_by_axis = gmsd_orientations(estimate, reference, data_range);
  r.ssim = r.ssim_by_axis.mean();
  r.gmsd = r.gmsd_by_axis.mean();
  return r;
}

}  // namespace diffprior

#include "diffprior/linops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "diffprior/error.hpp"

namespace diffprior {

std::vector<double> LinearOperator::apply(std::span<const double> in) const {
  std::vector<double> out(output_size());
  apply(in, out);
  return out;
}

std::vector<double> LinearOperator::adjoint(std::span<const double> in) const {
  std::vector<double> out(input_size());
  adjoint(in, out);
  return out;
}

namespace {

void check_size(std::size_t got, std::size_t want, const char* what) {
  if (got != want)
    throw InvalidArgument(std::string(what) + ": expected " + std::to_string(want) +
                          " values, got " + std::to_string(got));
}

class IdentityOperator final : public LinearOperator {
 public:
  explicit IdentityOperator(Dims dims) : dims_(dims) {}
  Dims input_dims() const override { return dims_; }
  Dims output_dims() const override { return dims_; }
  void apply(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), input_size(), "identity apply");
    check_size(out.size(), output_size(), "identity apply");
    std::copy(in.begin(), in.end(), out.begin());
  }
  void adjoint(std::span<const double> in, std::span<double> out) const override { apply(in, out); }

 private:
  Dims dims_;
};

class ResampleOperator final : public LinearOperator {
 public:
  ResampleOperator(Dims source, const GridMap& map)
      : source_(source), target_(map.target_dims), stencils_(trilinear_stencils(source, map)) {}

  Dims input_dims() const override { return source_; }
  Dims output_dims() const override { return target_; }

  void apply(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), input_size(), "resample apply");
    check_size(out.size(), output_size(), "resample apply");
    for (std::size_t n = 0; n < stencils_.size(); ++n) {
      const auto& s = stencils_[n];
      double acc = 0.0;
      for (int c = 0; c < 8; ++c) acc += s.weight[c] * in[s.index[c]];
      out[n] = acc;
    }
  }

  void adjoint(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), output_size(), "resample adjoint");
    check_size(out.size(), input_size(), "resample adjoint");
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t n = 0; n < stencils_.size(); ++n) {
      const auto& s = stencils_[n];
      for (int c = 0; c < 8; ++c) out[s.index[c]] += s.weight[c] * in[n];
    }
  }

 private:
  Dims source_;
  Dims target_;
  std::vector<TrilinearStencil> stencils_;
};

// Separable correlation with clamp-to-edge sampling. The adjoint scatters each
// tap onto the clamped source index, so boundary weights are transposed exactly.
class BlurOperator final : public LinearOperator {
 public:
  BlurOperator(Dims dims, std::array<std::vector<double>, 3> kernels)
      : dims_(dims), kernels_(std::move(kernels)) {}

  Dims input_dims() const override { return dims_; }
  Dims output_dims() const override { return dims_; }

  void apply(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), input_size(), "blur apply");
    check_size(out.size(), output_size(), "blur apply");
    std::vector<double> a(in.begin(), in.end()), b(a.size());
    for (int axis = 0; axis < 3; ++axis) {
      if (kernels_[axis].size() == 1) continue;
      pass(axis, a, b, false);
      a.swap(b);
    }
    std::copy(a.begin(), a.end(), out.begin());
  }

  void adjoint(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), output_size(), "blur adjoint");
    check_size(out.size(), input_size(), "blur adjoint");
    std::vector<double> a(in.begin(), in.end()), b(a.size());
    for (int axis = 2; axis >= 0; --axis) {
      if (kernels_[axis].size() == 1) continue;
      pass(axis, a, b, true);
      a.swap(b);
    }
    std::copy(a.begin(), a.end(), out.begin());
  }

 private:
  void pass(int axis, const std::vector<double>& src, std::vector<double>& dst, bool transpose) const {
    const auto& k = kernels_[axis];
    const auto radius = static_cast<long long>(k.size() / 2);
    const auto n = static_cast<long long>(dims_[axis]);
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? dims_[0] : dims_[0] * dims_[1]);
    std::fill(dst.begin(), dst.end(), 0.0);
    std::array<std::size_t, 3> other{};
    int o = 0;
    for (int d = 0; d < 3; ++d)
      if (d != axis) other[o++] = static_cast<std::size_t>(d);
    for (std::size_t q = 0; q < dims_[other[1]]; ++q)
      for (std::size_t p = 0; p < dims_[other[0]]; ++p) {
        std::array<std::size_t, 3> idx{};
        idx[other[0]] = p;
        idx[other[1]] = q;
        idx[axis] = 0;
        const std::size_t base = linear_index(dims_, idx[0], idx[1], idx[2]);
        for (long long i = 0; i < n; ++i) {
          for (long long t = -radius; t <= radius; ++t) {
            const long long s = std::clamp(i + t, 0LL, n - 1);
            const double w = k[static_cast<std::size_t>(t + radius)];
            if (transpose)
              dst[base + stride * static_cast<std::size_t>(s)] += w * src[base + stride * static_cast<std::size_t>(i)];
            else
              dst[base + stride * static_cast<std::size_t>(i)] += w * src[base + stride * static_cast<std::size_t>(s)];
          }
        }
      }
  }

  Dims dims_;
  std::array<std::vector<double>, 3> kernels_;
};

class ComposedOperator final : public LinearOperator {
 public:
  explicit ComposedOperator(std::vector<OperatorPtr> stages) : stages_(std::move(stages)) {}

  Dims input_dims() const override { return stages_.front()->input_dims(); }
  Dims output_dims() const override { return stages_.back()->output_dims(); }

  void apply(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), input_size(), "projection apply");
    check_size(out.size(), output_size(), "projection apply");
    std::vector<double> cur(in.begin(), in.end());
    for (const auto& s : stages_) cur = s->apply(cur);
    std::copy(cur.begin(), cur.end(), out.begin());
  }

  void adjoint(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), output_size(), "projection adjoint");
    check_size(out.size(), input_size(), "projection adjoint");
    std::vector<double> cur(in.begin(), in.end());
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) cur = (*it)->adjoint(cur);
    std::copy(cur.begin(), cur.end(), out.begin());
  }

 private:
  std::vector<OperatorPtr> stages_;
};

class SelectOperator final : public LinearOperator {
 public:
  explicit SelectOperator(const Mask& mask) : dims_(mask.dims()) {
    const auto v = mask.values();
    for (std::size_t n = 0; n < v.size(); ++n)
      if (v[n]) selected_.push_back(n);
  }

  Dims input_dims() const override { return dims_; }
  Dims output_dims() const override { return {selected_.size(), 1, 1}; }

  void apply(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), input_size(), "select apply");
    check_size(out.size(), output_size(), "select apply");
    for (std::size_t n = 0; n < selected_.size(); ++n) out[n] = in[selected_[n]];
  }

  void adjoint(std::span<const double> in, std::span<double> out) const override {
    check_size(in.size(), output_size(), "select adjoint");
    check_size(out.size(), input_size(), "select adjoint");
    std::fill(out.begin(), out.end(), 0.0);
    for (std::size_t n = 0; n < selected_.size(); ++n) out[selected_[n]] = in[n];
  }

 private:
  Dims dims_;
  std::vector<std::size_t> selected_;
};

}  // namespace

Mask::Mask(Dims dims, std::vector<std::uint8_t> values) : dims_(dims), values_(std::move(values)) {
  if (values_.size() != voxel_count(dims_)) throw InvalidArgument("mask length does not match dims");
  for (auto v : values_) {
    if (v > 1) throw InvalidArgument("mask values must be 0 or 1");
    observed_ += v;
  }
  if (observed_ == 0) throw InvalidArgument("mask has no observed voxels");
}

Mask Mask::from_volume(const Volume& v) {
  std::vector<std::uint8_t> values(v.size());
  for (std::size_t n = 0; n < v.size(); ++n) values[n] = v[n] > 0.5 ? 1 : 0;
  return Mask(v.dims(), std::move(values));
}

OperatorPtr op_identity(const Dims& dims) { return std::make_shared<IdentityOperator>(dims); }

OperatorPtr op_align(const GridMap& map) { return op_resample(map.target_dims, map); }

OperatorPtr op_resample(const Dims& source_dims, const GridMap& map) {
  for (int d = 0; d < 3; ++d)
    if (source_dims[d] < 1 || map.target_dims[d] < 1) throw InvalidArgument("resample dims must be >= 1");
  return std::make_shared<ResampleOperator>(source_dims, map);
}

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::numbers::ln2)); }

std::vector<double> gaussian_kernel(double sigma_vox) {
  if (!(sigma_vox > 0.0)) return {1.0};
  const auto radius = static_cast<long long>(std::ceil(4.0 * sigma_vox));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (long long t = -radius; t <= radius; ++t) {
    const double v = std::exp(-0.5 * static_cast<double>(t * t) / (sigma_vox * sigma_vox));
    k[static_cast<std::size_t>(t + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

OperatorPtr op_blur(const SliceProfile& profile, const Vec3& spacing, const Dims& dims) {
  std::array<std::vector<double>, 3> kernels;
  for (int d = 0; d < 3; ++d) {
    if (!(spacing[d] > 0.0)) throw InvalidArgument("blur spacing must be positive");
    if (!(profile.fwhm_mm[d] >= 0.0)) throw InvalidArgument("slice profile fwhm must be non-negative");
    if (dims[d] < 1) throw InvalidArgument("blur dims must be >= 1");
    kernels[d] = gaussian_kernel(fwhm_to_sigma(profile.fwhm_mm[d] / spacing[d]));
  }
  return std::make_shared<BlurOperator>(dims, std::move(kernels));
}

OperatorPtr op_downsample(const Vec3& factors, const Dims& hr_dims) {
  Geometry hr;
  hr.dims = hr_dims;
  const Geometry lr = downsampled_geometry(hr, factors);
  return op_resample(hr_dims, GridMap{hr.affine, lr.affine, lr.dims});
}

OperatorPtr op_project(OperatorPtr t, OperatorPtr s, OperatorPtr r) {
  if (!t || !s || !r) throw InvalidArgument("projection stages must be non-null");
  if (t->output_dims() != s->input_dims())
    throw InvalidArgument("projection: T output dims do not match S input dims");
  if (s->output_dims() != r->input_dims())
    throw InvalidArgument("projection: S output dims do not match R input dims");
  return std::make_shared<ComposedOperator>(std::vector<OperatorPtr>{std::move(t), std::move(s), std::move(r)});
}

OperatorPtr op_select(const Mask& mask) {
  if (mask.observed_count() == 0) throw InvalidArgument("selection mask has no observed voxels");
  return std::make_shared<SelectOperator>(mask);
}

double operator_norm(const LinearOperator& op, int iterations) {
  std::vector<double> v(op.input_size());
  // Fixed, non-symmetric start vector so the result is reproducible.
  for (std::size_t n = 0; n < v.size(); ++n) v[n] = 1.0 + 0.5 * std::sin(0.7 * static_cast<double>(n));
  double lambda = 0.0;
  for (int it = 0; it < iterations; ++it) {
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (double& x : v) x /= norm;
    auto w = op.adjoint(op.apply(v));
    lambda = 0.0;
    for (std::size_t n = 0; n < v.size(); ++n) lambda += v[n] * w[n];
    v = std::move(w);
  }
  return std::sqrt(std::max(lambda, 0.0));
}

}  // namespace diffprior

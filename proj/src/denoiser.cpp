#include "diffprior/denoiser.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <Eigen/Core>

#include "diffprior/error.hpp"

namespace diffprior {

namespace {

using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using MatMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }
double silu(double z) { return z * sigmoid(z); }
double silu_grad(double z) {
  const double s = sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

constexpr char kMagic[4] = {'D', 'P', 'D', 'N'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f32(std::string& buf, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(buf, bits);
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint32_t u32(const char* field) {
    if (pos_ + 4 > data_.size()) throw FormatError(std::string("checkpoint truncated reading ") + field);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }
  double f32(const char* field) {
    const std::uint32_t bits = u32(field);
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }
  std::string bytes(std::size_t n, const char* field) {
    if (pos_ + n > data_.size()) throw FormatError(std::string("checkpoint truncated reading ") + field);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace

Mlp::Mlp(std::vector<std::size_t> widths, Rng& rng) : widths_(std::move(widths)) {
  build_offsets();
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(widths_[l]));
    const std::size_t nw = widths_[l] * widths_[l + 1];
    for (std::size_t i = 0; i < nw; ++i) params_[weight_offset(l) + i] = scale * rng.normal();
  }
}

Mlp::Mlp(std::vector<std::size_t> widths, std::vector<double> params) : widths_(std::move(widths)) {
  build_offsets();
  if (params.size() != params_.size()) throw InvalidArgument("mlp parameter count does not match the layer widths");
  params_ = std::move(params);
}

void Mlp::build_offsets() {
  if (widths_.size() < 2) throw InvalidArgument("mlp needs at least an input and an output width");
  for (auto w : widths_)
    if (w == 0) throw InvalidArgument("mlp widths must be positive");
  offsets_.clear();
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    offsets_.push_back(total);
    total += widths_[l] * widths_[l + 1] + widths_[l + 1];
  }
  params_.assign(total, 0.0);
}

std::vector<double> Mlp::forward(std::span<const double> in, Cache* cache) const {
  if (in.size() != widths_.front()) throw InvalidArgument("mlp input has the wrong length");
  std::vector<double> cur(in.begin(), in.end());
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const auto rows = static_cast<Eigen::Index>(widths_[l + 1]);
    const auto cols = static_cast<Eigen::Index>(widths_[l]);
    ConstMatMap w(params_.data() + weight_offset(l), rows, cols);
    ConstVecMap b(params_.data() + bias_offset(l), rows);
    std::vector<double> z(static_cast<std::size_t>(rows));
    VecMap(z.data(), rows) = w * ConstVecMap(cur.data(), cols) + b;
    if (cache) {
      cache->inputs.push_back(cur);
      cache->pre.push_back(z);
    }
    if (l + 1 < num_layers())
      for (double& v : z) v = silu(v);
    cur = std::move(z);
  }
  return cur;
}

std::vector<double> Mlp::backward(const Cache& cache, std::span<const double> grad_out, std::span<double> grad) const {
  if (grad.size() != params_.size()) throw InvalidArgument("mlp gradient buffer has the wrong length");
  std::vector<double> g(grad_out.begin(), grad_out.end());
  for (std::size_t l = num_layers(); l-- > 0;) {
    const auto rows = static_cast<Eigen::Index>(widths_[l + 1]);
    const auto cols = static_cast<Eigen::Index>(widths_[l]);
    if (l + 1 < num_layers())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] *= silu_grad(cache.pre[l][i]);
    ConstVecMap gv(g.data(), rows);
    MatMap(grad.data() + weight_offset(l), rows, cols).noalias() +=
        gv * ConstVecMap(cache.inputs[l].data(), cols).transpose();
    VecMap(grad.data() + bias_offset(l), rows) += gv;
    std::vector<double> gin(static_cast<std::size_t>(cols));
    ConstMatMap w(params_.data() + weight_offset(l), rows, cols);
    VecMap(gin.data(), cols).noalias() = w.transpose() * gv;
    g = std::move(gin);
  }
  return g;
}

Preconditioning Preconditioning::at(double sigma, double sigma_data) {
  const double s2 = sigma * sigma, d2 = sigma_data * sigma_data;
  const double root = std::sqrt(s2 + d2);
  return {d2 / (s2 + d2), sigma * sigma_data / root, 1.0 / root, 0.25 * std::log(sigma)};
}

Denoiser::Denoiser(std::size_t dim, const std::vector<std::size_t>& hidden, double sigma_data, Rng& rng)
    : dim_(dim), sigma_data_(sigma_data) {
  if (dim == 0) throw InvalidArgument("denoiser dimension must be positive");
  if (!(sigma_data > 0.0)) throw InvalidArgument("sigma_data must be positive");
  std::vector<std::size_t> widths{dim + 1};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(dim);
  net_ = Mlp(widths, rng);
}

Denoiser::Denoiser(Mlp network, double sigma_data) : net_(std::move(network)), sigma_data_(sigma_data) {
  if (!(sigma_data > 0.0)) throw InvalidArgument("sigma_data must be positive");
  const auto& w = net_.widths();
  if (w.front() != w.back() + 1) throw InvalidArgument("denoiser network must map dim + 1 inputs to dim outputs");
  dim_ = w.back();
}

std::vector<double> Denoiser::denoise(std::span<const double> x, double sigma) const {
  if (x.size() != dim_)
    throw InvalidArgument("denoiser expects " + std::to_string(dim_) + " values, got " + std::to_string(x.size()));
  if (!(sigma > 0.0)) throw InvalidArgument("denoiser requires sigma > 0");
  const auto p = Preconditioning::at(sigma, sigma_data_);
  std::vector<double> in(dim_ + 1);
  for (std::size_t i = 0; i < dim_; ++i) in[i] = p.c_in * x[i];
  in[dim_] = p.c_noise;
  auto f = net_.forward(in);
  for (std::size_t i = 0; i < dim_; ++i) {
    f[i] = p.c_skip * x[i] + p.c_out * f[i];
    if (!std::isfinite(f[i])) throw NumericRangeError("denoiser output is not finite");
  }
  return f;
}

std::vector<double> denoiser_score(std::span<const double> x, double sigma, const DenoiseFn& d) {
  if (!(sigma > 0.0)) throw InvalidArgument("denoiser score requires sigma > 0");
  auto out = d(x, sigma);
  if (out.size() != x.size()) throw InvalidArgument("denoiser output has the wrong length");
  const double inv = 1.0 / (sigma * sigma);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(out[i])) throw NumericRangeError("denoiser output is not finite");
    out[i] = (out[i] - x[i]) * inv;
  }
  return out;
}

std::vector<double> denoiser_score(std::span<const double> x, double sigma, const Denoiser& d) {
  return denoiser_score(x, sigma, [&d](std::span<const double> v, double s) { return d.denoise(v, s); });
}

DenoiserScore::DenoiserScore(std::shared_ptr<const Denoiser> d) : d_(std::move(d)) {
  if (!d_) throw InvalidArgument("denoiser score needs a denoiser");
}

std::vector<double> DenoiserScore::score(std::span<const double> x, double sigma) const {
  return denoiser_score(x, sigma, *d_);
}

std::vector<double> DenoiserScore::denoise(std::span<const double> x, double sigma) const {
  return d_->denoise(x, sigma);
}

void write_checkpoint(const std::string& path, const Denoiser& d) {
  std::string buf(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, 0);
  put_f32(buf, d.sigma_data());
  const auto& w = d.network().widths();
  put_u32(buf, static_cast<std::uint32_t>(w.size() - 1));
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    put_u32(buf, static_cast<std::uint32_t>(w[l]));
    put_u32(buf, static_cast<std::uint32_t>(w[l + 1]));
  }
  for (double p : d.network().params()) put_f32(buf, p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Denoiser read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(4, "magic") != std::string(kMagic, 4)) throw FormatError("checkpoint magic mismatch in " + path);
  if (const auto v = r.u32("version"); v != kVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  if (r.u32("activation") != 0) throw FormatError("unsupported checkpoint activation");
  const double sigma_data = r.f32("sigma_data");
  const std::uint32_t layers = r.u32("layer count");
  if (layers == 0 || layers > 64) throw FormatError("implausible checkpoint layer count");
  std::vector<std::size_t> widths;
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::size_t in_w = r.u32("layer input width"), out_w = r.u32("layer output width");
    if (l == 0) widths.push_back(in_w);
    else if (widths.back() != in_w) throw FormatError("checkpoint layer widths do not chain");
    widths.push_back(out_w);
  }
  std::size_t count = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) count += widths[l] * widths[l + 1] + widths[l + 1];
  std::vector<double> params(count);
  for (auto& p : params) p = r.f32("parameters");
  if (!r.at_end()) throw FormatError("checkpoint has trailing bytes");
  return Denoiser(Mlp(std::move(widths), std::move(params)), sigma_data);
}

}  // namespace diffprior

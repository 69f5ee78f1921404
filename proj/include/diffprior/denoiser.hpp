#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "diffprior/prior.hpp"
#include "diffprior/rng.hpp"

namespace diffprior {

/// Fully connected network with SiLU hidden activations and a linear output
/// layer. Parameters live in one flat array (per layer: weights row-major
/// out x in, then biases) so optimizers can treat them as a single vector.
class Mlp {
 public:
  Mlp() = default;
  /// `widths` = {input, hidden..., output}; weights ~ N(0, 1/fan_in), biases 0.
  Mlp(std::vector<std::size_t> widths, Rng& rng);
  Mlp(std::vector<std::size_t> widths, std::vector<double> params);

  /// Intermediate values kept by forward() for backward().
  struct Cache {
    std::vector<std::vector<double>> inputs;  // input to each layer
    std::vector<std::vector<double>> pre;     // pre-activation of each layer
  };

  std::vector<double> forward(std::span<const double> in, Cache* cache = nullptr) const;
  /// Accumulates d loss / d params into `grad` (same layout as params()) given
  /// d loss / d output. Returns d loss / d input.
  std::vector<double> backward(const Cache& cache, std::span<const double> grad_out, std::span<double> grad) const;

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t num_layers() const { return widths_.empty() ? 0 : widths_.size() - 1; }
  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

 private:
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const { return offsets_[layer] + widths_[layer] * widths_[layer + 1]; }
  void build_offsets();

  std::vector<std::size_t> widths_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

/// EDM preconditioning scalars at noise level sigma.
struct Preconditioning {
  double c_skip;
  double c_out;
  double c_in;
  double c_noise;

  static Preconditioning at(double sigma, double sigma_data);
};

/// D(x, sigma) = c_skip x + c_out F([c_in x, c_noise]) with F an Mlp of
/// widths {dim + 1, hidden..., dim}.
class Denoiser {
 public:
  Denoiser(std::size_t dim, const std::vector<std::size_t>& hidden, double sigma_data, Rng& rng);
  Denoiser(Mlp network, double sigma_data);

  std::size_t dim() const { return dim_; }
  double sigma_data() const { return sigma_data_; }
  const Mlp& network() const { return net_; }
  Mlp& network() { return net_; }

  /// Throws NumericRangeError if the network output is non-finite.
  std::vector<double> denoise(std::span<const double> x, double sigma) const;

 private:
  Mlp net_;
  std::size_t dim_;
  double sigma_data_;
};

using DenoiseFn = std::function<std::vector<double>(std::span<const double>, double)>;

/// Tweedie identity: score = (d(x, sigma) - x) / sigma^2.
std::vector<double> denoiser_score(std::span<const double> x, double sigma, const DenoiseFn& d);
std::vector<double> denoiser_score(std::span<const double> x, double sigma, const Denoiser& d);

/// ScoreProvider backed by a trained Denoiser.
class DenoiserScore final : public ScoreProvider {
 public:
  explicit DenoiserScore(std::shared_ptr<const Denoiser> d);

  std::string_view kind() const override { return "denoiser"; }
  std::vector<double> score(std::span<const double> x, double sigma) const override;
  std::vector<double> denoise(std::span<const double> x, double sigma) const override;
  const Denoiser& denoiser() const { return *d_; }

 private:
  std::shared_ptr<const Denoiser> d_;
};

/// Binary checkpoint, all fields little-endian:
///   "DPDN" | u32 version (1) | u32 activation (0 = SiLU) | f32 sigma_data |
///   u32 layer count L | L x (u32 in, u32 out) | params as f32
/// Parameters follow the Mlp layout. Reading rejects any other magic/version.
void write_checkpoint(const std::string& path, const Denoiser& d);
Denoiser read_checkpoint(const std::string& path);

}  // namespace diffprior

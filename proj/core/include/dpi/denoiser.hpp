#pragma once

#include <atomic>
#include <cstddef>
#include <string>

#include "dpi/diffusion.hpp"
#include "dpi/image.hpp"
#include "dpi/nn.hpp"
#include "dpi/rng.hpp"

namespace dpi {

struct DenoiserInfo {
  std::string kind;
  std::size_t parameter_count = 0;
  std::string provenance;
};

/// Pluggable noise predictor. evaluate() must be pure: identical arguments
/// give bit-identical outputs, and the output shape equals the input shape.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual DenoiserOutput evaluate(const Image& x_t, int t) const = 0;
  virtual DenoiserInfo info() const = 0;
};

/// Analytic noise predictor for pixelwise Gaussian data x_0 ~ N(mu0, var0).
/// Its x_0 estimate is the exact conjugate-Gaussian posterior mean.
class GaussianOracleDenoiser : public Denoiser {
 public:
  GaussianOracleDenoiser(Image mu0, Image var0, NoiseSchedule sched);

  DenoiserOutput evaluate(const Image& x_t, int t) const override;
  DenoiserInfo info() const override { return {"gaussian-oracle", 0, "analytic"}; }

  const Image& mu0() const { return mu0_; }
  const Image& var0() const { return var0_; }
  const NoiseSchedule& schedule() const { return sched_; }

  /// E[x_0 | x_t] = (sqrt(abar) var0 x_t + (1 - abar) mu0) / (abar var0 + 1 - abar).
  Image posterior_mean_x0(const Image& x_t, int t) const;

 private:
  Image mu0_;
  Image var0_;
  NoiseSchedule sched_;
};

DenoiserOutput oracle_eps(const GaussianOracleDenoiser& d, const Image& x_t, int t,
                          const NoiseSchedule& sched);

/// Small time-conditioned encoder-decoder fitted with the simplified
/// noise-prediction loss. Fixed variance (v absent).
class TinyDenoiser : public Denoiser {
 public:
  TinyDenoiser() = default;
  TinyDenoiser(int channels, int base_width, std::uint64_t seed);
  explicit TinyDenoiser(nn::UNet net);

  DenoiserOutput evaluate(const Image& x_t, int t) const override;
  DenoiserInfo info() const override;

  nn::UNet& net() { return net_; }
  const nn::UNet& net() const { return net_; }

  static nn::UNetConfig architecture(int channels, int base_width);

 private:
  nn::UNet net_;
};

/// Forwards to another denoiser and counts evaluations.
class CountingDenoiser : public Denoiser {
 public:
  explicit CountingDenoiser(const Denoiser& inner) : inner_(inner) {}
  DenoiserOutput evaluate(const Image& x_t, int t) const override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_.evaluate(x_t, t);
  }
  DenoiserInfo info() const override { return inner_.info(); }
  std::size_t calls() const { return calls_.load(); }

 private:
  const Denoiser& inner_;
  mutable std::atomic<std::size_t> calls_{0};
};

/// Full ancestral chain from x_T ~ N(0, I) with fixed-variance steps; x_T and
/// the per-step noise are drawn sequentially from `rng`.
Image sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& sched, Shape shape,
                           RandomStream& rng);

}  // namespace dpi

#include "dpi/denoiser.hpp"

#include <cmath>

#include "dpi/error.hpp"

namespace dpi {

namespace {
constexpr const char* kModule = "denoiser_zoo";
}

GaussianOracleDenoiser::GaussianOracleDenoiser(Image mu0, Image var0, NoiseSchedule sched)
    : mu0_(std::move(mu0)), var0_(std::move(var0)), sched_(std::move(sched)) {
  require_same_shape(mu0_, var0_, kModule);
  for (double v : var0_.values()) {
    if (!(v > 0.0)) throw ParameterError(kModule, "oracle variance must be positive everywhere");
  }
}

Image GaussianOracleDenoiser::posterior_mean_x0(const Image& x_t, int t) const {
  require_same_shape(x_t, mu0_, kModule);
  const double ab = sched_.alpha_bar(t);
  const double sa = std::sqrt(ab);
  Image out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = (sa * var0_[i] * x_t[i] + (1.0 - ab) * mu0_[i]) / (ab * var0_[i] + 1.0 - ab);
  }
  return out;
}

DenoiserOutput oracle_eps(const GaussianOracleDenoiser& d, const Image& x_t, int t,
                          const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw ParameterError(kModule, "timestep out of range");
  require_same_shape(x_t, d.mu0(), kModule);
  const double ab = sched.alpha_bar(t);
  const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
  DenoiserOutput out{Image(x_t.shape()), std::nullopt};
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    const double v = d.var0()[i];
    const double mean = (sa * v * x_t[i] + (1.0 - ab) * d.mu0()[i]) / (ab * v + 1.0 - ab);
    out.eps[i] = (x_t[i] - sa * mean) / sb;
  }
  return out;
}

DenoiserOutput GaussianOracleDenoiser::evaluate(const Image& x_t, int t) const {
  return oracle_eps(*this, x_t, t, sched_);
}

nn::UNetConfig TinyDenoiser::architecture(int channels, int base_width) {
  nn::UNetConfig cfg;
  cfg.in_channels = channels;
  cfg.out_channels = channels;
  cfg.cond_channels = 0;
  cfg.base_width = base_width;
  return cfg;
}

TinyDenoiser::TinyDenoiser(int channels, int base_width, std::uint64_t seed)
    : net_(architecture(channels, base_width), seed) {}

TinyDenoiser::TinyDenoiser(nn::UNet net) : net_(std::move(net)) {
  if (net_.config().cond_channels != 0 || net_.config().in_channels != net_.config().out_channels) {
    throw ParameterError(kModule, "network is not a denoiser architecture");
  }
}

DenoiserOutput TinyDenoiser::evaluate(const Image& x_t, int t) const {
  if (x_t.channels() != net_.config().in_channels) {
    throw ParameterError(kModule, "denoiser expects " + std::to_string(net_.config().in_channels) +
                                      " channels, got " + x_t.shape().str());
  }
  const nn::Tensor out = net_.forward(nn::Tensor::from_image(x_t), nullptr, static_cast<double>(t));
  return DenoiserOutput{out.to_image(), std::nullopt};
}

DenoiserInfo TinyDenoiser::info() const {
  return {"tiny-unet", net_.params().scalar_count(), "trained in-repo with the simplified noise loss"};
}

Image sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& sched, Shape shape,
                           RandomStream& rng) {
  Image x = rng.gaussian_image(shape);
  for (int t = sched.steps(); t >= 1; --t) {
    const DenoiserOutput out = denoiser.evaluate(x, t);
    const Image noise = t > 1 ? rng.gaussian_image(shape) : Image(shape);
    x = reverse_step(x, out, t, sched, noise);
  }
  return x;
}

}  // namespace dpi

#include "dpi/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "dpi/error.hpp"

namespace dpi {

namespace {

constexpr const char* kModule = "diffusion_core";

std::atomic<double> g_mean_coef_scale{1.0};

void check_timestep(int t, const NoiseSchedule& sched) {
  if (t < 1 || t > sched.steps()) {
    throw ParameterError(kModule, "timestep " + std::to_string(t) + " outside [1, " +
                                      std::to_string(sched.steps()) + "]");
  }
}

}  // namespace

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  const std::size_t n = betas_.size();
  alphas_.resize(n);
  alpha_bars_.resize(n);
  tilde_betas_.resize(n);
  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    const double prev = running;
    running *= alphas_[i];
    alpha_bars_[i] = running;
    tilde_betas_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - running) * betas_[i];
  }
}

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ParameterError(kModule, "schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ParameterError(kModule, "require 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ParameterError(kModule, "schedule needs at least one step");
  for (double b : betas) {
    if (!(b > 0.0 && b < 1.0)) throw ParameterError(kModule, "betas must lie in (0, 1)");
  }
  return NoiseSchedule(std::move(betas));
}

double NoiseSchedule::mean_coef_xt(int t) const {
  return std::sqrt(alpha(t)) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * fault::mean_coef_scale();
}

double NoiseSchedule::mean_coef_x0(int t) const {
  return std::sqrt(alpha_bar(t - 1)) * beta(t) / (1.0 - alpha_bar(t));
}

Image forward_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched) {
  require_same_shape(x0, eps, kModule);
  check_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  Image out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Image predict_x0(const Image& x_t, const Image& eps, int t, const NoiseSchedule& sched) {
  require_same_shape(x_t, eps, kModule);
  check_timestep(t, sched);
  const double a = std::sqrt(sched.alpha_bar(t));
  const double b = std::sqrt(1.0 - sched.alpha_bar(t));
  Image out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - b * eps[i]) / a;
  return out;
}

Image posterior_mean(const Image& x_hat0, const Image& x_t, int t, const NoiseSchedule& sched) {
  require_same_shape(x_hat0, x_t, kModule);
  check_timestep(t, sched);
  const double cx = sched.mean_coef_xt(t);
  const double c0 = sched.mean_coef_x0(t);
  Image out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x_t[i] + c0 * x_hat0[i];
  return out;
}

double posterior_variance(double v, int t, const NoiseSchedule& sched, VarianceClampCounter* counter) {
  check_timestep(t, sched);
  if (v < 0.0 || v > 1.0 || std::isnan(v)) {
    if (counter) ++counter->clamped;
    v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, 1.0);
  }
  if (t == 1) return 0.0;
  if (v == 0.0) return sched.tilde_beta(t);
  if (v == 1.0) return sched.beta(t);
  return std::exp(v * std::log(sched.beta(t)) + (1.0 - v) * std::log(sched.tilde_beta(t)));
}

ReverseMoments reverse_moments(const Image& x_t, const DenoiserOutput& out, int t,
                               const NoiseSchedule& sched, VarianceClampCounter* counter) {
  const Image x_hat0 = predict_x0(x_t, out.eps, t, sched);
  ReverseMoments m{posterior_mean(x_hat0, x_t, t, sched), Image(x_t.shape())};
  if (out.v) {
    require_same_shape(*out.v, x_t, kModule);
    for (std::size_t i = 0; i < x_t.size(); ++i) {
      m.variance[i] = posterior_variance((*out.v)[i], t, sched, counter);
    }
  } else {
    const double var = posterior_variance(0.0, t, sched);
    for (double& v : m.variance.values()) v = var;
  }
  return m;
}

Image sample_from(const ReverseMoments& moments, const Image& noise) {
  require_same_shape(moments.mean, noise, kModule);
  Image out = moments.mean;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += std::sqrt(moments.variance[i]) * noise[i];
  return out;
}

Image reverse_step(const Image& x_t, const DenoiserOutput& out, int t, const NoiseSchedule& sched,
                   const Image& noise, VarianceClampCounter* counter) {
  return sample_from(reverse_moments(x_t, out, t, sched, counter), noise);
}

namespace fault {
void set_mean_coef_scale(double scale) { g_mean_coef_scale.store(scale); }
double mean_coef_scale() { return g_mean_coef_scale.load(std::memory_order_relaxed); }
}  // namespace fault

}  // namespace dpi

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "dpi/image.hpp"

namespace dpi {

/// Per-timestep DDPM coefficients, indexed 1..T. Index 0 is the clean-data
/// boundary: alpha_bar(0) == 1. Immutable after construction.
class NoiseSchedule {
 public:
  /// Betas linearly spaced from beta_start to beta_end inclusive.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);
  /// Linear 1e-4 .. 0.02 over 1000 steps.
  static NoiseSchedule default_schedule() { return linear(1000, 1e-4, 0.02); }

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(t - 1); }
  double alpha(int t) const { return alphas_.at(t - 1); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(t - 1); }
  double tilde_beta(int t) const { return tilde_betas_.at(t - 1); }

  /// Coefficients of the Gaussian posterior mean q(x_{t-1} | x_t, x_0):
  /// mean = on_xt * x_t + on_x0 * x_0.
  double mean_coef_xt(int t) const;
  double mean_coef_x0(int t) const;

 private:
  explicit NoiseSchedule(std::vector<double> betas);

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> tilde_betas_;
};

/// Noise prediction plus optional variance-interpolation output in [0, 1].
struct DenoiserOutput {
  Image eps;
  std::optional<Image> v;
};

/// Counts variance-interpolation values that had to be clamped into [0, 1].
struct VarianceClampCounter {
  std::size_t clamped = 0;
};

/// sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Image forward_sample(const Image& x0, int t, const Image& eps, const NoiseSchedule& sched);

/// (x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t).
Image predict_x0(const Image& x_t, const Image& eps, int t, const NoiseSchedule& sched);

Image posterior_mean(const Image& x_hat0, const Image& x_t, int t, const NoiseSchedule& sched);

/// exp(v log beta_t + (1 - v) log tilde_beta_t). At t == 1 the variance is 0
/// (tilde_beta_1 == 0, the last step is deterministic). Out-of-range v is
/// clamped and counted.
double posterior_variance(double v, int t, const NoiseSchedule& sched,
                          VarianceClampCounter* counter = nullptr);

/// Mean and per-pixel variance of p(x_{t-1} | x_t).
struct ReverseMoments {
  Image mean;
  Image variance;
};

ReverseMoments reverse_moments(const Image& x_t, const DenoiserOutput& out, int t,
                               const NoiseSchedule& sched, VarianceClampCounter* counter = nullptr);

/// mean + sqrt(variance) * noise, with noise supplied by the caller.
Image sample_from(const ReverseMoments& moments, const Image& noise);

Image reverse_step(const Image& x_t, const DenoiserOutput& out, int t, const NoiseSchedule& sched,
                   const Image& noise, VarianceClampCounter* counter = nullptr);

/// Test fixture: scales the x_t posterior-mean coefficient so harnesses can
/// prove they catch a wrong coefficient. 1 means no fault. Process-wide.
namespace fault {
void set_mean_coef_scale(double scale);
double mean_coef_scale();
}  // namespace fault

}  // namespace dpi

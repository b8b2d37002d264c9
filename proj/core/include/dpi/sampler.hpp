#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dpi/corrector.hpp"
#include "dpi/denoiser.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/masks.hpp"
#include "dpi/rng.hpp"

namespace dpi {

enum class SamplerKind { kAncestral, kImplicit };

/// kPrinted: sigma^2 = eta sqrt((1-abar_prev)/(1-abar_t)) sqrt((1-abar_t)/abar_prev).
/// kCanonical: sigma^2 = eta^2 (1-abar_prev)/(1-abar_t) (1 - abar_t/abar_prev).
enum class SigmaForm { kPrinted, kCanonical };

/// How the implicit y-branch estimates its clean image.
/// kNoisy re-noises y_t with eps_theta first, so the estimate is y_t itself
/// (the same reparameterization as the ancestral loop). kLiteral plugs the
/// clean y_t straight into the x_0 formula.
enum class DdimConditionForm { kNoisy, kLiteral };

struct DpiConfig {
  int tau = 300;
  double s = 1.2;
  double omega = 750.0;
  int stride = 2;
  SamplerKind kind = SamplerKind::kAncestral;
  /// Ancestral: must equal the schedule length. Implicit: thinned step count.
  int steps = 1000;
  double eta = 0.1;
  std::uint64_t seed = 0;
  SigmaForm sigma_form = SigmaForm::kPrinted;
  DdimConditionForm ddim_condition = DdimConditionForm::kNoisy;
  /// Snapshot every n-th step into the trace (0 disables tracing).
  int trace_every = 0;

  void validate() const;
};

struct TraceFrame {
  int t = 0;      // original timestep
  int index = 0;  // position in the (possibly thinned) sequence
  bool adaptive = false;
  double w = 1.0;
  std::size_t mask_popcount = 0;
  Image x;
  Image y;
  std::optional<Mask> mask;
};

struct SampleTrace {
  std::vector<TraceFrame> frames;
};

struct SampleStats {
  int steps = 0;
  int denoiser_calls = 0;
  int fcm_steps = 0;
  int racm_steps = 0;
  double w_min = 1.0;
  double w_max = 0.0;
  std::size_t sigma_clamped = 0;
  VarianceClampCounter variance;
  /// Set when the corrector is the identity map.
  bool identity_corrector = false;
};

struct DpiResult {
  Image x0;
  Image y;
  SampleStats stats;
  SampleTrace trace;
};

/// y_t^n = sqrt(abar_t) y_t + sqrt(1 - abar_t) eps_theta.
Image noisy_condition(const Image& y_t, const Image& eps_theta, int t, const NoiseSchedule& sched);

/// posterior_mean(y_t, y_t^n, t) + sqrt(shared_variance) * noise.
Image conditional_posterior(const Image& y_t, const Image& y_t_n, int t, const NoiseSchedule& sched,
                            const Image& shared_variance, const Image& noise);

/// (1 - m_f) ⊙ x + m_f ⊙ y.
Image fcm_combine(const Image& x_prev, const Image& y_prev, const FixedMask& fm);

/// (1 - m_a) ⊙ x + w m_a ⊙ y + (1 - w) m_a ⊙ x.
Image racm_combine(const Image& x_prev, const Image& y_prev, const AdaptiveMask& am, double w);

/// t / omega clamped to [0, 1].
double racm_weight(int t, double omega);

/// `steps` timesteps spread uniformly over [1, T], both ends included,
/// in increasing order.
std::vector<int> ddim_timesteps(int total_steps, int steps);

/// sigma_t for the jump t -> t_prev (t_prev = 0 means the clean end).
double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched, SigmaForm form = SigmaForm::kPrinted);

/// Two-stage masked ancestral sampling.
DpiResult dpi_sample(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                     const DpiConfig& cfg, const NoiseSchedule& sched);

/// Two-stage masked implicit sampling over a thinned timestep sequence.
/// tau and w index the thinned sequence; the denoiser and corrector see the
/// original timesteps.
DpiResult dpi_sample_ddim(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                          const DpiConfig& cfg, const NoiseSchedule& sched);

/// Dispatches on cfg.kind.
DpiResult restore(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                  const DpiConfig& cfg, const NoiseSchedule& sched);

/// Unconditional implicit sampling (no masks, no corrector).
Image ddim_sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& sched, Shape shape, int steps,
                                double eta, RandomStream& rng, SigmaForm form = SigmaForm::kPrinted,
                                std::size_t* sigma_clamped = nullptr);

}  // namespace dpi

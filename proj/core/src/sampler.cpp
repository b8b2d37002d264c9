#include "dpi/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "dpi/error.hpp"

namespace dpi {

namespace {

constexpr const char* kModule = "dpi_sampler";

struct StepOutcome {
  Image x;
  Image y_prime;
  bool adaptive = false;
  double w = 1.0;
  std::optional<AdaptiveMask> mask;
};

// Stage logic shared by both loops. `index` is the position compared with tau
// and divided by omega.
StepOutcome combine_stage(const Image& x_prime, Image y_prime, const Image& y_t, const FixedMask& fm,
                          const DpiConfig& cfg, int index, SampleStats& stats) {
  StepOutcome out;
  if (index > cfg.tau) {
    out.x = fcm_combine(x_prime, y_prime, fm);
    out.y_prime = std::move(y_prime);
    ++stats.fcm_steps;
    return out;
  }
  RandomStream mask_rng(cfg.seed, stream_id(StreamTag::kAdaptiveMask, static_cast<std::uint64_t>(index)));
  AdaptiveMask am = mask_gen(Condition{y_t, ConditionRole::kIntermediate}, fm, cfg.s, mask_rng);
  const double w = racm_weight(index, cfg.omega);
  if (!(w >= 0.0 && w <= 1.0)) throw NumericalError(kModule, "RACM weight left [0, 1]");
  stats.w_min = std::min(stats.w_min, w);
  stats.w_max = std::max(stats.w_max, w);
  out.x = racm_combine(x_prime, y_prime, am, w);
  out.y_prime = out.x;
  out.adaptive = true;
  out.w = w;
  out.mask = std::move(am);
  ++stats.racm_steps;
  return out;
}

void record_frame(DpiResult& result, const DpiConfig& cfg, int t, int index, const StepOutcome& step,
                  const Image& y) {
  if (cfg.trace_every <= 0 || (index - 1) % cfg.trace_every != 0) return;
  TraceFrame f;
  f.t = t;
  f.index = index;
  f.adaptive = step.adaptive;
  f.w = step.w;
  if (step.mask) {
    f.mask_popcount = step.mask->mask.popcount();
    f.mask = step.mask->mask;
  }
  f.x = step.x;
  f.y = y;
  result.trace.frames.push_back(std::move(f));
}

void check_condition(const Condition& y_T, const FixedMask& fm) {
  for (int c = 0; c < y_T.values.channels(); ++c) {
    for (int y = 0; y < y_T.values.height(); ++y) {
      for (int x = 0; x < y_T.values.width(); ++x) {
        if (!fm.mask.at(y, x) && y_T.values.at(c, y, x) != 0.0) {
          throw ParameterError(kModule, "initial condition has values off the stride-" +
                                            std::to_string(fm.stride) + " grid");
        }
      }
    }
  }
}

Image implicit_update(const Image& x0_hat, const Image& eps, double ab_prev, double sigma, const Image& z) {
  const double a = std::sqrt(ab_prev);
  const double b = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  Image out(x0_hat.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0_hat[i] + b * eps[i] + sigma * z[i];
  return out;
}

// sigma with sigma^2 clamped to 1 - abar_prev; counts clamps.
double clamped_sigma(int t, int t_prev, const DpiConfig& cfg, const NoiseSchedule& sched, std::size_t& clamps) {
  const double sigma = ddim_sigma(t, t_prev, cfg.eta, sched, cfg.sigma_form);
  const double limit = 1.0 - sched.alpha_bar(t_prev);
  if (sigma * sigma > limit) {
    ++clamps;
    return std::sqrt(limit);
  }
  return sigma;
}

}  // namespace

void DpiConfig::validate() const {
  if (steps < 1) throw ParameterError(kModule, "steps must be >= 1");
  if (tau < 0 || tau > steps) {
    throw ParameterError(kModule, "tau " + std::to_string(tau) + " outside [0, " + std::to_string(steps) + "]");
  }
  if (!(s > 0.0)) throw ParameterError(kModule, "s must be > 0");
  if (!(omega > 0.0)) throw ParameterError(kModule, "omega must be > 0");
  if (stride < 1) throw ParameterError(kModule, "stride must be >= 1");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError(kModule, "eta must lie in [0, 1]");
  if (trace_every < 0) throw ParameterError(kModule, "trace interval must be >= 0");
}

Image noisy_condition(const Image& y_t, const Image& eps_theta, int t, const NoiseSchedule& sched) {
  return forward_sample(y_t, t, eps_theta, sched);
}

Image conditional_posterior(const Image& y_t, const Image& y_t_n, int t, const NoiseSchedule& sched,
                            const Image& shared_variance, const Image& noise) {
  return sample_from(ReverseMoments{posterior_mean(y_t, y_t_n, t, sched), shared_variance}, noise);
}

Image fcm_combine(const Image& x_prev, const Image& y_prev, const FixedMask& fm) {
  require_same_shape(x_prev, y_prev, kModule);
  if (fm.mask.height() != x_prev.height() || fm.mask.width() != x_prev.width()) {
    throw ParameterError(kModule, "mask size differs from " + x_prev.shape().str());
  }
  Image out = x_prev;
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        if (fm.mask.at(y, x)) out.at(c, y, x) = y_prev.at(c, y, x);
      }
    }
  }
  return out;
}

Image racm_combine(const Image& x_prev, const Image& y_prev, const AdaptiveMask& am, double w) {
  require_same_shape(x_prev, y_prev, kModule);
  if (!(w >= 0.0 && w <= 1.0)) throw ParameterError(kModule, "RACM weight must lie in [0, 1]");
  if (am.mask.height() != x_prev.height() || am.mask.width() != x_prev.width()) {
    throw ParameterError(kModule, "mask size differs from " + x_prev.shape().str());
  }
  Image out = x_prev;
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        if (am.mask.at(y, x)) out.at(c, y, x) = w * y_prev.at(c, y, x) + (1.0 - w) * x_prev.at(c, y, x);
      }
    }
  }
  return out;
}

double racm_weight(int t, double omega) {
  if (!(omega > 0.0)) throw ParameterError(kModule, "omega must be > 0");
  return std::clamp(static_cast<double>(t) / omega, 0.0, 1.0);
}

std::vector<int> ddim_timesteps(int total_steps, int steps) {
  if (steps < 1 || steps > total_steps) {
    throw ParameterError(kModule, "implicit step count " + std::to_string(steps) + " outside [1, " +
                                      std::to_string(total_steps) + "]");
  }
  if (steps == 1) return {total_steps};
  std::vector<int> ts(static_cast<std::size_t>(steps));
  const double span = static_cast<double>(total_steps - 1) / (steps - 1);
  for (int i = 0; i < steps; ++i) ts[i] = 1 + static_cast<int>(std::lround(i * span));
  return ts;
}

double ddim_sigma(int t, int t_prev, double eta, const NoiseSchedule& sched, SigmaForm form) {
  if (t < 1 || t > sched.steps() || t_prev < 0 || t_prev >= t) {
    throw ParameterError(kModule, "invalid implicit jump " + std::to_string(t) + " -> " + std::to_string(t_prev));
  }
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  double var = 0.0;
  if (form == SigmaForm::kPrinted) {
    var = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt((1.0 - ab) / ab_prev);
  } else {
    var = eta * eta * (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
  }
  return std::sqrt(var);
}

DpiResult dpi_sample(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                     const DpiConfig& cfg, const NoiseSchedule& sched) {
  cfg.validate();
  if (cfg.kind != SamplerKind::kAncestral) throw ParameterError(kModule, "dpi_sample needs the ancestral kind");
  if (cfg.steps != sched.steps()) {
    throw ParameterError(kModule, "ancestral sampling runs all " + std::to_string(sched.steps()) +
                                      " steps, config asks for " + std::to_string(cfg.steps));
  }
  const Shape shape = y_T.values.shape();
  const FixedMask fm = make_fixed_mask(shape.height, shape.width, cfg.stride);
  check_condition(y_T, fm);

  DpiResult result;
  result.stats.identity_corrector = crt.is_identity();
  RandomStream init_rng(cfg.seed, stream_id(StreamTag::kInitialNoise));
  Image x = init_rng.gaussian_image(shape);
  Image y = y_T.values;
  for (int t = sched.steps(); t >= 1; --t) {
    const DenoiserOutput out = denoiser.evaluate(x, t);
    ++result.stats.denoiser_calls;
    const ReverseMoments m = reverse_moments(x, out, t, sched, &result.stats.variance);
    RandomStream step_rng(cfg.seed, stream_id(StreamTag::kStepNoise, static_cast<std::uint64_t>(t)));
    const Image z = step_rng.gaussian_image(shape);
    const Image x_prime = sample_from(m, z);
    const Image y_n = noisy_condition(y, out.eps, t, sched);
    Image y_prime = conditional_posterior(y, y_n, t, sched, m.variance, z);

    StepOutcome step = combine_stage(x_prime, std::move(y_prime), y, fm, cfg, t, result.stats);
    y = crt.correct(apply_mask(step.y_prime, fm.mask), y_T, t).values;
    x = std::move(step.x);
    if (!x.all_finite()) throw NumericalError(kModule, "non-finite sample at t=" + std::to_string(t));
    ++result.stats.steps;
    step.x = x;
    record_frame(result, cfg, t, t, step, y);
  }
  result.x0 = std::move(x);
  result.y = std::move(y);
  return result;
}

DpiResult dpi_sample_ddim(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                          const DpiConfig& cfg, const NoiseSchedule& sched) {
  cfg.validate();
  if (cfg.kind != SamplerKind::kImplicit) throw ParameterError(kModule, "dpi_sample_ddim needs the implicit kind");
  const std::vector<int> ts = ddim_timesteps(sched.steps(), cfg.steps);
  const Shape shape = y_T.values.shape();
  const FixedMask fm = make_fixed_mask(shape.height, shape.width, cfg.stride);
  check_condition(y_T, fm);
  const Image y_T_masked = apply_mask(y_T.values, fm.mask);
  const Condition crt_condition{y_T_masked, ConditionRole::kInitial};

  DpiResult result;
  result.stats.identity_corrector = crt.is_identity();
  RandomStream init_rng(cfg.seed, stream_id(StreamTag::kInitialNoise));
  Image x = init_rng.gaussian_image(shape);
  Image y = y_T.values;
  for (int i = cfg.steps; i >= 1; --i) {
    const int t = ts[i - 1];
    const int t_prev = i > 1 ? ts[i - 2] : 0;
    const double sigma = clamped_sigma(t, t_prev, cfg, sched, result.stats.sigma_clamped);
    const double ab_prev = sched.alpha_bar(t_prev);
    RandomStream step_rng(cfg.seed, stream_id(StreamTag::kStepNoise, static_cast<std::uint64_t>(i)));
    const Image z = step_rng.gaussian_image(shape);

    const DenoiserOutput out = denoiser.evaluate(x, t);
    ++result.stats.denoiser_calls;
    const Image x_prime = implicit_update(predict_x0(x, out.eps, t, sched), out.eps, ab_prev, sigma, z);
    // kNoisy: y_t^n = sqrt(abar) y + sqrt(1 - abar) eps has clean estimate y.
    const Image y_hat0 = cfg.ddim_condition == DdimConditionForm::kNoisy ? y : predict_x0(y, out.eps, t, sched);
    Image y_prime = implicit_update(y_hat0, out.eps, ab_prev, sigma, z);

    StepOutcome step = combine_stage(x_prime, std::move(y_prime), y, fm, cfg, i, result.stats);
    y = crt.correct(apply_mask(step.y_prime, fm.mask), crt_condition, t).values;
    x = std::move(step.x);
    if (!x.all_finite()) throw NumericalError(kModule, "non-finite sample at t=" + std::to_string(t));
    ++result.stats.steps;
    step.x = x;
    record_frame(result, cfg, t, i, step, y);
  }
  result.x0 = std::move(x);
  result.y = std::move(y);
  return result;
}

DpiResult restore(const Denoiser& denoiser, const ConditionCorrector& crt, const Condition& y_T,
                  const DpiConfig& cfg, const NoiseSchedule& sched) {
  return cfg.kind == SamplerKind::kAncestral ? dpi_sample(denoiser, crt, y_T, cfg, sched)
                                             : dpi_sample_ddim(denoiser, crt, y_T, cfg, sched);
}

Image ddim_sample_unconditional(const Denoiser& denoiser, const NoiseSchedule& sched, Shape shape, int steps,
                                double eta, RandomStream& rng, SigmaForm form, std::size_t* sigma_clamped) {
  const std::vector<int> ts = ddim_timesteps(sched.steps(), steps);
  DpiConfig cfg;
  cfg.eta = eta;
  cfg.sigma_form = form;
  std::size_t clamps = 0;
  Image x = rng.gaussian_image(shape);
  for (int i = steps; i >= 1; --i) {
    const int t = ts[i - 1];
    const int t_prev = i > 1 ? ts[i - 2] : 0;
    const double sigma = clamped_sigma(t, t_prev, cfg, sched, clamps);
    const DenoiserOutput out = denoiser.evaluate(x, t);
    const Image z = sigma > 0.0 ? rng.gaussian_image(shape) : Image(shape);
    x = implicit_update(predict_x0(x, out.eps, t, sched), out.eps, sched.alpha_bar(t_prev), sigma, z);
  }
  if (sigma_clamped) *sigma_clamped += clamps;
  return x;
}

}  // namespace dpi

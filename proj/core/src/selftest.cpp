#include "dpi/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "dpi/corrector.hpp"
#include "dpi/degradation.hpp"
#include "dpi/denoiser.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/error.hpp"
#include "dpi/io.hpp"
#include "dpi/masks.hpp"
#include "dpi/metrics.hpp"
#include "dpi/sampler.hpp"
#include "dpi/toy_data.hpp"

namespace dpi {

namespace {

// Thrown by suites; carries the invariant name.
struct Violation {
  std::string what;
};

void expect(bool ok, const std::string& invariant, double value = NAN) {
  if (ok) return;
  std::ostringstream os;
  os << invariant;
  if (!std::isnan(value)) os << " (got " << value << ")";
  throw Violation{os.str()};
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::max(std::abs(a), std::abs(b))); }

void schedule_suite() {
  const auto s = NoiseSchedule::default_schedule();
  for (int t = 1; t <= s.steps(); ++t) {
    expect(s.alpha(t) == 1.0 - s.beta(t), "alpha_t = 1 - beta_t");
    expect(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar strictly decreasing", t);
    expect(s.tilde_beta(t) <= s.beta(t), "tilde_beta_t <= beta_t", t);
  }
  expect(s.tilde_beta(1) == 0.0, "tilde_beta_1 = 0");
}

void posterior_identity_suite() {
  const auto s = NoiseSchedule::default_schedule();
  double worst = 0.0;
  for (int t = 1; t <= s.steps(); ++t) {
    const Image x0(2, 2, 1, 0.7);
    Image x_t = x0;
    for (double& v : x_t.values()) v *= std::sqrt(s.alpha_bar(t));
    const Image m = posterior_mean(x0, x_t, t, s);
    worst = std::max(worst, rel_err(m[0], std::sqrt(s.alpha_bar(t - 1)) * 0.7));
  }
  expect(worst < 1e-9, "posterior mean maps sqrt(abar_t) x0 to sqrt(abar_{t-1}) x0", worst);
}

void round_trip_suite() {
  const auto s = NoiseSchedule::default_schedule();
  RandomStream rng(1, 0);
  const Image x0 = rng.gaussian_image({4, 4, 1});
  const Image eps = rng.gaussian_image({4, 4, 1});
  double worst = 0.0, worst_cond = 0.0;
  for (int t = 1; t <= s.steps(); t += 7) {
    const Image back = predict_x0(forward_sample(x0, t, eps, s), eps, t, s);
    const Image y = predict_x0(noisy_condition(x0, eps, t, s), eps, t, s);
    for (std::size_t i = 0; i < x0.size(); ++i) {
      worst = std::max(worst, rel_err(back[i], x0[i]));
      worst_cond = std::max(worst_cond, rel_err(y[i], x0[i]));
    }
  }
  expect(worst < 1e-9, "predict_x0 inverts forward_sample", worst);
  expect(worst_cond < 1e-9, "predict_x0 recovers y_t from its noisy condition", worst_cond);
}

void mask_suite() {
  const FixedMask fm = make_fixed_mask(12, 18, 3);
  expect(fm.mask.popcount() == 4u * 6u, "popcount(m_f) = (H/k)(W/k)");
  RandomStream data(2, 0);
  const Image base = data.gaussian_image({4, 6, 1});
  const Condition y = project_initial_condition(base, fm);
  expect(backtrack(y.values, 3) == base, "backtrack inverts projection");
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    RandomStream rng(seed, stream_id(StreamTag::kAdaptiveMask, 1));
    expect(mask_gen(y, fm, 1.2, rng).mask.subset_of(fm.mask), "m_a inside m_f");
  }
}

void oracle_suite() {
  const auto s = NoiseSchedule::default_schedule();
  const GaussianToy law = make_gaussian_toy({1, 2, 1}, 5);
  const GaussianOracleDenoiser oracle(law.mu0, law.var0, s);
  RandomStream rng(3, 0);
  const Image x_t = rng.gaussian_image({1, 2, 1});
  double worst = 0.0;
  for (int t = 1; t <= s.steps(); t += 37) {
    const Image a = predict_x0(x_t, oracle.evaluate(x_t, t).eps, t, s);
    const Image b = oracle.posterior_mean_x0(x_t, t);
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  expect(worst < 1e-10, "oracle x0 estimate equals the conjugate posterior mean", worst);

  // Short Monte-Carlo moment check.
  const int n = 1500;
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  for (int k = 0; k < n; ++k) {
    RandomStream r(11, stream_id(StreamTag::kGeneric, static_cast<std::uint64_t>(k)));
    const Image x = sample_unconditional(oracle, s, {1, 2, 1}, r);
    for (int i = 0; i < 2; ++i) {
      sum[i] += x[i];
      sq[i] += x[i] * x[i];
    }
  }
  for (int i = 0; i < 2; ++i) {
    const double mean = sum[i] / n;
    const double var = sq[i] / n - mean * mean;
    const double se = std::sqrt(law.var0[i] / n);
    expect(std::abs(mean - law.mu0[i]) < 4.0 * se, "ancestral sample mean matches mu0", mean - law.mu0[i]);
    expect(std::abs(var / law.var0[i] - 1.0) < 0.15, "ancestral sample variance matches var0", var / law.var0[i]);
  }
}

void gradient_suite() {
  nn::UNetConfig cfg;
  cfg.base_width = 4;
  cfg.time_dim = 8;
  cfg.cond_channels = 1;
  nn::UNet net(cfg, 7);
  net.randomize(8, 1.0);
  RandomStream rng(9, 0);
  const nn::Tensor x = nn::Tensor::from_image(rng.gaussian_image({8, 8, 1}));
  const nn::Tensor c = nn::Tensor::from_image(rng.gaussian_image({8, 8, 1}));
  const nn::Tensor target = nn::Tensor::from_image(rng.gaussian_image({8, 8, 1}));
  auto loss = [&](const nn::UNet& m, nn::UNet::Trace* tr) {
    const nn::Tensor out = m.forward(x, &c, 37.0, tr);
    double l = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) l += 0.5 * (out.data[i] - target.data[i]) * (out.data[i] - target.data[i]);
    return std::make_pair(l, out);
  };
  nn::UNet::Trace tr;
  auto [l0, out] = loss(net, &tr);
  nn::Tensor g(out.channels, out.height, out.width);
  for (std::size_t i = 0; i < out.size(); ++i) g.data[i] = out.data[i] - target.data[i];
  net.params().zero_grad();
  net.backward(tr, g);
  double worst = 0.0;
  for (std::size_t p = 0; p < net.params().size(); ++p) {
    auto& param = net.params()[p];
    const std::size_t i = param.value.size() / 2;
    const double keep = param.value[i];
    const double h = 1e-5;
    param.value[i] = keep + h;
    const double lp = loss(net, nullptr).first;
    param.value[i] = keep - h;
    const double lm = loss(net, nullptr).first;
    param.value[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    const double an = param.grad[i];
    worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::abs(fd) + std::abs(an)));
  }
  expect(worst < 1e-4, "manual gradients match central differences", worst);
}

void checkpoint_suite() {
  const auto s = NoiseSchedule::linear(10, 1e-3, 0.2);
  CrtModel m(1, 2, 4, 3);
  m.net().randomize(4);
  const std::string a = encode_checkpoint(make_model_checkpoint(m.net(), ModelKind::kCorrector, 2, s));
  const nn::UNet back = network_from_checkpoint(decode_checkpoint(a), ModelKind::kCorrector, s);
  const std::string b = encode_checkpoint(make_model_checkpoint(back, ModelKind::kCorrector, 2, s));
  expect(a == b, "checkpoint save-load-save is byte identical");
  std::string bad = a;
  bad[bad.size() / 2] ^= 0x10;
  bool caught = false;
  try {
    decode_checkpoint(bad);
  } catch (const DataError&) {
    caught = true;
  }
  expect(caught, "checksum rejects a flipped byte");
}

void degradation_suite() {
  const Image img = make_toy_face(1, 0);
  DegradationConfig id;
  RandomStream rng(1, 0);
  const double p = psnr(degrade(img, id, rng), img);
  expect(p > 45.0, "identity degradation keeps PSNR above 45 dB", p);
  RandomStream r2(4, 0);
  for (int i = 0; i < 200; ++i) {
    const auto c = sample_severe_config(r2);
    expect(c.scale >= 8 && c.scale <= 16 && c.blur_ksize % 2 == 1 && c.blur_ksize <= 17 && c.blur_sigma >= 3 &&
               c.blur_sigma <= 20 && c.jpeg_quality >= 40 && c.jpeg_quality <= 50 && c.noise_sigma >= 30 &&
               c.noise_sigma <= 90,
           "severe sampler stays inside its ranges");
  }
}

void metrics_suite() {
  const Image a = make_toy_face(2, 0);
  expect(psnr(a, a) == kPsnrCap, "psnr(a, a) is the cap");
  expect(ssim(a, a) == 1.0, "ssim(a, a) = 1");
  Image b = a;
  for (double& v : b.values()) v = std::clamp(v + 1.0 / 127.5, -1.0, 1.0);
  expect(std::abs(psnr(a, b) - psnr(b, a)) < 1e-12, "psnr symmetric");
  expect(std::abs(ssim(a, b) - ssim(b, a)) < 1e-12, "ssim symmetric");
}

void sampler_suite() {
  const auto s = NoiseSchedule::linear(50, 1e-3, 0.2);
  const Image gt = make_toy_face(3, 0, 16);
  const Image var(gt.shape(), 0.05);
  const GaussianOracleDenoiser oracle(gt, var, s);
  const FixedMask fm = make_fixed_mask(16, 16, 2);
  const Condition y_T = project_initial_condition(backtrack(gt, 2), fm);
  const CountingDenoiser counting(oracle);
  DpiConfig cfg;
  cfg.steps = 50;
  cfg.tau = 20;
  cfg.omega = 40;
  const IdentityCorrector id;
  const DpiResult a = dpi_sample(counting, id, y_T, cfg, s);
  const DpiResult b = dpi_sample(oracle, id, y_T, cfg, s);
  expect(counting.calls() == 50u, "one denoiser evaluation per step", static_cast<double>(counting.calls()));
  expect(a.x0 == b.x0, "seeded determinism");
  expect(a.stats.fcm_steps == 30 && a.stats.racm_steps == 20, "stage switch at t = tau");
}

struct Suite {
  const char* name;
  std::function<void()> run;
};

const std::vector<Suite>& suites() {
  static const std::vector<Suite> all = {
      {"schedule", schedule_suite},         {"posterior-identity", posterior_identity_suite},
      {"round-trip", round_trip_suite},     {"masks", mask_suite},
      {"oracle", oracle_suite},             {"gradients", gradient_suite},
      {"checkpoint", checkpoint_suite},     {"degradation", degradation_suite},
      {"metrics", metrics_suite},           {"sampler", sampler_suite},
  };
  return all;
}

// Restores the coefficient scale even if a suite throws something unexpected.
struct FaultGuard {
  explicit FaultGuard(double rel) { fault::set_mean_coef_scale(1.0 + rel); }
  ~FaultGuard() { fault::set_mean_coef_scale(1.0); }
};

}  // namespace

std::vector<std::string> selftest_suites() {
  std::vector<std::string> names;
  for (const auto& s : suites()) names.emplace_back(s.name);
  return names;
}

std::vector<SuiteResult> run_selftest(const SelftestOptions& opts) {
  for (const auto& name : opts.only) {
    bool known = false;
    for (const auto& s : suites()) known = known || name == s.name;
    if (!known) throw ParameterError("selftest", "unknown suite '" + name + "'");
  }
  FaultGuard guard(opts.inject_mean_coef_fault);
  std::vector<SuiteResult> results;
  for (const auto& s : suites()) {
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), s.name) == opts.only.end()) continue;
    SuiteResult r{s.name, false, {}, 0.0};
    const auto start = std::chrono::steady_clock::now();
    try {
      s.run();
      r.passed = true;
    } catch (const Violation& v) {
      r.detail = v.what;
    } catch (const std::exception& e) {
      r.detail = std::string("unexpected error: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace dpi

#include <gtest/gtest.h>

#include <cmath>

#include "dpi/diffusion.hpp"
#include "dpi/error.hpp"
#include "dpi/rng.hpp"

namespace dpi {
namespace {

Image filled(double v, Shape s = {4, 4, 1}) { return Image(s, v); }

TEST(Schedule, SingleStep) {
  const auto s = NoiseSchedule::linear(1, 0.1, 0.1);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_DOUBLE_EQ(s.beta(1), 0.1);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.9);
  EXPECT_EQ(s.tilde_beta(1), 0.0);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, TwoSteps) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
  EXPECT_NEAR(s.tilde_beta(2), 0.1 / 0.28 * 0.2, 1e-15);
}

TEST(Schedule, DefaultMatchesLongDoubleProduct) {
  const auto s = NoiseSchedule::default_schedule();
  ASSERT_EQ(s.steps(), 1000);
  long double prod = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    const long double beta = 1e-4L + (0.02L - 1e-4L) * (t - 1) / 999.0L;
    prod *= 1.0L - beta;
    ASSERT_NEAR(s.alpha_bar(t), static_cast<double>(prod), 1e-13 * static_cast<double>(prod) + 1e-16) << t;
  }
  EXPECT_GT(s.alpha_bar(1000), 0.0);
  EXPECT_LT(s.alpha_bar(1000), 1e-4);
  for (int t = 1; t <= 1000; ++t) {
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_LE(s.tilde_beta(t), s.beta(t));
  }
}

TEST(Schedule, InvalidRangesThrow) {
  EXPECT_THROW(NoiseSchedule::linear(0, 1e-4, 0.02), ParameterError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.02), ParameterError);
  EXPECT_THROW(NoiseSchedule::linear(10, 1e-4, 1.0), ParameterError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.3, 0.1), ParameterError);
}

TEST(ForwardSample, ZeroNoiseAndZeroSignal) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  const Image x = forward_sample(filled(0.7), 2, filled(0.0), s);
  EXPECT_NEAR(x[0], std::sqrt(0.72) * 0.7, 1e-15);
  const Image n = forward_sample(filled(0.0), 2, filled(-1.5), s);
  EXPECT_NEAR(n[3], std::sqrt(0.28) * -1.5, 1e-15);
}

TEST(ForwardSample, HandExample) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  const Image x = forward_sample(filled(1.0), 2, filled(1.0), s);
  EXPECT_NEAR(x[0], 1.3777, 1e-4);
  const Image back = predict_x0(x, filled(1.0), 2, s);
  EXPECT_NEAR(back[0], 1.0, 1e-9);
}

TEST(ForwardSample, ShapeMismatchThrows) {
  const auto s = NoiseSchedule::default_schedule();
  EXPECT_THROW(forward_sample(filled(0.0, {4, 4, 1}), 5, filled(0.0, {4, 4, 3}), s), ParameterError);
}

TEST(PredictX0, RoundTripAllTimesteps) {
  const auto s = NoiseSchedule::default_schedule();
  RandomStream rng(11, 0);
  const Image x0 = rng.gaussian_image({8, 8, 1});
  const Image eps = rng.gaussian_image({8, 8, 1});
  for (int t = 1; t <= s.steps(); ++t) {
    const Image back = predict_x0(forward_sample(x0, t, eps, s), eps, t, s);
    for (std::size_t i = 0; i < x0.size(); ++i)
      ASSERT_NEAR(back[i], x0[i], 1e-9 * std::max(1.0, std::abs(x0[i]))) << "t=" << t;
  }
}

TEST(PosteriorMean, FinalStepReturnsEstimate) {
  const auto s = NoiseSchedule::default_schedule();
  EXPECT_EQ(s.mean_coef_xt(1), 0.0);
  const Image m = posterior_mean(filled(0.3), filled(5.0), 1, s);
  // beta_1 / (1 - abar_1) is 1 up to the rounding of 1 - (1 - beta_1)
  EXPECT_NEAR(m[0], 0.3, 1e-12);
}

TEST(PosteriorMean, TwoStepHandValue) {
  const auto s = NoiseSchedule::linear(2, 0.1, 0.2);
  // sqrt(alpha_2) (1 - abar_1) / (1 - abar_2) x_t + sqrt(abar_1) beta_2 / (1 - abar_2) x0
  const double expected = std::sqrt(0.8) * 0.1 / 0.28 * 1.0 + std::sqrt(0.9) * 0.2 / 0.28 * 0.5;
  const Image m = posterior_mean(filled(0.5), filled(1.0), 2, s);
  EXPECT_NEAR(m[0], expected, 1e-14);
  EXPECT_NEAR(m[0], 0.6582537460894391, 1e-13);
}

// Mean of x_{t-1} given x_0 must equal sqrt(abar_{t-1}) x_0 whenever x_t is
// itself distributed as q(x_t | x_0).
TEST(PosteriorMean, MarginalConsistency) {
  const auto s = NoiseSchedule::default_schedule();
  for (int t : {1, 2, 10, 300, 999, 1000}) {
    const double lhs = s.mean_coef_xt(t) * std::sqrt(s.alpha_bar(t)) + s.mean_coef_x0(t);
    EXPECT_NEAR(lhs, std::sqrt(s.alpha_bar(t - 1)), 1e-12) << t;
  }
}

TEST(PosteriorMean, ZeroTimestepThrows) {
  const auto s = NoiseSchedule::default_schedule();
  EXPECT_THROW(posterior_mean(filled(0.0), filled(0.0), 0, s), ParameterError);
  EXPECT_THROW(posterior_mean(filled(0.0), filled(0.0), 1001, s), ParameterError);
}

TEST(PosteriorVariance, Endpoints) {
  const auto s = NoiseSchedule::default_schedule();
  for (int t : {2, 50, 1000}) {
    EXPECT_NEAR(posterior_variance(0.0, t, s), s.tilde_beta(t), 1e-15);
    EXPECT_NEAR(posterior_variance(1.0, t, s), s.beta(t), 1e-15);
  }
  EXPECT_EQ(posterior_variance(0.7, 1, s), 0.0);
}

TEST(PosteriorVariance, GeometricMean) {
  // beta_2 = 0.2, tilde_beta_2 = 0.05 requires abar_1 / abar_2 chosen so that
  // (1 - abar_1) / (1 - abar_2) = 0.25: beta_1 = 1/16.
  const auto s = NoiseSchedule::from_betas({1.0 / 16.0, 0.2});
  EXPECT_NEAR(s.tilde_beta(2), 0.05, 1e-15);
  EXPECT_NEAR(posterior_variance(0.5, 2, s), 0.1, 1e-15);
}

TEST(PosteriorVariance, MonotoneAndClamped) {
  const auto s = NoiseSchedule::default_schedule();
  double prev = 0.0;
  for (int i = 0; i <= 20; ++i) {
    const double v = posterior_variance(i / 20.0, 500, s);
    EXPECT_GE(v, prev);
    prev = v;
  }
  VarianceClampCounter counter;
  EXPECT_EQ(posterior_variance(-0.5, 500, s, &counter), s.tilde_beta(500));
  EXPECT_EQ(posterior_variance(1.5, 500, s, &counter), s.beta(500));
  EXPECT_EQ(counter.clamped, 2u);
}

TEST(ReverseStep, ZeroNoiseGivesMean) {
  const auto s = NoiseSchedule::default_schedule();
  RandomStream rng(5, 0);
  const Image xt = rng.gaussian_image({4, 4, 1});
  DenoiserOutput out{rng.gaussian_image({4, 4, 1}), std::nullopt};
  const Image step = reverse_step(xt, out, 400, s, filled(0.0));
  const Image mean = posterior_mean(predict_x0(xt, out.eps, 400, s), xt, 400, s);
  for (std::size_t i = 0; i < step.size(); ++i) EXPECT_NEAR(step[i], mean[i], 1e-14);
}

TEST(ReverseStep, FinalStepIgnoresNoise) {
  const auto s = NoiseSchedule::default_schedule();
  RandomStream rng(6, 0);
  const Image xt = rng.gaussian_image({4, 4, 1});
  DenoiserOutput out{rng.gaussian_image({4, 4, 1}), Image({4, 4, 1}, 0.8)};
  EXPECT_EQ(reverse_step(xt, out, 1, s, filled(0.0)), reverse_step(xt, out, 1, s, filled(3.0)));
}

TEST(ReverseStep, FixedVarianceUsesTildeBeta) {
  const auto s = NoiseSchedule::default_schedule();
  const DenoiserOutput out{filled(0.0), std::nullopt};
  const auto m = reverse_moments(filled(0.2), out, 700, s);
  EXPECT_NEAR(m.variance[0], s.tilde_beta(700), 1e-18);
}

TEST(FaultHook, ScalesCoefficientAndRestores) {
  const auto s = NoiseSchedule::default_schedule();
  const double base = s.mean_coef_xt(100);
  fault::set_mean_coef_scale(1.01);
  EXPECT_NEAR(s.mean_coef_xt(100), base * 1.01, 1e-15);
  fault::set_mean_coef_scale(1.0);
  EXPECT_EQ(s.mean_coef_xt(100), base);
}

}  // namespace
}  // namespace dpi

#include <gtest/gtest.h>

#include <cmath>

#include "dpi/corrector.hpp"
#include "dpi/error.hpp"
#include "dpi/toy_data.hpp"

namespace dpi {
namespace {

struct Fixture {
  NoiseSchedule sched = NoiseSchedule::default_schedule();
  FixedMask fm = make_fixed_mask(8, 8, 2);
  Image gt = make_toy_face(1, 0, 8);
  Condition y_T = make_initial_condition(downsample(gt, 2), fm);
};

std::vector<CrtTrainSample> make_batch(const Fixture& f, std::initializer_list<int> ts) {
  std::vector<CrtTrainSample> batch;
  std::uint64_t i = 0;
  for (int t : ts) {
    RandomStream rng(3, i++);
    batch.push_back(make_crt_sample(f.gt, f.y_T, t, f.sched, rng));
  }
  return batch;
}

double batch_loss(const CrtModel& m, const std::vector<CrtTrainSample>& batch, const OmegaSchedule& omega) {
  double total = 0.0;
  for (const auto& s : batch) total += loss_crt(m, s, omega(s.t));
  return total / static_cast<double>(batch.size());
}

TEST(CrtModel, ZeroHeadReturnsConditionOnGrid) {
  Fixture f;
  const CrtModel m(1, 2, 8, 4);
  RandomStream rng(1, 0);
  const Image noisy = apply_mask(rng.gaussian_image({8, 8, 1}), f.fm.mask);
  const Condition out = m.correct(noisy, f.y_T, 500);
  EXPECT_EQ(out.values, f.y_T.values);
  EXPECT_EQ(out.role, ConditionRole::kIntermediate);
}

TEST(CrtModel, OffGridOutputIsZero) {
  Fixture f;
  CrtModel m(1, 2, 8, 4);
  m.net().randomize(9);
  RandomStream rng(2, 0);
  const Condition out = m.correct(apply_mask(rng.gaussian_image({8, 8, 1}), f.fm.mask), f.y_T, 10);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      if (!f.fm.mask.at(y, x)) {
        EXPECT_EQ(out.values.at(0, y, x), 0.0);
      }
  EXPECT_NE(out.values, f.y_T.values);
}

TEST(CrtModel, ParameterCountStable) {
  const CrtModel a(3, 2, 8, 1), b(3, 2, 8, 2);
  EXPECT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_GT(a.parameter_count(), 0u);
  EXPECT_EQ(a.net().config().cond_channels, 1);
}

TEST(CrtModel, RejectsBadInputs) {
  Fixture f;
  const CrtModel m(1, 2, 8, 4);
  EXPECT_THROW(m.correct(Image(8, 8, 3), Condition{Image(8, 8, 3)}, 3), ParameterError);
  EXPECT_THROW(m.correct(Image(4, 4, 1), f.y_T, 3), ParameterError);
  EXPECT_THROW(CrtModel(1, 0, 8, 4), ParameterError);
}

TEST(Omega, LinearAndClamped) {
  const OmegaSchedule omega{1000};
  EXPECT_EQ(omega(0), 0.0);
  EXPECT_EQ(omega(500), 0.5);
  EXPECT_EQ(omega(1000), 1.0);
  for (int t = 0; t <= 1000; ++t) {
    ASSERT_GE(omega(t), 0.0);
    ASSERT_LE(omega(t), 1.0);
  }
  EXPECT_EQ(omega(2000), 1.0);
}

TEST(CrtSample, PreviousStepHasPosteriorMarginal) {
  Fixture f;
  const Image flat(8, 8, 1, 0.5);
  // gt_prev ~ N(sqrt(abar_{t-1}) gt, 1 - abar_{t-1}) after marginalizing x_t.
  const int t = 400;
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (int i = 0; i < 500; ++i) {
    RandomStream rng(11, i);
    const CrtTrainSample s = make_crt_sample(flat, f.y_T, t, f.sched, rng);
    for (double v : s.gt_prev.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5 * std::sqrt(f.sched.alpha_bar(t - 1)), 0.01);
  EXPECT_NEAR(var, 1.0 - f.sched.alpha_bar(t - 1), 0.03 * (1.0 - f.sched.alpha_bar(t - 1)));
}

TEST(CrtLoss, MatchesNaiveRecompute) {
  Fixture f;
  CrtModel m(1, 2, 8, 4);
  m.net().randomize(5, 0.5);
  auto batch = make_batch(f, {700});
  CrtTrainSample& s = batch[0];
  s.x_crt = m.forward(apply_mask(s.gt_prev, f.fm.mask), f.y_T, s.t).values;

  auto naive = [&](const Image& input) {
    const Image out = m.forward(apply_mask(input, f.fm.mask), f.y_T, s.t).values;
    double sum = 0.0;
    int count = 0;
    for (int y = 0; y < 8; y += 2)
      for (int x = 0; x < 8; x += 2) {
        sum += std::pow(out.at(0, y, x) - f.gt.at(0, y, x), 2);
        ++count;
      }
    return sum / count;
  };
  EXPECT_NEAR(loss_prior(m, s), naive(s.gt_prev), 1e-14);
  EXPECT_NEAR(loss_gap(m, s), naive(*s.x_crt), 1e-14);
  EXPECT_NEAR(loss_crt(m, s, 0.7), 0.7 * naive(s.gt_prev) + 0.3 * naive(*s.x_crt), 1e-14);
  EXPECT_THROW(loss_crt(m, s, 1.5), ParameterError);
  s.x_crt.reset();
  EXPECT_THROW(loss_gap(m, s), ParameterError);
}

TEST(CrtLoss, GridErrorIgnoresOffGrid) {
  const FixedMask fm = make_fixed_mask(4, 4, 2);
  Image a(4, 4, 2), b(4, 4, 2);
  a.at(0, 1, 1) = 100.0;
  a.at(1, 2, 2) = 1.0;
  EXPECT_DOUBLE_EQ(grid_squared_error(a, b, fm), 1.0 / 8.0);
}

// Central differences on >= 100 parameters spread over every tensor; x_crt is
// held fixed (detached), as in training.
TEST(CrtGradients, MatchFiniteDifferences) {
  Fixture f;
  CrtModel m(1, 2, 4, 4);
  m.net().randomize(21, 0.7);
  auto batch = make_batch(f, {900, 350});
  const OmegaSchedule omega{f.sched.steps()};
  m.net().params().zero_grad();
  const double loss = crt_gradients(m, batch, omega);
  EXPECT_NEAR(loss, batch_loss(m, batch, omega), 1e-13);

  RandomStream pick(8, 0);
  int checked = 0;
  double worst = 0.0;
  auto& ps = m.net().params();
  for (std::size_t p = 0; p < ps.size(); ++p) {
    const int per_tensor = std::max<int>(2, static_cast<int>(160 / ps.size()));
    for (int k = 0; k < per_tensor; ++k) {
      const auto idx = static_cast<std::size_t>(pick.uniform_int(0, static_cast<int>(ps[p].value.size()) - 1));
      const double keep = ps[p].value[idx];
      const double h = 1e-5;
      ps[p].value[idx] = keep + h;
      const double up = batch_loss(m, batch, omega);
      ps[p].value[idx] = keep - h;
      const double down = batch_loss(m, batch, omega);
      ps[p].value[idx] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = ps[p].grad[idx];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  EXPECT_GE(checked, 100);
  EXPECT_LT(worst, 1e-4);
}

TEST(CrtGradients, DuplicatedSampleMatchesSingle) {
  Fixture f;
  CrtModel m(1, 2, 4, 4);
  m.net().randomize(2, 0.5);
  const OmegaSchedule omega{f.sched.steps()};
  auto single = make_batch(f, {600});
  auto doubled = single;
  doubled.push_back(single[0]);
  m.net().params().zero_grad();
  const double l1 = crt_gradients(m, single, omega);
  std::vector<std::vector<double>> g1;
  for (const auto& p : m.net().params()) g1.push_back(p.grad);
  m.net().params().zero_grad();
  const double l2 = crt_gradients(m, doubled, omega);
  EXPECT_NEAR(l1, l2, 1e-14);
  std::size_t i = 0;
  for (const auto& p : m.net().params()) {
    for (std::size_t j = 0; j < p.grad.size(); ++j) ASSERT_NEAR(p.grad[j], g1[i][j], 1e-12);
    ++i;
  }
}

TEST(CrtGradients, EmptyBatchThrows) {
  CrtModel m(1, 2, 4, 4);
  std::vector<CrtTrainSample> empty;
  EXPECT_THROW(crt_gradients(m, empty, OmegaSchedule{}), ParameterError);
}

TEST(TrainCrt, SmokeLossDropsAndOmegaBounded) {
  const auto sched = NoiseSchedule::default_schedule();
  const auto data = make_toy_faces(16, 3, 16);
  CrtTrainConfig cfg;
  cfg.base_width = 4;
  cfg.train.batch_size = 4;
  cfg.train.epochs = 6;
  cfg.train.learning_rate = 3e-3;
  cfg.train.ema_decay = 0.9;
  cfg.degradation.scale = 4;
  cfg.degradation.jpeg = false;
  std::size_t calls = 0;
  const auto r = train_crt(data, sched, cfg, std::nullopt, [&](const LossRecord&) { ++calls; });
  EXPECT_EQ(calls, 24u);
  ASSERT_EQ(r.log.epoch_means.size(), 6u);
  EXPECT_LT(r.log.epoch_means.back(), r.log.epoch_means.front());
  EXPECT_GE(r.log.omega_min, 0.0);
  EXPECT_LE(r.log.omega_max, 1.0);
  EXPECT_NE(r.ema.net().params()[0].value, r.model.net().params()[0].value);

  const auto again = train_crt(data, sched, cfg);
  EXPECT_EQ(again.model.net().params()[3].value, r.model.net().params()[3].value);
}

TEST(TrainCrt, SynthesizedConditionDeterministicAndOnGrid) {
  const Image gt = make_toy_face(2, 0, 16);
  CrtTrainConfig cfg;
  cfg.severe = true;
  const Condition a = synthesize_condition(gt, cfg, 4);
  EXPECT_EQ(a.values, synthesize_condition(gt, cfg, 4).values);
  EXPECT_NE(a.values, synthesize_condition(gt, cfg, 5).values);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      if (y % 2 || x % 2) {
        EXPECT_EQ(a.values.at(0, y, x), 0.0);
      }
}

}  // namespace
}  // namespace dpi

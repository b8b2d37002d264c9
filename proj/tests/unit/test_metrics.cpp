#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dpi/degradation.hpp"
#include "dpi/error.hpp"
#include "dpi/metrics.hpp"
#include "dpi/toy_data.hpp"

namespace dpi {
namespace {

// Direct per-window evaluation with a 2-D Gaussian weight, no separability.
double naive_ssim(const Image& a, const Image& b) {
  const Image la = a.luminance(), lb = b.luminance();
  double wsum = 0.0;
  double w[11][11];
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) {
      w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2.0 * 1.5 * 1.5));
      wsum += w[i][j];
    }
  const double c1 = std::pow(0.01 * 255, 2), c2 = std::pow(0.03 * 255, 2);
  double total = 0.0;
  int count = 0;
  for (int y = 0; y + 11 <= la.height(); ++y)
    for (int x = 0; x + 11 <= la.width(); ++x) {
      double mx = 0, my = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          mx += w[i][j] / wsum * (la.at(0, y + i, x + j) + 1) * 127.5;
          my += w[i][j] / wsum * (lb.at(0, y + i, x + j) + 1) * 127.5;
        }
      double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 11; ++i)
        for (int j = 0; j < 11; ++j) {
          const double dx = (la.at(0, y + i, x + j) + 1) * 127.5 - mx;
          const double dy = (lb.at(0, y + i, x + j) + 1) * 127.5 - my;
          vx += w[i][j] / wsum * dx * dx;
          vy += w[i][j] / wsum * dy * dy;
          cov += w[i][j] / wsum * dx * dy;
        }
      total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

TEST(Psnr, IdenticalIsCapped) {
  const Image a = make_toy_face(1, 0);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
  EXPECT_EQ(kPsnrCap, 99.0);
}

TEST(Psnr, UniformOffsetOfOneLevel) {
  const Image a(16, 16, 1, 0.0);
  const Image b(16, 16, 1, 1.0 / 127.5);
  EXPECT_NEAR(psnr(a, b), 10 * std::log10(255.0 * 255.0), 1e-9);
  EXPECT_NEAR(psnr(a, b), 48.13, 0.005);
}

TEST(Psnr, CheckerboardVersusInverse) {
  Image a(8, 8, 1), b(8, 8, 1);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      a.at(0, y, x) = (x + y) % 2 ? 1.0 : -1.0;
      b.at(0, y, x) = -a.at(0, y, x);
    }
  EXPECT_NEAR(psnr(a, b), 0.0, 1e-12);
}

TEST(Psnr, SymmetricAndLuminanceForColour) {
  RandomStream rng(1, 0);
  const Image a = rng.gaussian_image({16, 16, 3}).clamped();
  const Image b = rng.gaussian_image({16, 16, 3}).clamped();
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  EXPECT_EQ(psnr(a, b), psnr(a.luminance(), b.luminance()));
  EXPECT_NE(psnr_per_channel(a, b), psnr(a, b));
  EXPECT_THROW(psnr(a, Image(16, 16, 1)), ParameterError);
}

TEST(Ssim, IdentityAndAnticorrelation) {
  const Image a = make_toy_face(2, 0);
  EXPECT_EQ(ssim(a, a), 1.0);
  Image zero_mean(16, 16, 1);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) zero_mean.at(0, y, x) = 0.5 * std::sin(x * 1.3 + y * 0.7);
  Image neg = zero_mean;
  neg *= -1.0;
  EXPECT_LT(ssim(zero_mean, neg), 0.0);
  EXPECT_GE(ssim(zero_mean, neg), -1.0);
}

TEST(Ssim, MatchesNaiveWindowedOracle) {
  for (int i = 0; i < 4; ++i) {
    const Image gt = make_toy_face(3, i);
    DegradationConfig cfg;
    cfg.scale = 4;
    cfg.blur_ksize = 3;
    cfg.noise_sigma = 8;
    cfg.seed = i;
    const Image lr = degrade(gt, cfg);
    EXPECT_NEAR(ssim(lr, gt), naive_ssim(lr, gt), 1e-6);
    EXPECT_NEAR(ssim(lr, gt), ssim(gt, lr), 1e-12);
  }
}

TEST(Ssim, TooSmallThrows) { EXPECT_THROW(ssim(Image(10, 20, 1), Image(10, 20, 1)), ParameterError); }

TEST(GridMse, SupportRestriction) {
  const FixedMask fm = make_fixed_mask(4, 4, 2);
  const Image gt(4, 4, 1, 0.1);
  EXPECT_EQ(grid_mse(gt, gt, fm.mask), 0.0);
  Image off = gt;
  off.at(0, 1, 1) = 5.0;
  off.at(0, 3, 2) = -5.0;
  EXPECT_EQ(grid_mse(off, gt, fm.mask), 0.0);
  Image on = gt;
  on.at(0, 2, 2) += 0.5;
  EXPECT_NEAR(grid_mse(on, gt, fm.mask), 0.0625, 1e-15);
  EXPECT_LE(grid_mse(on, gt, fm.mask), mean_squared_error(on, gt) * 16.0 / 4.0 + 1e-15);
  EXPECT_THROW(grid_mse(gt, gt, Mask(4, 4, false)), ParameterError);
}

TEST(Report, AggregateIsArithmeticMean) {
  MetricReport rep;
  rep.rows.push_back({"a", 30.0, 0.8, 0.01});
  rep.rows.push_back({"b", 20.0, 0.6, 0.03});
  const MetricRow m = rep.aggregate();
  EXPECT_DOUBLE_EQ(m.psnr, 25.0);
  EXPECT_DOUBLE_EQ(m.ssim, 0.7);
  ASSERT_TRUE(m.grid_mse.has_value());
  EXPECT_DOUBLE_EQ(*m.grid_mse, 0.02);
  std::ostringstream csv;
  rep.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, 24), "name,psnr,ssim,grid_mse\n");
  EXPECT_NE(csv.str().find("\nmean,25,"), std::string::npos);
  rep.rows.push_back({"c", 10.0, 0.1, std::nullopt});
  EXPECT_FALSE(rep.aggregate().grid_mse.has_value());
}

TEST(Report, EvaluatePair) {
  const Image gt = make_toy_face(4, 0);
  const FixedMask fm = make_fixed_mask(32, 32, 2);
  const MetricRow r = evaluate_pair("x", gt, gt, &fm.mask);
  EXPECT_EQ(r.psnr, kPsnrCap);
  EXPECT_EQ(r.ssim, 1.0);
  EXPECT_EQ(*r.grid_mse, 0.0);
}

}  // namespace
}  // namespace dpi

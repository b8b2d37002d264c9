#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dpi/image.hpp"
#include "dpi/masks.hpp"

namespace dpi {

inline constexpr double kPsnrCap = 99.0;

/// PSNR in dB on the 8-bit scale (x + 1) * 127.5, luminance for colour
/// inputs; identical images report kPsnrCap.
double psnr(const Image& a, const Image& b);

/// Mean of per-channel PSNR values.
double psnr_per_channel(const Image& a, const Image& b);

/// Mean SSIM over all fully contained 11x11 Gaussian (sigma 1.5) windows of
/// the 8-bit luminance, C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2.
double ssim(const Image& a, const Image& b);

/// MSE over the set positions of `m` (all channels).
double grid_mse(const Image& sr, const Image& gt, const Mask& m);

struct MetricRow {
  std::string name;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<double> grid_mse;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  MetricRow aggregate() const;
  void write_csv(std::ostream& os) const;
  void write_text(std::ostream& os) const;
};

MetricRow evaluate_pair(std::string name, const Image& sr, const Image& gt, const Mask* grid = nullptr);

}  // namespace dpi

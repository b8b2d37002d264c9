#pragma once

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "dpi/image.hpp"
#include "dpi/masks.hpp"
#include "dpi/rng.hpp"

namespace dpi {

enum class DownsampleKind { kAverage, kBicubic };

/// I_L = {[(I_H * k_{s,sigma}) down_r + n_delta]_JPEG_q} up_r
struct DegradationConfig {
  int blur_ksize = 1;        // s, odd
  double blur_sigma = 1.0;   // sigma > 0; irrelevant when s == 1
  int scale = 1;             // r
  double noise_sigma = 0.0;  // delta, 8-bit units
  int jpeg_quality = 100;    // q in [1, 100]
  bool jpeg = true;          // false skips the JPEG stage (plain bicubic setups)
  DownsampleKind downsample = DownsampleKind::kAverage;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Called after every pipeline stage with the stage name and its output.
using StageObserver = std::function<void(std::string_view stage, const Image& out)>;

/// Normalized, sampled 1-D Gaussian of odd length `size`.
std::vector<double> gaussian_kernel(int size, double sigma);

/// Separable Gaussian blur with replicate padding.
Image gaussian_blur(const Image& img, int ksize, double sigma);

/// Stride-r average pooling (or plain bicubic decimation).
Image downsample(const Image& img, int r, DownsampleKind kind = DownsampleKind::kAverage);

/// Catmull-Rom (a = -0.5) bicubic resize with pixel-centre alignment and
/// replicate borders; the result is clamped to [-1, 1].
Image resize_bicubic(const Image& img, int out_height, int out_width);
Image upsample_bicubic(const Image& img, int r);

/// Additive Gaussian noise of std delta / 127.5 (delta in 8-bit units), clamped.
Image add_noise(const Image& img, double delta, RandomStream& rng);

/// Baseline-JPEG style round trip: 8-bit quantization, 8x8 orthonormal DCT,
/// IJG-scaled luminance quantization table, inverse DCT. Channels are
/// processed independently.
Image jpeg_compress(const Image& img, int quality);

/// Quantization table for `quality` (row-major 8x8).
std::vector<int> jpeg_quant_table(int quality);

/// Pipeline up to and including JPEG (low-resolution output).
Image degrade_lr(const Image& hr, const DegradationConfig& cfg, RandomStream& rng,
                 const StageObserver& observer = {});

/// Full pipeline; output has the same size as `hr`. A scale that does not
/// divide the frame reduces by bicubic resize to the rounded size.
Image degrade(const Image& hr, const DegradationConfig& cfg, RandomStream& rng,
              const StageObserver& observer = {});

/// Convenience overload drawing from the stream keyed by cfg.seed.
Image degrade(const Image& hr, const DegradationConfig& cfg);

/// Samples (r, s, sigma, q, delta) from {8:16}, {1:17} (odd), {3:20},
/// {40:50}, {30:90}.
DegradationConfig sample_severe_config(RandomStream& rng);

/// Bicubic-upsamples an LR image to the grid resolution (H/k, W/k) and
/// projects it onto m_f, giving y_T.
Condition make_initial_condition(const Image& lr, const FixedMask& fm);

}  // namespace dpi

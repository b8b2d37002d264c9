#include "dpi/degradation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "dpi/error.hpp"

namespace dpi {

namespace {

constexpr const char* kModule = "degradation";

constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Tap {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

std::vector<Tap> resize_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    double sum = 0.0;
    for (int k = 0; k < 4; ++k) {
      taps[o].index[k] = std::clamp(base - 1 + k, 0, in - 1);
      taps[o].weight[k] = cubic_weight(frac - (k - 1));
      sum += taps[o].weight[k];
    }
    for (double& w : taps[o].weight) w /= sum;
  }
  return taps;
}

// 8x8 orthonormal DCT-II basis, row u: C(u) cos((2x + 1) u pi / 16).
const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x) b[u * 8 + x] = cu * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    }
    return b;
  }();
  return basis;
}

void jpeg_block(std::array<double, 64>& block, const std::vector<int>& table) {
  const auto& b = dct_basis();
  std::array<double, 64> tmp{}, coef{};
  // coef = B * block * B^T
  for (int u = 0; u < 8; ++u) {
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y) acc += b[u * 8 + y] * block[y * 8 + x];
      tmp[u * 8 + x] = acc;
    }
  }
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int x = 0; x < 8; ++x) acc += tmp[u * 8 + x] * b[v * 8 + x];
      const double q = table[u * 8 + v];
      coef[u * 8 + v] = std::round(acc / q) * q;
    }
  }
  // block = B^T * coef * B
  for (int y = 0; y < 8; ++y) {
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u) acc += b[u * 8 + y] * coef[u * 8 + v];
      tmp[y * 8 + v] = acc;
    }
  }
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int v = 0; v < 8; ++v) acc += tmp[y * 8 + v] * b[v * 8 + x];
      block[y * 8 + x] = acc;
    }
  }
}

}  // namespace

void DegradationConfig::validate() const {
  if (blur_ksize < 1 || blur_ksize % 2 == 0) throw ParameterError(kModule, "blur kernel size must be odd");
  if (!(blur_sigma > 0.0)) throw ParameterError(kModule, "blur sigma must be > 0");
  if (scale < 1) throw ParameterError(kModule, "scale must be >= 1");
  if (noise_sigma < 0.0) throw ParameterError(kModule, "noise sigma must be >= 0");
  if (jpeg_quality < 1 || jpeg_quality > 100) throw ParameterError(kModule, "JPEG quality must lie in [1, 100]");
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ParameterError(kModule, "blur kernel size must be odd");
  if (!(sigma > 0.0)) throw ParameterError(kModule, "blur sigma must be > 0");
  std::vector<double> k(static_cast<std::size_t>(size));
  const int half = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - half;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

Image gaussian_blur(const Image& img, int ksize, double sigma) {
  const std::vector<double> k = gaussian_kernel(ksize, sigma);
  if (ksize == 1) return img;
  const int half = ksize / 2;
  const int h = img.height(), w = img.width();
  Image tmp(img.shape()), out(img.shape());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < ksize; ++i) acc += k[i] * img.at(c, y, std::clamp(x + i - half, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int i = 0; i < ksize; ++i) acc += k[i] * tmp.at(c, std::clamp(y + i - half, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

Image downsample(const Image& img, int r, DownsampleKind kind) {
  if (r < 1 || img.height() % r != 0 || img.width() % r != 0) {
    throw ParameterError(kModule, "scale " + std::to_string(r) + " does not divide " + img.shape().str());
  }
  if (r == 1) return img;
  if (kind == DownsampleKind::kBicubic) return resize_bicubic(img, img.height() / r, img.width() / r);
  Image out(img.height() / r, img.width() / r, img.channels());
  const double inv = 1.0 / (r * r);
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) {
        double acc = 0.0;
        for (int dy = 0; dy < r; ++dy) {
          for (int dx = 0; dx < r; ++dx) acc += img.at(c, y * r + dy, x * r + dx);
        }
        out.at(c, y, x) = acc * inv;
      }
    }
  }
  return out;
}

Image resize_bicubic(const Image& img, int out_height, int out_width) {
  if (out_height < 1 || out_width < 1) throw ParameterError(kModule, "resize target must be positive");
  if (out_height == img.height() && out_width == img.width()) return img.clamped();
  const auto row_taps = resize_taps(img.width(), out_width);
  const auto col_taps = resize_taps(img.height(), out_height);
  Image tmp(img.height(), out_width, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < out_width; ++x) {
        const Tap& tp = row_taps[x];
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.weight[k] * img.at(c, y, tp.index[k]);
        tmp.at(c, y, x) = acc;
      }
    }
  }
  Image out(out_height, out_width, img.channels());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < out_height; ++y) {
      const Tap& tp = col_taps[y];
      for (int x = 0; x < out_width; ++x) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tp.weight[k] * tmp.at(c, tp.index[k], x);
        out.at(c, y, x) = std::clamp(acc, -1.0, 1.0);
      }
    }
  }
  return out;
}

Image upsample_bicubic(const Image& img, int r) {
  if (r < 1) throw ParameterError(kModule, "scale must be >= 1");
  if (r == 1) return img;
  return resize_bicubic(img, img.height() * r, img.width() * r);
}

Image add_noise(const Image& img, double delta, RandomStream& rng) {
  if (delta < 0.0) throw ParameterError(kModule, "noise sigma must be >= 0");
  if (delta == 0.0) return img;
  const double sd = delta / 127.5;
  Image out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::clamp(img[i] + sd * rng.gaussian(), -1.0, 1.0);
  return out;
}

std::vector<int> jpeg_quant_table(int quality) {
  if (quality < 1 || quality > 100) throw ParameterError(kModule, "JPEG quality must lie in [1, 100]");
  const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  std::vector<int> table(64);
  for (int i = 0; i < 64; ++i) table[i] = std::clamp((kLuminanceTable[i] * scale + 50) / 100, 1, 255);
  return table;
}

Image jpeg_compress(const Image& img, int quality) {
  const std::vector<int> table = jpeg_quant_table(quality);
  const int h = img.height(), w = img.width();
  const int ph = (h + 7) / 8 * 8, pw = (w + 7) / 8 * 8;
  Image out(img.shape());
  std::array<double, 64> block{};
  for (int c = 0; c < img.channels(); ++c) {
    for (int by = 0; by < ph; by += 8) {
      for (int bx = 0; bx < pw; bx += 8) {
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            const double v = img.at(c, std::min(by + y, h - 1), std::min(bx + x, w - 1));
            block[y * 8 + x] = std::round(std::clamp((v + 1.0) * 127.5, 0.0, 255.0)) - 128.0;
          }
        }
        jpeg_block(block, table);
        for (int y = 0; y < 8 && by + y < h; ++y) {
          for (int x = 0; x < 8 && bx + x < w; ++x) {
            const double p = std::clamp(std::round(block[y * 8 + x] + 128.0), 0.0, 255.0);
            out.at(c, by + y, bx + x) = p / 127.5 - 1.0;
          }
        }
      }
    }
  }
  return out;
}

Image degrade_lr(const Image& hr, const DegradationConfig& cfg, RandomStream& rng,
                 const StageObserver& observer) {
  cfg.validate();
  auto notify = [&](std::string_view stage, const Image& img) {
    if (observer) observer(stage, img);
  };
  Image x = gaussian_blur(hr, cfg.blur_ksize, cfg.blur_sigma);
  notify("blur", x);
  if (hr.height() % cfg.scale == 0 && hr.width() % cfg.scale == 0) {
    x = downsample(x, cfg.scale, cfg.downsample);
  } else {
    // Scales that do not divide the frame (severe-range draws) fall back to a
    // bicubic resize to the rounded size.
    const auto reduced = [&](int n) { return std::max(1, static_cast<int>(std::lround(double(n) / cfg.scale))); };
    x = resize_bicubic(x, reduced(hr.height()), reduced(hr.width()));
  }
  notify("downsample", x);
  x = add_noise(x, cfg.noise_sigma, rng);
  notify("noise", x);
  if (cfg.jpeg) {
    x = jpeg_compress(x, cfg.jpeg_quality);
    notify("jpeg", x);
  }
  return x;
}

Image degrade(const Image& hr, const DegradationConfig& cfg, RandomStream& rng, const StageObserver& observer) {
  Image lr = degrade_lr(hr, cfg, rng, observer);
  Image out = resize_bicubic(lr, hr.height(), hr.width());
  if (observer) observer("upsample", out);
  return out;
}

Image degrade(const Image& hr, const DegradationConfig& cfg) {
  RandomStream rng(cfg.seed, stream_id(StreamTag::kDegradation));
  return degrade(hr, cfg, rng);
}

DegradationConfig sample_severe_config(RandomStream& rng) {
  DegradationConfig cfg;
  cfg.scale = rng.uniform_int(8, 16);
  cfg.blur_ksize = 2 * rng.uniform_int(0, 8) + 1;
  cfg.blur_sigma = 3.0 + 17.0 * rng.uniform();
  cfg.jpeg_quality = rng.uniform_int(40, 50);
  cfg.noise_sigma = 30.0 + 60.0 * rng.uniform();
  cfg.jpeg = true;
  return cfg;
}

Condition make_initial_condition(const Image& lr, const FixedMask& fm) {
  const Image base = resize_bicubic(lr, fm.grid_height(), fm.grid_width());
  return project_initial_condition(base, fm);
}

}  // namespace dpi

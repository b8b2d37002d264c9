#include "dpi/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dpi/error.hpp"

namespace dpi {

namespace {
constexpr const char* kModule = "condition_masks";
}

Mask::Mask(int height, int width, bool fill)
    : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  if (height < 1 || width < 1) throw ParameterError(kModule, "mask dimensions must be positive");
}

std::size_t Mask::popcount() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool Mask::subset_of(const Mask& other) const {
  if (height_ != other.height_ || width_ != other.width_) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] && !other.bits_[i]) return false;
  }
  return true;
}

FixedMask make_fixed_mask(int height, int width, int stride) {
  if (stride < 1) throw ParameterError(kModule, "stride k must be >= 1");
  if (height < 1 || width < 1) throw ParameterError(kModule, "mask dimensions must be positive");
  if (height % stride != 0 || width % stride != 0) {
    throw ParameterError(kModule, "stride " + std::to_string(stride) + " does not divide " +
                                      std::to_string(height) + "x" + std::to_string(width));
  }
  FixedMask fm{Mask(height, width), stride};
  for (int y = 0; y < height; y += stride) {
    for (int x = 0; x < width; x += stride) fm.mask.set(y, x, true);
  }
  return fm;
}

Condition project_initial_condition(const Image& base_condition, const FixedMask& fm) {
  const int k = fm.stride;
  if (base_condition.height() != fm.grid_height() || base_condition.width() != fm.grid_width()) {
    throw ParameterError(kModule, "base condition " + base_condition.shape().str() +
                                      " does not match grid " + std::to_string(fm.grid_height()) + "x" +
                                      std::to_string(fm.grid_width()));
  }
  Condition y{Image(fm.mask.height(), fm.mask.width(), base_condition.channels()), ConditionRole::kInitial};
  for (int c = 0; c < base_condition.channels(); ++c) {
    for (int i = 0; i < fm.grid_height(); ++i) {
      for (int j = 0; j < fm.grid_width(); ++j) y.values.at(c, i * k, j * k) = base_condition.at(c, i, j);
    }
  }
  return y;
}

Image backtrack(const Image& y, int stride) {
  if (stride < 1 || y.height() % stride != 0 || y.width() % stride != 0) {
    throw ParameterError(kModule, "stride does not divide condition size " + y.shape().str());
  }
  Image out(y.height() / stride, y.width() / stride, y.channels());
  for (int c = 0; c < y.channels(); ++c) {
    for (int i = 0; i < out.height(); ++i) {
      for (int j = 0; j < out.width(); ++j) out.at(c, i, j) = y.at(c, i * stride, j * stride);
    }
  }
  return out;
}

Image laplacian_magnitude(const Image& y_b) {
  const Image lum = y_b.luminance();
  const int h = lum.height(), w = lum.width();
  auto px = [&](int i, int j) { return lum.at(0, std::clamp(i, 0, h - 1), std::clamp(j, 0, w - 1)); };
  Image out(h, w, 1);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double lap = px(i - 1, j) + px(i + 1, j) + px(i, j - 1) + px(i, j + 1) - 4.0 * px(i, j);
      out.at(0, i, j) = std::abs(lap);
    }
  }
  return out;
}

ProbabilityMap edge_probability_map(const Image& y_b) {
  const Image lap = laplacian_magnitude(y_b);
  ProbabilityMap pm{lap.height(), lap.width(), std::vector<double>(lap.size(), 0.0)};
  const double lo = lap.min(), hi = lap.max();
  if (hi > lo) {
    for (std::size_t i = 0; i < lap.size(); ++i) pm.p[i] = (lap[i] - lo) / (hi - lo);
  }
  return pm;
}

AdaptiveMask mask_from_probability(const ProbabilityMap& p, const FixedMask& fm, double s,
                                   RandomStream& rng) {
  if (!(s > 0.0)) throw ParameterError(kModule, "probability exponent s must be > 0");
  if (p.height != fm.grid_height() || p.width != fm.grid_width()) {
    throw ParameterError(kModule, "probability map does not match the grid");
  }
  AdaptiveMask am{Mask(fm.mask.height(), fm.mask.width()), rng.seed(), rng.stream()};
  const int k = fm.stride;
  for (int i = 0; i < p.height; ++i) {
    for (int j = 0; j < p.width; ++j) {
      const double prob = std::pow(p.at(i, j), s);
      if (rng.uniform() < prob) am.mask.set(i * k, j * k, true);
    }
  }
  return am;
}

AdaptiveMask mask_gen(const Condition& y_t, const FixedMask& fm, double s, RandomStream& rng) {
  const Image y_b = backtrack(y_t.values, fm.stride);
  return mask_from_probability(edge_probability_map(y_b), fm, s, rng);
}

Image apply_mask(const Image& img, const Mask& m) {
  if (img.height() != m.height() || img.width() != m.width()) {
    throw ParameterError(kModule, "mask size does not match image " + img.shape().str());
  }
  Image out = img;
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        if (!m.at(y, x)) out.at(c, y, x) = 0.0;
      }
    }
  }
  return out;
}

}  // namespace dpi

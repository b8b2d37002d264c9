#pragma once

#include <cstdint>
#include <vector>

#include "dpi/image.hpp"
#include "dpi/rng.hpp"

namespace dpi {

/// Binary single-channel H x W mask; broadcast across image channels.
class Mask {
 public:
  Mask() = default;
  Mask(int height, int width, bool fill = false);

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool on) { bits_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
  std::size_t popcount() const;
  /// True when every set bit of *this is also set in `other`.
  bool subset_of(const Mask& other) const;

  bool operator==(const Mask&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// Grid mask m_f: (i, j) set iff i mod k == 0 and j mod k == 0.
struct FixedMask {
  Mask mask;
  int stride = 1;

  int grid_height() const { return mask.height() / stride; }
  int grid_width() const { return mask.width() / stride; }
};

/// Per-step Bernoulli subset of the grid, m_a.
struct AdaptiveMask {
  Mask mask;
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
};

enum class ConditionRole { kInitial, kIntermediate };

/// Full-resolution condition, supported on the grid of m_f.
struct Condition {
  Image values;
  ConditionRole role = ConditionRole::kInitial;
};

/// Reduced-resolution (H/k x W/k) probabilities in [0, 1].
struct ProbabilityMap {
  int height = 0;
  int width = 0;
  std::vector<double> p;

  double at(int y, int x) const { return p[static_cast<std::size_t>(y) * width + x]; }
};

FixedMask make_fixed_mask(int height, int width, int stride);

/// y_T(i, j) = I_bc(i / k, j / k) on the grid, 0 elsewhere.
Condition project_initial_condition(const Image& base_condition, const FixedMask& fm);

/// y_b(i, j) = y(k i, k j).
Image backtrack(const Image& y, int stride);

/// |4-neighbour Laplacian| of the luminance, replicate-padded borders.
Image laplacian_magnitude(const Image& y_b);

/// Min-max normalized Laplacian magnitude; a flat response gives p == 0.
ProbabilityMap edge_probability_map(const Image& y_b);

/// Draws one Bernoulli(p^s) per grid position, consuming exactly one uniform
/// per grid position in row-major order.
AdaptiveMask mask_from_probability(const ProbabilityMap& p, const FixedMask& fm, double s,
                                   RandomStream& rng);

/// Mask_gen(y_t, s): backtrack, edge probability map, Bernoulli draw.
AdaptiveMask mask_gen(const Condition& y_t, const FixedMask& fm, double s, RandomStream& rng);

/// m ⊙ img, broadcast over channels.
Image apply_mask(const Image& img, const Mask& m);

}  // namespace dpi

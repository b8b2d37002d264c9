#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "dpi/image.hpp"

namespace dpi {

/// Philox4x32-10 block function (Salmon et al., "Parallel random numbers:
/// as easy as 1, 2, 3"). Stateless: output depends only on (key, counter).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                            std::array<std::uint32_t, 2> key);

/// Identifies who consumes a stream so that two consumers never share one.
enum class StreamTag : std::uint32_t {
  kGeneric = 0,
  kInitialNoise = 1,
  kStepNoise = 2,
  kAdaptiveMask = 3,
  kDegradation = 4,
  kTraining = 5,
  kDataset = 6,
  kShuffle = 7,
};

/// Stream id for `tag` at position `index` (a timestep, image index, ...).
constexpr std::uint64_t stream_id(StreamTag tag, std::uint64_t index = 0) {
  return (static_cast<std::uint64_t>(tag) << 48) ^ index;
}

/// Sequential view over the Philox counter space of one (seed, stream) pair.
/// Two streams with the same seed and different ids are independent; the
/// same (seed, stream) always reproduces the same sequence.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);

  std::uint32_t next_u32();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double gaussian();
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi);

  Image gaussian_image(Shape shape);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int used_ = 4;
  std::optional<double> spare_;
};

}  // namespace dpi

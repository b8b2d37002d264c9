#pragma once

#include <cstdint>
#include <vector>

#include "dpi/image.hpp"

namespace dpi {

/// Face-like grayscale image: an elliptical head on a shaded background with
/// two eyes, brows, a nose and a mouth, all with randomized geometry and
/// intensity. Edges are anti-aliased. Deterministic in (seed, index).
Image make_toy_face(std::uint64_t seed, std::uint64_t index, int size = 32);

/// Faces for indices first, first + 1, ..., first + count - 1.
std::vector<Image> make_toy_faces(std::size_t count, std::uint64_t seed, int size = 32,
                                  std::uint64_t first = 0);

/// Pixelwise independent Gaussian data law.
struct GaussianToy {
  Image mu0;
  Image var0;
};

/// mu0 uniform in [-0.5, 0.5], var0 uniform in [0.05, 0.5] per pixel.
GaussianToy make_gaussian_toy(Shape shape, std::uint64_t seed);

std::vector<Image> sample_gaussian_toy(const GaussianToy& law, std::size_t count, std::uint64_t seed);

}  // namespace dpi

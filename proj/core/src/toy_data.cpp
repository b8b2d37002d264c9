#include "dpi/toy_data.hpp"

#include <algorithm>
#include <cmath>

#include "dpi/error.hpp"
#include "dpi/rng.hpp"

namespace dpi {

namespace {

struct Ellipse {
  double cx, cy, rx, ry, value;
};

// Fractional coverage of pixel (x, y) by the ellipse, with a one-pixel ramp.
double coverage(const Ellipse& e, double x, double y) {
  const double dx = (x - e.cx) / e.rx, dy = (y - e.cy) / e.ry;
  const double r = std::sqrt(dx * dx + dy * dy);
  return std::clamp(0.5 - (r - 1.0) * std::min(e.rx, e.ry), 0.0, 1.0);
}

void paint(Image& img, const Ellipse& e) {
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const double a = coverage(e, x + 0.5, y + 0.5);
      if (a > 0.0) img.at(0, y, x) = (1.0 - a) * img.at(0, y, x) + a * e.value;
    }
  }
}

}  // namespace

Image make_toy_face(std::uint64_t seed, std::uint64_t index, int size) {
  if (size < 8) throw ParameterError("toy_data", "face size must be >= 8");
  RandomStream rng(seed, stream_id(StreamTag::kDataset, index));
  const double s = size / 32.0;
  auto u = [&](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };

  Image img(size, size, 1);
  const double bg = u(-0.9, -0.4), gx = u(-0.3, 0.3), gy = u(-0.3, 0.3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      img.at(0, y, x) = std::clamp(bg + gx * (x / double(size) - 0.5) + gy * (y / double(size) - 0.5), -1.0, 1.0);
    }
  }
  const double cx = size / 2.0 + u(-2.0, 2.0) * s, cy = size / 2.0 + u(-1.5, 2.0) * s;
  const double rx = u(9.0, 12.0) * s, ry = u(11.0, 14.0) * s;
  const double skin = u(0.1, 0.7);
  const double hair = u(-1.0, -0.3);
  paint(img, {cx, cy - ry * 0.25, rx * 1.05, ry * 0.9, hair});
  paint(img, {cx, cy, rx, ry, skin});

  const double eye_dx = rx * u(0.35, 0.45), eye_y = cy - ry * u(0.15, 0.3);
  const double eye_r = u(1.3, 2.3) * s, eye_v = u(-1.0, -0.5);
  const double brow_v = std::max(-1.0, eye_v - 0.1), brow_y = eye_y - eye_r - u(1.2, 2.2) * s;
  for (double side : {-1.0, 1.0}) {
    paint(img, {cx + side * eye_dx, eye_y, eye_r * u(1.0, 1.4), eye_r, eye_v});
    paint(img, {cx + side * eye_dx, brow_y, eye_r * 1.6, 0.7 * s, brow_v});
  }
  paint(img, {cx, cy + ry * 0.1, 0.9 * s, u(1.5, 2.5) * s, skin - u(0.2, 0.4)});
  paint(img, {cx, cy + ry * u(0.4, 0.55), u(3.0, 5.5) * s, u(0.8, 1.6) * s, u(-0.9, -0.2)});
  return img;
}

std::vector<Image> make_toy_faces(std::size_t count, std::uint64_t seed, int size, std::uint64_t first) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(make_toy_face(seed, first + i, size));
  return out;
}

GaussianToy make_gaussian_toy(Shape shape, std::uint64_t seed) {
  RandomStream rng(seed, stream_id(StreamTag::kDataset, 0));
  GaussianToy law{Image(shape), Image(shape)};
  for (std::size_t i = 0; i < law.mu0.size(); ++i) {
    law.mu0[i] = rng.uniform() - 0.5;
    law.var0[i] = 0.05 + 0.45 * rng.uniform();
  }
  return law;
}

std::vector<Image> sample_gaussian_toy(const GaussianToy& law, std::size_t count, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    RandomStream rng(seed, stream_id(StreamTag::kDataset, 1 + n));
    Image img(law.mu0.shape());
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = law.mu0[i] + std::sqrt(law.var0[i]) * rng.gaussian();
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace dpi

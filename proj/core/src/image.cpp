#include "dpi/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dpi/error.hpp"

namespace dpi {

std::string Shape::str() const {
  return std::to_string(height) + "x" + std::to_string(width) + "x" + std::to_string(channels);
}

Image::Image(Shape shape, double fill) : shape_(shape) {
  if (shape.height < 1 || shape.width < 1 || shape.channels < 1) {
    throw ParameterError("image", "invalid shape " + shape.str());
  }
  values_.assign(shape.size(), fill);
}

Image::Image(Shape shape, std::vector<double> values) : Image(shape) {
  if (values.size() != shape.size()) {
    throw ParameterError("image", "value count does not match shape " + shape.str());
  }
  values_ = std::move(values);
}

std::span<double> Image::channel(int c) {
  return std::span<double>(values_).subspan(static_cast<std::size_t>(c) * shape_.plane(), shape_.plane());
}

std::span<const double> Image::channel(int c) const {
  return std::span<const double>(values_).subspan(static_cast<std::size_t>(c) * shape_.plane(),
                                                  shape_.plane());
}

bool Image::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

double Image::min() const { return *std::min_element(values_.begin(), values_.end()); }
double Image::max() const { return *std::max_element(values_.begin(), values_.end()); }

double Image::mean() const {
  return std::accumulate(values_.begin(), values_.end(), 0.0) / static_cast<double>(values_.size());
}

Image Image::luminance() const {
  if (channels() != 3) return *this;
  Image out(height(), width(), 1);
  auto r = channel(0), g = channel(1), b = channel(2);
  for (std::size_t i = 0; i < shape_.plane(); ++i) {
    out[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  }
  return out;
}

Image Image::clamped(double lo, double hi) const {
  Image out = *this;
  for (double& v : out.values_) v = std::clamp(v, lo, hi);
  return out;
}

Image& Image::operator+=(const Image& other) {
  require_same_shape(*this, other, "image");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

Image& Image::operator-=(const Image& other) {
  require_same_shape(*this, other, "image");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
  return *this;
}

Image& Image::operator*=(double s) {
  for (double& v : values_) v *= s;
  return *this;
}

Image operator+(Image a, const Image& b) { return a += b; }
Image operator-(Image a, const Image& b) { return a -= b; }
Image operator*(double s, Image a) { return a *= s; }

void require_same_shape(const Image& a, const Image& b, const char* module) {
  if (a.shape() != b.shape()) {
    throw ParameterError(module, "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

double mean_squared_error(const Image& a, const Image& b) {
  require_same_shape(a, b, "image");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace dpi

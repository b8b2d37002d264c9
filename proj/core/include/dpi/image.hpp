#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dpi {

struct Shape {
  int height = 0;
  int width = 0;
  int channels = 1;

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return plane() * channels; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Planar (CHW) real-valued image. Clean images live in [-1, 1]; noised
/// diffusion states are unbounded.
class Image {
 public:
  Image() = default;
  explicit Image(Shape shape, double fill = 0.0);
  Image(int height, int width, int channels = 1, double fill = 0.0)
      : Image(Shape{height, width, channels}, fill) {}
  Image(Shape shape, std::vector<double> values);

  const Shape& shape() const { return shape_; }
  int height() const { return shape_.height; }
  int width() const { return shape_.width; }
  int channels() const { return shape_.channels; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  double& at(int c, int y, int x) { return values_[index(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[index(c, y, x)]; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::span<double> channel(int c);
  std::span<const double> channel(int c) const;

  bool all_finite() const;
  double min() const;
  double max() const;
  double mean() const;

  /// 0.299 R + 0.587 G + 0.114 B for three channels; a copy otherwise.
  Image luminance() const;
  Image clamped(double lo = -1.0, double hi = 1.0) const;

  Image& operator+=(const Image& other);
  Image& operator-=(const Image& other);
  Image& operator*=(double s);

  bool operator==(const Image& other) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * shape_.height + y) * shape_.width + x;
  }

  Shape shape_{};
  std::vector<double> values_;
};

Image operator+(Image a, const Image& b);
Image operator-(Image a, const Image& b);
Image operator*(double s, Image a);

/// Throws ParameterError naming `module` when the shapes differ.
void require_same_shape(const Image& a, const Image& b, const char* module);

double mean_squared_error(const Image& a, const Image& b);

}  // namespace dpi

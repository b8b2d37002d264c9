#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpi/image.hpp"

// Small convolutional building blocks with explicit backward passes. All
// arithmetic is double precision; gradients accumulate into Parameter::grad.
namespace dpi::nn {

struct Tensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t size() const { return data.size(); }
  double* channel(int c) { return data.data() + c * plane(); }
  const double* channel(int c) const { return data.data() + c * plane(); }

  static Tensor from_image(const Image& img);
  Image to_image() const;
};

struct Parameter {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
};

/// Ordered, name-addressable parameter storage. Layers refer to entries by
/// index, so copying a model copies its parameters by value.
class ParameterSet {
 public:
  std::size_t add(std::string name, std::vector<int> shape);

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);
  std::size_t scalar_count() const;
  void zero_grad();
  void scale_grad(double s);
  /// Copies values from `other`; names and shapes must match.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<Parameter> params_;
};

struct Conv2d {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Conv2d make(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride);
  Tensor forward(const ParameterSet& ps, const Tensor& in) const;
  /// Accumulates parameter gradients; writes the input gradient when `grad_in`
  /// is non-null (overwriting it).
  void backward(ParameterSet& ps, const Tensor& in, const Tensor& grad_out, Tensor* grad_in) const;
};

struct Linear {
  int in_features = 0;
  int out_features = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Linear make(ParameterSet& ps, const std::string& name, int in, int out);
  std::vector<double> forward(const ParameterSet& ps, const std::vector<double>& in) const;
  /// Returns the input gradient.
  std::vector<double> backward(ParameterSet& ps, const std::vector<double>& in,
                               const std::vector<double>& grad_out) const;
};

double silu(double x);
double silu_grad(double x);
Tensor silu(const Tensor& x);
/// grad_out * silu'(x)
Tensor silu_backward(const Tensor& x, const Tensor& grad_out);
std::vector<double> silu(const std::vector<double>& x);
std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& grad_out);

Tensor upsample_nearest2x(const Tensor& x);
Tensor upsample_nearest2x_backward(const Tensor& grad_out);
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// [sin(t f_0) .. sin(t f_{d/2-1}), cos(t f_0) .. cos(t f_{d/2-1})] with
/// f_i = 10000^(-i / (d/2)).
std::vector<double> sinusoidal_embedding(double t, int dim);

struct UNetConfig {
  int in_channels = 1;
  int out_channels = 1;
  /// Extra conditioning image channels added to the first feature map (0 = none).
  int cond_channels = 0;
  int base_width = 32;
  std::array<int, 3> width_mult{1, 2, 2};
  int time_dim = 64;

  bool operator==(const UNetConfig&) const = default;
};

/// Pre-activation residual block with per-channel time injection:
/// out = skip(x) + conv2(silu(conv1(silu(x)) + proj(silu(temb)))).
struct ResBlock {
  Conv2d conv1;
  Conv2d conv2;
  Linear time_proj;
  bool has_skip = false;
  Conv2d skip;

  static ResBlock make(ParameterSet& ps, const std::string& name, int in, int out, int temb_dim);

  struct Cache {
    Tensor x, a0, h1, a1;
  };
  Tensor forward(const ParameterSet& ps, const Tensor& x, const std::vector<double>& temb_act,
                 Cache* cache) const;
  /// Returns dL/dx and accumulates dL/d(temb_act) into grad_temb.
  Tensor backward(ParameterSet& ps, const Cache& cache, const std::vector<double>& temb_act,
                  const Tensor& grad_out, std::vector<double>& grad_temb) const;
};

/// Two-level encoder-decoder with skip connections and sinusoidal time
/// conditioning. Input height and width must be multiples of 4.
class UNet {
 public:
  UNet() = default;
  UNet(const UNetConfig& cfg, std::uint64_t seed);

  const UNetConfig& config() const { return cfg_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  struct Trace {
    std::vector<double> emb, t1, t1_act, temb, temb_act;
    Tensor x, cond, h0;
    ResBlock::Cache r0, r1, mid, up1, up0;
    Tensor r0_out, d0, r1_out, d1, mid_out, c1, q1, c0, q0, q0_act;
  };

  Tensor forward(const Tensor& x, const Tensor* cond, double t, Trace* trace = nullptr) const;
  /// Accumulates parameter gradients for dL/d(output) = grad_out.
  void backward(const Trace& trace, const Tensor& grad_out);

  /// Re-draws every parameter (including the zero-initialized output head)
  /// from N(0, scale^2 / fan_in); used by gradient checks.
  void randomize(std::uint64_t seed, double scale = 1.0);

 private:
  void init_parameters(std::uint64_t seed, bool zero_head, double scale);

  UNetConfig cfg_;
  ParameterSet params_;
  Linear time1_, time2_;
  Conv2d conv_in_, cond_in_, down0_, down1_, conv_out_;
  ResBlock res0_, res1_, mid_, up1_, up0_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(const ParameterSet& ps, AdamConfig cfg);
  void step(ParameterSet& ps);
  long steps() const { return step_; }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Exponential moving average of parameters: ema <- d ema + (1 - d) theta.
class Ema {
 public:
  Ema(const ParameterSet& ps, double decay);
  void update(const ParameterSet& ps);
  const ParameterSet& shadow() const { return shadow_; }
  double decay() const { return decay_; }

 private:
  double decay_;
  ParameterSet shadow_;
};

}  // namespace dpi::nn

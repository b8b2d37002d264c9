#include "dpi/nn.hpp"

// Always take the blocked GEMM path. The small-size coefficient product
// vectorizes with a peel that depends on buffer alignment, so its sums (and
// the training run) would vary with where the allocator put the operands.
#define EIGEN_GEMM_TO_COEFFBASED_THRESHOLD 0
#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "dpi/error.hpp"
#include "dpi/rng.hpp"

namespace dpi::nn {

namespace {

constexpr const char* kModule = "nn";

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

// dst = a * b, or dst += a * b. Single-row and single-column results skip
// Eigen's GEMV, whose vectorized dot products also peel by alignment.
template <typename A, typename B>
void product(MatrixMap dst, const A& a, const B& b, bool accumulate) {
  if (dst.rows() == 1 || dst.cols() == 1) {
    for (Eigen::Index i = 0; i < dst.rows(); ++i)
      for (Eigen::Index j = 0; j < dst.cols(); ++j) {
        double s = 0.0;
        for (Eigen::Index k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
        dst(i, j) = accumulate ? dst(i, j) + s : s;
      }
  } else if (accumulate) {
    dst.noalias() += a * b;
  } else {
    dst.noalias() = a * b;
  }
}

int conv_out_size(int in, int kernel, int stride) {
  const int pad = kernel / 2;
  return (in + 2 * pad - kernel) / stride + 1;
}

// Rows: (ci, ky, kx); columns: output pixels.
std::vector<double> im2col(const Tensor& in, int kernel, int stride, int out_h, int out_w) {
  const int pad = kernel / 2;
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  std::vector<double> col(static_cast<std::size_t>(in.channels) * kernel * kernel * cols, 0.0);
  std::size_t row = 0;
  for (int c = 0; c < in.channels; ++c) {
    const double* src = in.channel(c);
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx, ++row) {
        double* dst = col.data() + row * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < in.width) dst[oy * out_w + ox] = src[iy * in.width + ix];
          }
        }
      }
    }
  }
  return col;
}

void col2im(const std::vector<double>& col, int kernel, int stride, int out_h, int out_w, Tensor& grad_in) {
  const int pad = kernel / 2;
  const std::size_t cols = static_cast<std::size_t>(out_h) * out_w;
  std::fill(grad_in.data.begin(), grad_in.data.end(), 0.0);
  std::size_t row = 0;
  for (int c = 0; c < grad_in.channels; ++c) {
    double* dst = grad_in.channel(c);
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx, ++row) {
        const double* src = col.data() + row * cols;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= grad_in.height) continue;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < grad_in.width) dst[iy * grad_in.width + ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

void add_inplace(Tensor& a, const Tensor& b) {
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  Tensor out(count, t.height, t.width);
  std::copy(t.channel(begin), t.channel(begin) + count * t.plane(), out.data.begin());
  return out;
}

}  // namespace

Tensor Tensor::from_image(const Image& img) {
  Tensor t(img.channels(), img.height(), img.width());
  std::copy(img.values().begin(), img.values().end(), t.data.begin());
  return t;
}

Image Tensor::to_image() const { return Image(Shape{height, width, channels}, data); }

std::size_t ParameterSet::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  params_.push_back(Parameter{std::move(name), std::move(shape), std::vector<double>(n, 0.0),
                              std::vector<double>(n, 0.0)});
  return params_.size() - 1;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

void ParameterSet::scale_grad(double s) {
  for (auto& p : params_) {
    for (double& g : p.grad) g *= s;
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.size() != size()) throw ParameterError(kModule, "parameter sets differ in size");
  for (std::size_t i = 0; i < size(); ++i) {
    if (params_[i].name != other[i].name || params_[i].shape != other[i].shape) {
      throw ParameterError(kModule, "parameter mismatch at " + params_[i].name);
    }
    params_[i].value = other[i].value;
  }
}

Conv2d Conv2d::make(ParameterSet& ps, const std::string& name, int in, int out, int kernel, int stride) {
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.weight = ps.add(name + ".weight", {out, in, kernel, kernel});
  c.bias = ps.add(name + ".bias", {out});
  return c;
}

Tensor Conv2d::forward(const ParameterSet& ps, const Tensor& in) const {
  if (in.channels != in_channels) {
    throw ParameterError(kModule, "conv expects " + std::to_string(in_channels) + " channels, got " +
                                      std::to_string(in.channels));
  }
  const int oh = conv_out_size(in.height, kernel, stride);
  const int ow = conv_out_size(in.width, kernel, stride);
  const int rows = in_channels * kernel * kernel;
  const int cols = oh * ow;
  Tensor out(out_channels, oh, ow);
  MatrixMap y(out.data.data(), out_channels, cols);
  ConstMatrixMap w(ps[weight].value.data(), out_channels, rows);
  if (kernel == 1 && stride == 1) {
    product(y, w, ConstMatrixMap(in.data.data(), rows, cols), false);
  } else {
    const std::vector<double> col = im2col(in, kernel, stride, oh, ow);
    product(y, w, ConstMatrixMap(col.data(), rows, cols), false);
  }
  const auto& b = ps[bias].value;
  for (int c = 0; c < out_channels; ++c) y.row(c).array() += b[c];
  return out;
}

void Conv2d::backward(ParameterSet& ps, const Tensor& in, const Tensor& grad_out, Tensor* grad_in) const {
  const int oh = grad_out.height, ow = grad_out.width;
  const int rows = in_channels * kernel * kernel;
  const int cols = oh * ow;
  ConstMatrixMap g(grad_out.data.data(), out_channels, cols);
  MatrixMap dw(ps[weight].grad.data(), out_channels, rows);
  auto& db = ps[bias].grad;
  for (int c = 0; c < out_channels; ++c) {
    const double* row = grad_out.data.data() + static_cast<std::size_t>(c) * cols;
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) sum += row[j];
    db[c] += sum;
  }

  const bool direct = kernel == 1 && stride == 1;
  std::vector<double> col;
  if (!direct) col = im2col(in, kernel, stride, oh, ow);
  ConstMatrixMap x(direct ? in.data.data() : col.data(), rows, cols);
  product(dw, g, x.transpose(), true);

  if (grad_in) {
    *grad_in = Tensor(in.channels, in.height, in.width);
    ConstMatrixMap w(ps[weight].value.data(), out_channels, rows);
    if (direct) {
      product(MatrixMap(grad_in->data.data(), rows, cols), w.transpose(), g, false);
    } else {
      std::vector<double> dcol(static_cast<std::size_t>(rows) * cols);
      product(MatrixMap(dcol.data(), rows, cols), w.transpose(), g, false);
      col2im(dcol, kernel, stride, oh, ow, *grad_in);
    }
  }
}

Linear Linear::make(ParameterSet& ps, const std::string& name, int in, int out) {
  Linear l;
  l.in_features = in;
  l.out_features = out;
  l.weight = ps.add(name + ".weight", {out, in});
  l.bias = ps.add(name + ".bias", {out});
  return l;
}

std::vector<double> Linear::forward(const ParameterSet& ps, const std::vector<double>& in) const {
  const auto& w = ps[weight].value;
  std::vector<double> out = ps[bias].value;
  for (int o = 0; o < out_features; ++o) {
    const double* row = w.data() + static_cast<std::size_t>(o) * in_features;
    double acc = 0.0;
    for (int i = 0; i < in_features; ++i) acc += row[i] * in[i];
    out[o] += acc;
  }
  return out;
}

std::vector<double> Linear::backward(ParameterSet& ps, const std::vector<double>& in,
                                     const std::vector<double>& grad_out) const {
  const auto& w = ps[weight].value;
  auto& dw = ps[weight].grad;
  auto& db = ps[bias].grad;
  std::vector<double> grad_in(in_features, 0.0);
  for (int o = 0; o < out_features; ++o) {
    const double g = grad_out[o];
    db[o] += g;
    const std::size_t off = static_cast<std::size_t>(o) * in_features;
    for (int i = 0; i < in_features; ++i) {
      dw[off + i] += g * in[i];
      grad_in[i] += g * w[off + i];
    }
  }
  return grad_in;
}

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Tensor silu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.data) v = silu(v);
  return out;
}

Tensor silu_backward(const Tensor& x, const Tensor& grad_out) {
  Tensor out = grad_out;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= silu_grad(x.data[i]);
  return out;
}

std::vector<double> silu(const std::vector<double>& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = silu(x[i]);
  return out;
}

std::vector<double> silu_backward(const std::vector<double>& x, const std::vector<double>& grad_out) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = grad_out[i] * silu_grad(x[i]);
  return out;
}

Tensor upsample_nearest2x(const Tensor& x) {
  Tensor out(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c) {
    const double* src = x.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < out.height; ++y) {
      for (int xx = 0; xx < out.width; ++xx) dst[y * out.width + xx] = src[(y / 2) * x.width + xx / 2];
    }
  }
  return out;
}

Tensor upsample_nearest2x_backward(const Tensor& grad_out) {
  Tensor out(grad_out.channels, grad_out.height / 2, grad_out.width / 2);
  for (int c = 0; c < grad_out.channels; ++c) {
    const double* src = grad_out.channel(c);
    double* dst = out.channel(c);
    for (int y = 0; y < grad_out.height; ++y) {
      for (int x = 0; x < grad_out.width; ++x) dst[(y / 2) * out.width + x / 2] += src[y * grad_out.width + x];
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  Tensor out(a.channels + b.channels, a.height, a.width);
  std::copy(a.data.begin(), a.data.end(), out.data.begin());
  std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

std::vector<double> sinusoidal_embedding(double t, int dim) {
  const int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(dim), 0.0);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    out[i] = std::sin(t * freq);
    out[i + half] = std::cos(t * freq);
  }
  return out;
}

ResBlock ResBlock::make(ParameterSet& ps, const std::string& name, int in, int out, int temb_dim) {
  ResBlock b;
  b.conv1 = Conv2d::make(ps, name + ".conv1", in, out, 3, 1);
  b.time_proj = Linear::make(ps, name + ".time", temb_dim, out);
  b.conv2 = Conv2d::make(ps, name + ".conv2", out, out, 3, 1);
  b.has_skip = in != out;
  if (b.has_skip) b.skip = Conv2d::make(ps, name + ".skip", in, out, 1, 1);
  return b;
}

Tensor ResBlock::forward(const ParameterSet& ps, const Tensor& x, const std::vector<double>& temb_act,
                         Cache* cache) const {
  Tensor a0 = silu(x);
  Tensor h1 = conv1.forward(ps, a0);
  const std::vector<double> shift = time_proj.forward(ps, temb_act);
  for (int c = 0; c < h1.channels; ++c) {
    double* p = h1.channel(c);
    for (std::size_t i = 0; i < h1.plane(); ++i) p[i] += shift[c];
  }
  Tensor a1 = silu(h1);
  Tensor out = conv2.forward(ps, a1);
  if (has_skip) {
    add_inplace(out, skip.forward(ps, x));
  } else {
    add_inplace(out, x);
  }
  if (cache) {
    cache->x = x;
    cache->a0 = std::move(a0);
    cache->h1 = std::move(h1);
    cache->a1 = std::move(a1);
  }
  return out;
}

Tensor ResBlock::backward(ParameterSet& ps, const Cache& cache, const std::vector<double>& temb_act,
                          const Tensor& grad_out, std::vector<double>& grad_temb) const {
  Tensor da1;
  conv2.backward(ps, cache.a1, grad_out, &da1);
  const Tensor dh1 = silu_backward(cache.h1, da1);
  std::vector<double> dshift(static_cast<std::size_t>(dh1.channels), 0.0);
  for (int c = 0; c < dh1.channels; ++c) {
    const double* p = dh1.channel(c);
    for (std::size_t i = 0; i < dh1.plane(); ++i) dshift[c] += p[i];
  }
  const std::vector<double> dt = time_proj.backward(ps, temb_act, dshift);
  for (std::size_t i = 0; i < dt.size(); ++i) grad_temb[i] += dt[i];
  Tensor da0;
  conv1.backward(ps, cache.a0, dh1, &da0);
  Tensor dx = silu_backward(cache.x, da0);
  if (has_skip) {
    Tensor ds;
    skip.backward(ps, cache.x, grad_out, &ds);
    add_inplace(dx, ds);
  } else {
    add_inplace(dx, grad_out);
  }
  return dx;
}

UNet::UNet(const UNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.in_channels < 1 || cfg.out_channels < 1 || cfg.base_width < 1 || cfg.time_dim < 2 ||
      cfg.time_dim % 2 != 0 || cfg.cond_channels < 0) {
    throw ParameterError(kModule, "invalid network configuration");
  }
  const int c0 = cfg.base_width * cfg.width_mult[0];
  const int c1 = cfg.base_width * cfg.width_mult[1];
  const int c2 = cfg.base_width * cfg.width_mult[2];
  const int temb = 4 * cfg.base_width;

  time1_ = Linear::make(params_, "time.fc1", cfg.time_dim, temb);
  time2_ = Linear::make(params_, "time.fc2", temb, temb);
  conv_in_ = Conv2d::make(params_, "conv_in", cfg.in_channels, c0, 3, 1);
  if (cfg.cond_channels > 0) cond_in_ = Conv2d::make(params_, "cond_in", cfg.cond_channels, c0, 3, 1);
  res0_ = ResBlock::make(params_, "enc0", c0, c0, temb);
  down0_ = Conv2d::make(params_, "down0", c0, c0, 3, 2);
  res1_ = ResBlock::make(params_, "enc1", c0, c1, temb);
  down1_ = Conv2d::make(params_, "down1", c1, c1, 3, 2);
  mid_ = ResBlock::make(params_, "mid", c1, c2, temb);
  up1_ = ResBlock::make(params_, "dec1", c2 + c1, c1, temb);
  up0_ = ResBlock::make(params_, "dec0", c1 + c0, c0, temb);
  conv_out_ = Conv2d::make(params_, "conv_out", c0, cfg.out_channels, 3, 1);
  init_parameters(seed, /*zero_head=*/true, 1.0);
}

void UNet::init_parameters(std::uint64_t seed, bool zero_head, double scale) {
  RandomStream rng(seed, stream_id(StreamTag::kTraining, 0xB17));
  for (auto& p : params_) {
    const bool is_bias = p.shape.size() == 1;
    const bool is_head = p.name.rfind("conv_out", 0) == 0;
    if (zero_head && is_head) {
      std::fill(p.value.begin(), p.value.end(), 0.0);
      continue;
    }
    if (is_bias) {
      for (double& v : p.value) v = zero_head ? 0.0 : 0.1 * scale * rng.gaussian();
      continue;
    }
    int fan_in = 1;
    for (std::size_t d = 1; d < p.shape.size(); ++d) fan_in *= p.shape[d];
    const double sd = scale / std::sqrt(static_cast<double>(fan_in));
    for (double& v : p.value) v = sd * rng.gaussian();
  }
}

void UNet::randomize(std::uint64_t seed, double scale) { init_parameters(seed, false, scale); }

Tensor UNet::forward(const Tensor& x, const Tensor* cond, double t, Trace* trace) const {
  if (x.height % 4 != 0 || x.width % 4 != 0) {
    throw ParameterError(kModule, "network input height and width must be multiples of 4");
  }
  if ((cfg_.cond_channels > 0) != (cond != nullptr)) {
    throw ParameterError(kModule, "conditioning input presence does not match configuration");
  }
  const auto& ps = params_;
  Trace local;
  Trace& tr = trace ? *trace : local;
  const bool keep = trace != nullptr;

  tr.emb = sinusoidal_embedding(t, cfg_.time_dim);
  tr.t1 = time1_.forward(ps, tr.emb);
  tr.t1_act = silu(tr.t1);
  tr.temb = time2_.forward(ps, tr.t1_act);
  tr.temb_act = silu(tr.temb);
  const auto& te = tr.temb_act;

  Tensor h0 = conv_in_.forward(ps, x);
  if (cond) add_inplace(h0, cond_in_.forward(ps, *cond));
  Tensor r0 = res0_.forward(ps, h0, te, keep ? &tr.r0 : nullptr);
  Tensor d0 = down0_.forward(ps, r0);
  Tensor r1 = res1_.forward(ps, d0, te, keep ? &tr.r1 : nullptr);
  Tensor d1 = down1_.forward(ps, r1);
  Tensor mid = mid_.forward(ps, d1, te, keep ? &tr.mid : nullptr);
  Tensor c1 = concat_channels(upsample_nearest2x(mid), r1);
  Tensor q1 = up1_.forward(ps, c1, te, keep ? &tr.up1 : nullptr);
  Tensor c0 = concat_channels(upsample_nearest2x(q1), r0);
  Tensor q0 = up0_.forward(ps, c0, te, keep ? &tr.up0 : nullptr);
  Tensor q0_act = silu(q0);
  Tensor out = conv_out_.forward(ps, q0_act);

  if (keep) {
    tr.x = x;
    if (cond) tr.cond = *cond;
    tr.h0 = std::move(h0);
    tr.r0_out = std::move(r0);
    tr.d0 = std::move(d0);
    tr.r1_out = std::move(r1);
    tr.d1 = std::move(d1);
    tr.mid_out = std::move(mid);
    tr.c1 = std::move(c1);
    tr.q1 = std::move(q1);
    tr.c0 = std::move(c0);
    tr.q0 = std::move(q0);
    tr.q0_act = std::move(q0_act);
  }
  return out;
}

void UNet::backward(const Trace& tr, const Tensor& grad_out) {
  auto& ps = params_;
  const auto& te = tr.temb_act;
  std::vector<double> gtemb(te.size(), 0.0);

  Tensor dq0_act;
  conv_out_.backward(ps, tr.q0_act, grad_out, &dq0_act);
  const Tensor dq0 = silu_backward(tr.q0, dq0_act);
  const Tensor dc0 = up0_.backward(ps, tr.up0, te, dq0, gtemb);
  const int cq1 = tr.q1.channels;
  const Tensor dq1 = upsample_nearest2x_backward(slice_channels(dc0, 0, cq1));
  Tensor dr0 = slice_channels(dc0, cq1, dc0.channels - cq1);

  const Tensor dc1 = up1_.backward(ps, tr.up1, te, dq1, gtemb);
  const int cmid = tr.mid_out.channels;
  const Tensor dmid = upsample_nearest2x_backward(slice_channels(dc1, 0, cmid));
  Tensor dr1 = slice_channels(dc1, cmid, dc1.channels - cmid);

  const Tensor dd1 = mid_.backward(ps, tr.mid, te, dmid, gtemb);
  Tensor dr1_down;
  down1_.backward(ps, tr.r1_out, dd1, &dr1_down);
  add_inplace(dr1, dr1_down);
  const Tensor dd0 = res1_.backward(ps, tr.r1, te, dr1, gtemb);
  Tensor dr0_down;
  down0_.backward(ps, tr.r0_out, dd0, &dr0_down);
  add_inplace(dr0, dr0_down);
  const Tensor dh0 = res0_.backward(ps, tr.r0, te, dr0, gtemb);
  conv_in_.backward(ps, tr.x, dh0, nullptr);
  if (cfg_.cond_channels > 0) cond_in_.backward(ps, tr.cond, dh0, nullptr);

  const std::vector<double> dtemb = silu_backward(tr.temb, gtemb);
  const std::vector<double> dt1_act = time2_.backward(ps, tr.t1_act, dtemb);
  const std::vector<double> dt1 = silu_backward(tr.t1, dt1_act);
  time1_.backward(ps, tr.emb, dt1);
}

Adam::Adam(const ParameterSet& ps, AdamConfig cfg) : cfg_(cfg) {
  for (const auto& p : ps) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

void Adam::step(ParameterSet& ps) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& p = ps[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      p.value[i] -= cfg_.learning_rate * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.epsilon);
    }
  }
}

Ema::Ema(const ParameterSet& ps, double decay) : decay_(decay), shadow_(ps) {
  if (!(decay > 0.0 && decay < 1.0)) throw ParameterError(kModule, "EMA decay must lie in (0, 1)");
}

void Ema::update(const ParameterSet& ps) {
  for (std::size_t k = 0; k < ps.size(); ++k) {
    auto& s = shadow_[k].value;
    const auto& v = ps[k].value;
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay_ * s[i] + (1.0 - decay_) * v[i];
  }
}

}  // namespace dpi::nn

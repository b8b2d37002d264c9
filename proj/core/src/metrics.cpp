#include "dpi/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "dpi/error.hpp"

namespace dpi {

namespace {

constexpr const char* kModule = "eval_metrics";
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double mse_8bit(const double* a, const double* b, std::size_t n) {
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = 127.5 * (a[i] - b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(n);
}

std::vector<double> gaussian_window() {
  std::vector<double> w(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    w[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    sum += w[i];
  }
  for (double& v : w) v /= sum;
  return w;
}

// Separable "valid" filtering of a single-channel plane.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& k) {
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * img[static_cast<std::size_t>(y) * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < kWindow; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same_shape(a, b, kModule);
  const Image la = a.luminance(), lb = b.luminance();
  return psnr_from_mse(mse_8bit(la.values().data(), lb.values().data(), la.size()));
}

double psnr_per_channel(const Image& a, const Image& b) {
  require_same_shape(a, b, kModule);
  double sum = 0.0;
  for (int c = 0; c < a.channels(); ++c) sum += psnr_from_mse(mse_8bit(a.channel(c).data(), b.channel(c).data(), a.shape().plane()));
  return sum / a.channels();
}

double ssim(const Image& a, const Image& b) {
  require_same_shape(a, b, kModule);
  if (a.height() < kWindow || a.width() < kWindow) {
    throw ParameterError(kModule, "SSIM needs at least 11x11 pixels, got " + a.shape().str());
  }
  const Image la = a.luminance(), lb = b.luminance();
  const int h = la.height(), w = la.width();
  const std::size_t n = la.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (la[i] + 1.0) * 127.5;
    y[i] = (lb[i] + 1.0) * 127.5;
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_window();
  const auto mx = filter_valid(x, h, w, k), my = filter_valid(y, h, w, k);
  const auto sxx = filter_valid(xx, h, w, k), syy = filter_valid(yy, h, w, k), sxy = filter_valid(xy, h, w, k);
  constexpr double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  constexpr double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double grid_mse(const Image& sr, const Image& gt, const Mask& m) {
  require_same_shape(sr, gt, kModule);
  if (m.height() != sr.height() || m.width() != sr.width()) {
    throw ParameterError(kModule, "mask size differs from " + sr.shape().str());
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (int c = 0; c < sr.channels(); ++c) {
    for (int y = 0; y < sr.height(); ++y) {
      for (int x = 0; x < sr.width(); ++x) {
        if (!m.at(y, x)) continue;
        const double d = sr.at(c, y, x) - gt.at(c, y, x);
        sum += d * d;
        ++count;
      }
    }
  }
  if (count == 0) throw ParameterError(kModule, "grid MSE over an empty support");
  return sum / static_cast<double>(count);
}

MetricRow evaluate_pair(std::string name, const Image& sr, const Image& gt, const Mask* grid) {
  MetricRow row{std::move(name), psnr(sr, gt), ssim(sr, gt), std::nullopt};
  if (grid) row.grid_mse = grid_mse(sr, gt, *grid);
  return row;
}

MetricRow MetricReport::aggregate() const {
  MetricRow mean{"mean", 0.0, 0.0, std::nullopt};
  if (rows.empty()) return mean;
  double g = 0.0;
  bool have_grid = true;
  for (const auto& r : rows) {
    mean.psnr += r.psnr;
    mean.ssim += r.ssim;
    if (r.grid_mse) g += *r.grid_mse;
    else have_grid = false;
  }
  const double n = static_cast<double>(rows.size());
  mean.psnr /= n;
  mean.ssim /= n;
  if (have_grid) mean.grid_mse = g / n;
  return mean;
}

void MetricReport::write_csv(std::ostream& os) const {
  os << "name,psnr,ssim,grid_mse\n" << std::setprecision(17);
  auto emit = [&](const MetricRow& r) {
    os << r.name << ',' << r.psnr << ',' << r.ssim << ',';
    if (r.grid_mse) os << *r.grid_mse;
    os << '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(aggregate());
}

void MetricReport::write_text(std::ostream& os) const {
  const MetricRow agg = aggregate();
  os << std::fixed << std::setprecision(4) << rows.size() << " pairs  PSNR " << agg.psnr << " dB  SSIM " << agg.ssim;
  if (agg.grid_mse) os << "  grid MSE " << *agg.grid_mse;
  os << '\n';
}

}  // namespace dpi

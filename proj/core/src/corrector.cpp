#include "dpi/corrector.hpp"

#include <algorithm>
#include <cmath>

#include "dpi/error.hpp"

namespace dpi {

namespace {

constexpr const char* kModule = "corrector";

void check_grid(const Image& img, int stride) {
  if (stride < 1 || img.height() % stride != 0 || img.width() % stride != 0) {
    throw ParameterError(kModule, "stride " + std::to_string(stride) + " does not divide " + img.shape().str());
  }
}

// d(grid_squared_error)/d(out) scaled by `weight`, restricted to the grid.
nn::Tensor grid_error_grad(const Image& out, const Image& gt, const FixedMask& fm, double weight) {
  nn::Tensor g(out.channels(), out.height(), out.width());
  const double n = static_cast<double>(fm.mask.popcount()) * out.channels();
  for (int c = 0; c < out.channels(); ++c) {
    for (int y = 0; y < out.height(); y += fm.stride) {
      for (int x = 0; x < out.width(); x += fm.stride) {
        g.channel(c)[static_cast<std::size_t>(y) * out.width() + x] =
            weight * 2.0 * (out.at(c, y, x) - gt.at(c, y, x)) / n;
      }
    }
  }
  return g;
}

}  // namespace

Condition IdentityCorrector::correct(const Image& masked_input, const Condition& y_T, int) const {
  require_same_shape(masked_input, y_T.values, kModule);
  return {masked_input, ConditionRole::kIntermediate};
}

nn::UNetConfig CrtModel::architecture(int channels, int base_width) {
  nn::UNetConfig cfg;
  cfg.in_channels = channels;
  cfg.out_channels = channels;
  cfg.cond_channels = 1;
  cfg.base_width = base_width;
  return cfg;
}

CrtModel::CrtModel(int channels, int stride, int base_width, std::uint64_t seed)
    : net_(architecture(channels, base_width), seed), stride_(stride) {
  if (stride < 1) throw ParameterError(kModule, "stride must be >= 1");
}

CrtModel::CrtModel(nn::UNet net, int stride) : net_(std::move(net)), stride_(stride) {
  if (stride < 1) throw ParameterError(kModule, "stride must be >= 1");
  if (net_.config().cond_channels != 1 || net_.config().in_channels != net_.config().out_channels) {
    throw ParameterError(kModule, "network is not a corrector architecture");
  }
}

Condition CrtModel::forward(const Image& masked_input, const Condition& y_T, int t, nn::UNet::Trace* trace) const {
  require_same_shape(masked_input, y_T.values, kModule);
  check_grid(masked_input, stride_);
  if (masked_input.channels() != net_.config().in_channels) {
    throw ParameterError(kModule, "corrector expects " + std::to_string(net_.config().in_channels) +
                                      " channels, got " + masked_input.shape().str());
  }
  const nn::Tensor cond = nn::Tensor::from_image(y_T.values.luminance());
  const nn::Tensor residual = net_.forward(nn::Tensor::from_image(masked_input), &cond, static_cast<double>(t), trace);
  Condition out{Image(masked_input.shape()), ConditionRole::kIntermediate};
  for (int c = 0; c < out.values.channels(); ++c) {
    const double* r = residual.channel(c);
    for (int y = 0; y < out.values.height(); y += stride_) {
      for (int x = 0; x < out.values.width(); x += stride_) {
        out.values.at(c, y, x) = y_T.values.at(c, y, x) + r[static_cast<std::size_t>(y) * out.values.width() + x];
      }
    }
  }
  return out;
}

double OmegaSchedule::operator()(int t) const {
  if (steps < 1) throw ParameterError(kModule, "omega schedule needs steps >= 1");
  return std::clamp(static_cast<double>(t) / steps, 0.0, 1.0);
}

CrtTrainSample make_crt_sample(const Image& gt, const Condition& y_T, int t, const NoiseSchedule& sched,
                               RandomStream& rng) {
  require_same_shape(gt, y_T.values, kModule);
  const Image eps = rng.gaussian_image(gt.shape());
  const Image z = rng.gaussian_image(gt.shape());
  const Image x_t = forward_sample(gt, t, eps, sched);
  Image prev = posterior_mean(gt, x_t, t, sched);
  const double sd = std::sqrt(sched.tilde_beta(t));
  for (std::size_t i = 0; i < prev.size(); ++i) prev[i] += sd * z[i];
  return {gt, y_T, t, std::move(prev), std::nullopt};
}

double grid_squared_error(const Image& a, const Image& b, const FixedMask& fm) {
  require_same_shape(a, b, kModule);
  double sum = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    for (int y = 0; y < a.height(); y += fm.stride) {
      for (int x = 0; x < a.width(); x += fm.stride) {
        const double d = a.at(c, y, x) - b.at(c, y, x);
        sum += d * d;
      }
    }
  }
  return sum / (static_cast<double>(fm.mask.popcount()) * a.channels());
}

double loss_prior(const CrtModel& model, const CrtTrainSample& sample) {
  const FixedMask fm = make_fixed_mask(sample.gt.height(), sample.gt.width(), model.stride());
  const Condition out = model.forward(apply_mask(sample.gt_prev, fm.mask), sample.y_T, sample.t);
  return grid_squared_error(out.values, sample.gt, fm);
}

double loss_gap(const CrtModel& model, const CrtTrainSample& sample) {
  if (!sample.x_crt) throw ParameterError(kModule, "loss_gap needs the detached first-pass output x_crt");
  const FixedMask fm = make_fixed_mask(sample.gt.height(), sample.gt.width(), model.stride());
  const Condition out = model.forward(apply_mask(*sample.x_crt, fm.mask), sample.y_T, sample.t);
  return grid_squared_error(out.values, sample.gt, fm);
}

double loss_crt(const CrtModel& model, const CrtTrainSample& sample, double omega_t) {
  if (!(omega_t >= 0.0 && omega_t <= 1.0)) throw ParameterError(kModule, "omega must lie in [0, 1]");
  return omega_t * loss_prior(model, sample) + (1.0 - omega_t) * loss_gap(model, sample);
}

double crt_gradients(CrtModel& model, std::vector<CrtTrainSample>& batch, const OmegaSchedule& omega) {
  if (batch.empty()) throw ParameterError(kModule, "empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (auto& sample : batch) {
    const FixedMask fm = make_fixed_mask(sample.gt.height(), sample.gt.width(), model.stride());
    const double w = omega(sample.t);

    nn::UNet::Trace trace1;
    const Condition out1 = model.forward(apply_mask(sample.gt_prev, fm.mask), sample.y_T, sample.t, &trace1);
    if (!sample.x_crt) sample.x_crt = out1.values;
    const double lp = grid_squared_error(out1.values, sample.gt, fm);
    if (w > 0.0) model.net().backward(trace1, grid_error_grad(out1.values, sample.gt, fm, w * inv_b));

    nn::UNet::Trace trace2;
    const Condition out2 = model.forward(apply_mask(*sample.x_crt, fm.mask), sample.y_T, sample.t, &trace2);
    const double lg = grid_squared_error(out2.values, sample.gt, fm);
    if (w < 1.0) model.net().backward(trace2, grid_error_grad(out2.values, sample.gt, fm, (1.0 - w) * inv_b));

    total += w * lp + (1.0 - w) * lg;
  }
  return total * inv_b;
}

Condition synthesize_condition(const Image& gt, const CrtTrainConfig& cfg, std::size_t index) {
  RandomStream rng(cfg.train.seed, stream_id(StreamTag::kDegradation, index));
  const DegradationConfig deg = cfg.severe ? sample_severe_config(rng) : cfg.degradation;
  const FixedMask fm = make_fixed_mask(gt.height(), gt.width(), cfg.stride);
  return make_initial_condition(degrade_lr(gt, deg, rng), fm);
}

CrtTrainResult train_crt(const std::vector<Image>& dataset, const NoiseSchedule& sched, const CrtTrainConfig& cfg,
                         std::optional<CrtModel> init, const StepCallback& on_step) {
  cfg.train.validate();
  if (dataset.empty()) throw DataError(kModule, "empty dataset");
  CrtModel model = init ? std::move(*init)
                        : CrtModel(dataset.front().channels(), cfg.stride, cfg.base_width, cfg.train.seed);
  if (model.stride() != cfg.stride) throw ParameterError(kModule, "initial model stride differs from config");

  std::vector<Condition> conditions;
  conditions.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) conditions.push_back(synthesize_condition(dataset[i], cfg, i));

  const OmegaSchedule omega{sched.steps()};
  nn::Adam adam(model.net().params(), nn::AdamConfig{cfg.train.learning_rate, 0.9, 0.999, 1e-8});
  nn::Ema ema(model.net().params(), cfg.train.ema_decay);
  TrainLog log;
  long step = 0;
  std::uint64_t example = 0;
  const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    const auto order = epoch_order(dataset.size(), cfg.train.seed, epoch);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t end = std::min(order.size(), start + bs);
      std::vector<CrtTrainSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        RandomStream rng(cfg.train.seed, stream_id(StreamTag::kTraining, example++));
        const int t = rng.uniform_int(1, sched.steps());
        const double w = omega(t);
        log.omega_min = std::min(log.omega_min, w);
        log.omega_max = std::max(log.omega_max, w);
        batch.push_back(make_crt_sample(dataset[order[i]], conditions[order[i]], t, sched, rng));
      }
      model.net().params().zero_grad();
      const double loss = crt_gradients(model, batch, omega);
      check_loss(loss, cfg.train, epoch, step, kModule);
      adam.step(model.net().params());
      ema.update(model.net().params());
      const LossRecord rec{epoch, step++, loss};
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_sum += loss;
      ++batches;
    }
    log.epoch_means.push_back(epoch_sum / batches);
  }
  nn::UNet ema_net = model.net();
  ema_net.params().copy_values_from(ema.shadow());
  CrtModel ema_model(std::move(ema_net), model.stride());
  return {std::move(model), std::move(ema_model), std::move(log)};
}

}  // namespace dpi

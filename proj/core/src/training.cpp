#include "dpi/training.hpp"

#include <cmath>
#include <sstream>

#include "dpi/error.hpp"
#include "dpi/rng.hpp"

namespace dpi {

namespace {
constexpr const char* kModule = "training";
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ParameterError(kModule, "learning rate must be > 0");
  if (batch_size < 1) throw ParameterError(kModule, "batch size must be >= 1");
  if (epochs < 1) throw ParameterError(kModule, "epochs must be >= 1");
  if (!(ema_decay > 0.0 && ema_decay < 1.0)) throw ParameterError(kModule, "EMA decay must lie in (0, 1)");
  if (!(divergence_threshold > 0.0)) throw ParameterError(kModule, "divergence threshold must be > 0");
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RandomStream rng(seed, stream_id(StreamTag::kShuffle, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

DenoiserTrainItem make_denoiser_item(const Image& x0, const NoiseSchedule& sched, std::uint64_t seed,
                                     std::uint64_t index) {
  RandomStream rng(seed, stream_id(StreamTag::kTraining, index));
  DenoiserTrainItem item;
  item.x0 = x0;
  item.t = rng.uniform_int(1, sched.steps());
  item.eps = rng.gaussian_image(x0.shape());
  return item;
}

double denoiser_loss(nn::UNet& net, const std::vector<DenoiserTrainItem>& batch, const NoiseSchedule& sched,
                     bool accumulate) {
  if (batch.empty()) throw ParameterError(kModule, "empty batch");
  double total = 0.0;
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (const auto& item : batch) {
    const Image x_t = forward_sample(item.x0, item.t, item.eps, sched);
    nn::UNet::Trace trace;
    const nn::Tensor pred =
        net.forward(nn::Tensor::from_image(x_t), nullptr, static_cast<double>(item.t), accumulate ? &trace : nullptr);
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    double sq = 0.0;
    nn::Tensor grad(pred.channels, pred.height, pred.width);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const double d = pred.data[i] - item.eps[i];
      sq += d * d;
      grad.data[i] = 2.0 * d * inv_n * inv_b;
    }
    total += sq * inv_n;
    if (accumulate) net.backward(trace, grad);
  }
  return total * inv_b;
}

void check_loss(double loss, const TrainConfig& cfg, int epoch, long step, const char* module) {
  if (!std::isfinite(loss) || loss > cfg.divergence_threshold) {
    std::ostringstream msg;
    msg << "training diverged at epoch " << epoch << ", step " << step << ": loss " << loss
        << " (threshold " << cfg.divergence_threshold << ", lr " << cfg.learning_rate << ")";
    throw NumericalError(module, msg.str());
  }
}

DenoiserTrainResult train_tiny_denoiser(const std::vector<Image>& dataset, const NoiseSchedule& sched,
                                        const TrainConfig& cfg, TinyDenoiser init, const StepCallback& on_step) {
  cfg.validate();
  if (dataset.empty()) throw DataError(kModule, "empty dataset");
  nn::UNet& net = init.net();
  nn::Adam adam(net.params(), nn::AdamConfig{cfg.learning_rate, 0.9, 0.999, 1e-8});
  nn::Ema ema(net.params(), cfg.ema_decay);
  TrainLog log;
  long step = 0;
  std::uint64_t example = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(dataset.size(), cfg.seed, epoch);
    double epoch_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<DenoiserTrainItem> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(make_denoiser_item(dataset[order[i]], sched, cfg.seed, example++));
      }
      net.params().zero_grad();
      const double loss = denoiser_loss(net, batch, sched, true);
      check_loss(loss, cfg, epoch, step, kModule);
      adam.step(net.params());
      ema.update(net.params());
      const LossRecord rec{epoch, step++, loss};
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_sum += loss;
      ++batches;
    }
    log.epoch_means.push_back(epoch_sum / batches);
  }
  nn::UNet ema_net = net;
  ema_net.params().copy_values_from(ema.shadow());
  return {std::move(init), TinyDenoiser(std::move(ema_net)), std::move(log)};
}

}  // namespace dpi

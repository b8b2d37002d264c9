#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpi/denoiser.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/image.hpp"

namespace dpi {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 8;
  int epochs = 1;
  double ema_decay = 0.9999;
  std::uint64_t seed = 0;
  /// A batch loss above this (or non-finite) aborts training.
  double divergence_threshold = 1e6;

  void validate() const;
};

struct LossRecord {
  int epoch = 0;
  long step = 0;
  double loss = 0.0;
};

struct TrainLog {
  std::vector<LossRecord> steps;
  std::vector<double> epoch_means;
  /// Extremes of the loss weight seen during training (CRT only).
  double omega_min = 1.0;
  double omega_max = 0.0;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Seeded Fisher-Yates permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

/// One L_simple training example: x_t = forward_sample(x0, t, eps).
struct DenoiserTrainItem {
  Image x0;
  int t = 1;
  Image eps;
};

/// Draws t uniformly from [1, T] and eps ~ N(0, I) from the stream keyed by
/// (seed, global example index).
DenoiserTrainItem make_denoiser_item(const Image& x0, const NoiseSchedule& sched, std::uint64_t seed,
                                     std::uint64_t index);

/// Mean over the batch of mean_i (eps_theta - eps)^2. With `accumulate`,
/// adds the exact gradient into the network's parameter gradients.
double denoiser_loss(nn::UNet& net, const std::vector<DenoiserTrainItem>& batch, const NoiseSchedule& sched,
                     bool accumulate);

struct DenoiserTrainResult {
  TinyDenoiser model;
  TinyDenoiser ema;
  TrainLog log;
};

DenoiserTrainResult train_tiny_denoiser(const std::vector<Image>& dataset, const NoiseSchedule& sched,
                                        const TrainConfig& cfg, TinyDenoiser init,
                                        const StepCallback& on_step = {});

/// Shared divergence check; throws NumericalError naming the step.
void check_loss(double loss, const TrainConfig& cfg, int epoch, long step, const char* module);

}  // namespace dpi

#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "dpi/degradation.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/masks.hpp"
#include "dpi/nn.hpp"
#include "dpi/training.hpp"

namespace dpi {

/// y_{t-1} = CRT(m_f ⊙ y'_{t-1}, y_T, t).
class ConditionCorrector {
 public:
  virtual ~ConditionCorrector() = default;
  virtual Condition correct(const Image& masked_input, const Condition& y_T, int t) const = 0;
  virtual bool is_identity() const { return false; }
};

/// Passes the masked posterior through unchanged.
class IdentityCorrector : public ConditionCorrector {
 public:
  Condition correct(const Image& masked_input, const Condition& y_T, int t) const override;
  bool is_identity() const override { return true; }
};

/// Encoder-decoder corrector. The luminance of y_T enters through an extra
/// convolution added to the first feature map; the network predicts a
/// residual on y_T and the output is restricted to the grid.
class CrtModel : public ConditionCorrector {
 public:
  CrtModel() = default;
  CrtModel(int channels, int stride, int base_width, std::uint64_t seed);
  CrtModel(nn::UNet net, int stride);

  Condition correct(const Image& masked_input, const Condition& y_T, int t) const override {
    return forward(masked_input, y_T, t);
  }

  Condition forward(const Image& masked_input, const Condition& y_T, int t,
                    nn::UNet::Trace* trace = nullptr) const;

  int stride() const { return stride_; }
  nn::UNet& net() { return net_; }
  const nn::UNet& net() const { return net_; }
  std::size_t parameter_count() const { return net_.params().scalar_count(); }

  static nn::UNetConfig architecture(int channels, int base_width);

 private:
  nn::UNet net_;
  int stride_ = 1;
};

/// Omega(t) = t / T, clamped to [0, 1].
struct OmegaSchedule {
  int steps = 1000;
  double operator()(int t) const;
};

struct CrtTrainSample {
  Image gt;
  Condition y_T;
  int t = 1;
  /// I'_{G,t-1}: one ancestral step from the forward-noised ground truth.
  Image gt_prev;
  /// Detached first-pass output; filled by crt_gradients when absent.
  std::optional<Image> x_crt;
};

/// eps, z ~ N(0, I) from `rng`; x_t = forward_sample(gt, t, eps);
/// gt_prev = posterior_mean(gt, x_t, t) + sqrt(tilde_beta_t) z.
CrtTrainSample make_crt_sample(const Image& gt, const Condition& y_T, int t, const NoiseSchedule& sched,
                               RandomStream& rng);

/// Mean of (a - b)^2 over grid positions and channels.
double grid_squared_error(const Image& a, const Image& b, const FixedMask& fm);

double loss_prior(const CrtModel& model, const CrtTrainSample& sample);
double loss_gap(const CrtModel& model, const CrtTrainSample& sample);
double loss_crt(const CrtModel& model, const CrtTrainSample& sample, double omega_t);

/// Accumulates the gradient of the batch-mean L_crt into the model's
/// parameter gradients (which are not zeroed first) and returns that loss.
double crt_gradients(CrtModel& model, std::vector<CrtTrainSample>& batch, const OmegaSchedule& omega);

struct CrtTrainConfig {
  TrainConfig train;
  int base_width = 32;
  int stride = 2;
  /// Synthesis of y_T from each ground-truth image.
  DegradationConfig degradation;
  /// Draw a fresh severe-range configuration per image instead.
  bool severe = false;
};

struct CrtTrainResult {
  CrtModel model;
  CrtModel ema;
  TrainLog log;
};

/// y_T for dataset entry `index`, deterministic in (cfg.seed, index).
Condition synthesize_condition(const Image& gt, const CrtTrainConfig& cfg, std::size_t index);

CrtTrainResult train_crt(const std::vector<Image>& dataset, const NoiseSchedule& sched, const CrtTrainConfig& cfg,
                         std::optional<CrtModel> init = std::nullopt, const StepCallback& on_step = {});

}  // namespace dpi

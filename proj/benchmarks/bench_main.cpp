#include <benchmark/benchmark.h>

#include "dpi/corrector.hpp"
#include "dpi/degradation.hpp"
#include "dpi/denoiser.hpp"
#include "dpi/masks.hpp"
#include "dpi/metrics.hpp"
#include "dpi/nn.hpp"
#include "dpi/rng.hpp"
#include "dpi/sampler.hpp"
#include "dpi/toy_data.hpp"

namespace dpi {
namespace {

void BM_PhiloxGaussian(benchmark::State& state) {
  RandomStream rng(1, 0);
  for (auto _ : state) benchmark::DoNotOptimize(rng.gaussian());
}
BENCHMARK(BM_PhiloxGaussian);

void BM_Conv3x3(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  nn::ParameterSet ps;
  const auto conv = nn::Conv2d::make(ps, "c", ch, ch, 3, 1);
  RandomStream rng(2, 0);
  for (auto& p : ps)
    for (double& v : p.value) v = 0.1 * rng.gaussian();
  nn::Tensor x(ch, 32, 32);
  for (double& v : x.data) v = rng.gaussian();
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(ps, x));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(32);

void BM_TinyDenoiser(benchmark::State& state) {
  const TinyDenoiser den(1, static_cast<int>(state.range(0)), 3);
  RandomStream rng(3, 0);
  const Image x = rng.gaussian_image({32, 32, 1});
  for (auto _ : state) benchmark::DoNotOptimize(den.evaluate(x, 500));
}
BENCHMARK(BM_TinyDenoiser)->Arg(8)->Arg(16);

void BM_OracleAncestralStep(benchmark::State& state) {
  const auto sched = NoiseSchedule::default_schedule();
  const GaussianToy law = make_gaussian_toy({32, 32, 1}, 4);
  const GaussianOracleDenoiser oracle(law.mu0, law.var0, sched);
  RandomStream rng(5, 0);
  const Image x = rng.gaussian_image({32, 32, 1});
  for (auto _ : state) {
    const Image noise = rng.gaussian_image(x.shape());
    benchmark::DoNotOptimize(reverse_step(x, oracle.evaluate(x, 500), 500, sched, noise));
  }
}
BENCHMARK(BM_OracleAncestralStep);

void BM_MaskGen(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const FixedMask fm = make_fixed_mask(n, n, 2);
  RandomStream img(6, 0);
  const Condition y{apply_mask(img.gaussian_image({n, n, 1}), fm.mask), ConditionRole::kIntermediate};
  RandomStream rng(6, 1);
  for (auto _ : state) benchmark::DoNotOptimize(mask_gen(y, fm, 1.2, rng));
}
BENCHMARK(BM_MaskGen)->Arg(32)->Arg(256);

void BM_Degrade(benchmark::State& state) {
  const Image hr = make_toy_face(7, 0, 128);
  DegradationConfig cfg;
  cfg.blur_ksize = 9;
  cfg.blur_sigma = 3.0;
  cfg.scale = 4;
  cfg.noise_sigma = 20.0;
  cfg.jpeg_quality = 60;
  for (auto _ : state) benchmark::DoNotOptimize(degrade(hr, cfg));
}
BENCHMARK(BM_Degrade);

void BM_Ssim(benchmark::State& state) {
  const Image a = make_toy_face(8, 0, 64), b = make_toy_face(8, 1, 64);
  for (auto _ : state) benchmark::DoNotOptimize(ssim(a, b));
}
BENCHMARK(BM_Ssim);

}  // namespace
}  // namespace dpi

BENCHMARK_MAIN();

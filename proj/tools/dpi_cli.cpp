// dpi: command-line front end for degradation, training, restoration and
// evaluation. Exit codes: 0 ok, 1 usage, 2 data, 3 numerical.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpi/corrector.hpp"
#include "dpi/degradation.hpp"
#include "dpi/denoiser.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/error.hpp"
#include "dpi/io.hpp"
#include "dpi/masks.hpp"
#include "dpi/metrics.hpp"
#include "dpi/sampler.hpp"
#include "dpi/selftest.hpp"
#include "dpi/toy_data.hpp"
#include "dpi/training.hpp"

namespace fs = std::filesystem;
using namespace dpi;

namespace {

constexpr const char* kModule = "cli_and_io";

struct ScheduleSettings {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  void add_to(ConfigRegistry& reg) {
    reg.add("schedule_steps", &steps, "diffusion steps T");
    reg.add("beta_start", &beta_start, "first beta");
    reg.add("beta_end", &beta_end, "last beta");
  }
  NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
};

void add_degradation_keys(ConfigRegistry& reg, DegradationConfig& d) {
  reg.add("scale", &d.scale, "downsampling factor r");
  reg.add("blur_ksize", &d.blur_ksize, "odd Gaussian kernel size s");
  reg.add("blur_sigma", &d.blur_sigma, "Gaussian blur sigma");
  reg.add("noise_sigma", &d.noise_sigma, "noise std in 8-bit units");
  reg.add("jpeg_quality", &d.jpeg_quality, "JPEG quality q");
  reg.add("jpeg", &d.jpeg, "apply the JPEG stage");
  reg.add(
      "downsample", [&d](const std::string& v) {
        if (v == "average") d.downsample = DownsampleKind::kAverage;
        else if (v == "bicubic") d.downsample = DownsampleKind::kBicubic;
        else throw ParameterError(kModule, "downsample: expected average or bicubic, got '" + v + "'");
      },
      [&d] { return std::string(d.downsample == DownsampleKind::kAverage ? "average" : "bicubic"); },
      "average | bicubic");
}

void add_train_keys(ConfigRegistry& reg, TrainConfig& t) {
  reg.add("lr", &t.learning_rate, "Adam learning rate");
  reg.add("batch_size", &t.batch_size, "examples per step");
  reg.add("epochs", &t.epochs, "passes over the data");
  reg.add("ema_decay", &t.ema_decay, "EMA decay");
  reg.add("seed", &t.seed, "random seed");
  reg.add("divergence_threshold", &t.divergence_threshold, "abort when a batch loss exceeds this");
}

// Binds every registry key to a --key flag on `cmd`, plus --config FILE.
// Flags override file values.
struct Settings {
  ConfigRegistry reg;
  std::string config_file;
  std::map<std::string, std::string> flags;

  void bind(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "key=value file");
    for (const auto& e : reg.entries()) {
      const std::string key = e.key;
      cmd->add_option_function<std::string>(
          "--" + key, [this, key](const std::string& v) { flags[key] = v; }, e.help);
    }
  }

  void resolve() {
    if (!config_file.empty()) reg.apply(read_key_values(config_file), config_file);
    reg.apply(flags, "command line");
  }

  std::string manifest(const std::string& command, const std::vector<std::string>& extra) const {
    std::ostringstream os;
    os << "# dpi " << command << '\n';
    reg.write(os);
    // Per-run facts are comments so the manifest works as a --config file.
    for (const auto& line : extra) os << "# " << line << '\n';
    return os.str();
  }
};

std::vector<Image> read_all(const std::vector<fs::path>& files) {
  std::vector<Image> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(read_pnm(f));
  return out;
}

// ---- gen-data ----

struct GenData {
  Settings s;
  std::string out;
  int count = 100;
  int size = 32;
  std::uint64_t seed = 0;
  std::uint64_t first = 0;

  void setup(CLI::App* cmd) {
    s.reg.add("count", &count, "number of images");
    s.reg.add("size", &size, "image side length");
    s.reg.add("seed", &seed, "dataset seed");
    s.reg.add("first", &first, "index of the first image");
    s.bind(cmd);
    cmd->add_option("--out", out, "output directory")->required();
  }

  int run() {
    s.resolve();
    if (count < 1) throw ParameterError(kModule, "count must be >= 1");
    std::vector<std::string> files;
    for (int i = 0; i < count; ++i) {
      const std::uint64_t index = first + static_cast<std::uint64_t>(i);
      char name[32];
      std::snprintf(name, sizeof name, "face_%06llu.pgm", static_cast<unsigned long long>(index));
      write_pnm(fs::path(out) / name, make_toy_face(seed, index, size));
      files.push_back(std::string("file=") + name);
    }
    write_text_file(fs::path(out) / "manifest.txt", s.manifest("gen-data", files));
    std::cout << "wrote " << count << " images to " << out << '\n';
    return 0;
  }
};

// ---- degrade ----

struct Degrade {
  Settings s;
  DegradationConfig d;
  bool severe = false;
  bool lr_only = false;
  std::uint64_t seed = 0;
  std::string input, out;

  void setup(CLI::App* cmd) {
    add_degradation_keys(s.reg, d);
    s.reg.add("severe", &severe, "draw a severe-range configuration per image");
    s.reg.add("lr_only", &lr_only, "write the low-resolution image (skip the final upsampling)");
    s.reg.add("seed", &seed, "noise seed");
    s.bind(cmd);
    cmd->add_option("--input", input, "image or directory")->required();
    cmd->add_option("--out", out, "output directory")->required();
  }

  int run() {
    s.resolve();
    d.validate();
    const auto files = list_images(input);
    const auto images = read_all(files);  // fail before writing anything
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < images.size(); ++i) {
      RandomStream rng(seed, stream_id(StreamTag::kDegradation, i));
      DegradationConfig cfg = severe ? sample_severe_config(rng) : d;
      const Image lr = degrade_lr(images[i], cfg, rng);
      const Image result = lr_only ? lr : resize_bicubic(lr, images[i].height(), images[i].width());
      const fs::path dst = fs::path(out) / files[i].filename();
      write_pnm(dst, result);
      std::ostringstream line;
      line << "file=" << files[i].filename().string() << " scale=" << cfg.scale << " blur_ksize=" << cfg.blur_ksize
           << " blur_sigma=" << format_double(cfg.blur_sigma) << " noise_sigma=" << format_double(cfg.noise_sigma)
           << " jpeg_quality=" << cfg.jpeg_quality;
      lines.push_back(line.str());
    }
    write_text_file(fs::path(out) / "manifest.txt", s.manifest("degrade", lines));
    std::cout << "degraded " << images.size() << " images into " << out << '\n';
    return 0;
  }
};

// ---- training ----

struct TrainDenoiser {
  Settings s;
  TrainConfig t;
  ScheduleSettings sched;
  int base_width = 32;
  std::string data, out;

  void setup(CLI::App* cmd) {
    add_train_keys(s.reg, t);
    sched.add_to(s.reg);
    s.reg.add("base_width", &base_width, "network base width");
    s.bind(cmd);
    cmd->add_option("--data", data, "directory of training images")->required();
    cmd->add_option("--out", out, "checkpoint path")->required();
  }

  int run() {
    s.resolve();
    const auto images = read_all(list_images(data));
    const NoiseSchedule schedule = sched.build();
    TinyDenoiser init(images.front().channels(), base_width, t.seed);
    auto result = train_tiny_denoiser(images, schedule, t, std::move(init), [](const LossRecord& r) {
      if (r.step % 50 == 0) std::cerr << "epoch " << r.epoch << " step " << r.step << " loss " << r.loss << '\n';
    });
    save_denoiser(out, result.ema, schedule);
    save_denoiser(out + ".raw", result.model, schedule);
    write_loss_csv(out + ".loss.csv", result.log);
    write_text_file(out + ".manifest", s.manifest("train-denoiser", {"data=" + data, "images=" + std::to_string(images.size())}));
    std::cout << "final epoch loss " << result.log.epoch_means.back() << '\n';
    return 0;
  }
};

struct TrainCrt {
  Settings s;
  CrtTrainConfig c;
  ScheduleSettings sched;
  std::string data, out;

  void setup(CLI::App* cmd) {
    add_train_keys(s.reg, c.train);
    sched.add_to(s.reg);
    s.reg.add("base_width", &c.base_width, "network base width");
    s.reg.add("stride", &c.stride, "grid stride k");
    s.reg.add("severe", &c.severe, "synthesize y_T with severe-range degradations");
    add_degradation_keys(s.reg, c.degradation);
    s.bind(cmd);
    cmd->add_option("--data", data, "directory of ground-truth images")->required();
    cmd->add_option("--out", out, "checkpoint path")->required();
  }

  int run() {
    s.resolve();
    const auto images = read_all(list_images(data));
    const NoiseSchedule schedule = sched.build();
    auto result = train_crt(images, schedule, c, std::nullopt, [](const LossRecord& r) {
      if (r.step % 50 == 0) std::cerr << "epoch " << r.epoch << " step " << r.step << " loss " << r.loss << '\n';
    });
    save_crt(out, result.ema, schedule);
    save_crt(out + ".raw", result.model, schedule);
    write_loss_csv(out + ".loss.csv", result.log);
    write_text_file(out + ".manifest", s.manifest("train-crt", {"data=" + data, "images=" + std::to_string(images.size())}));
    std::cout << "final epoch loss " << result.log.epoch_means.back() << '\n';
    return 0;
  }
};

// ---- restore ----

struct Restore {
  Settings s;
  DpiConfig cfg;
  ScheduleSettings sched;
  int scale = 4;
  bool trace = false;
  std::string denoiser = "";
  std::string crt = "identity";
  std::string oracle_mean;
  double oracle_var = 0.1;
  std::string input, out;

  void setup(CLI::App* cmd) {
    s.reg.add("tau", &cfg.tau, "stage split");
    s.reg.add("s", &cfg.s, "probability exponent");
    s.reg.add("omega", &cfg.omega, "weight scale");
    s.reg.add("stride", &cfg.stride, "grid stride k");
    s.reg.add(
        "sampler", [this](const std::string& v) {
          if (v == "ancestral") cfg.kind = SamplerKind::kAncestral;
          else if (v == "ddim") cfg.kind = SamplerKind::kImplicit;
          else throw ParameterError(kModule, "sampler: expected ancestral or ddim, got '" + v + "'");
        },
        [this] { return std::string(cfg.kind == SamplerKind::kAncestral ? "ancestral" : "ddim"); },
        "ancestral | ddim");
    s.reg.add("steps", &cfg.steps, "sampling iterations");
    s.reg.add("eta", &cfg.eta, "implicit stochasticity");
    s.reg.add("seed", &cfg.seed, "sampling seed");
    s.reg.add(
        "sigma_form", [this](const std::string& v) {
          if (v == "printed") cfg.sigma_form = SigmaForm::kPrinted;
          else if (v == "canonical") cfg.sigma_form = SigmaForm::kCanonical;
          else throw ParameterError(kModule, "sigma_form: expected printed or canonical, got '" + v + "'");
        },
        [this] { return std::string(cfg.sigma_form == SigmaForm::kPrinted ? "printed" : "canonical"); },
        "printed | canonical");
    s.reg.add(
        "ddim_condition", [this](const std::string& v) {
          if (v == "noisy") cfg.ddim_condition = DdimConditionForm::kNoisy;
          else if (v == "literal") cfg.ddim_condition = DdimConditionForm::kLiteral;
          else throw ParameterError(kModule, "ddim_condition: expected noisy or literal, got '" + v + "'");
        },
        [this] { return std::string(cfg.ddim_condition == DdimConditionForm::kNoisy ? "noisy" : "literal"); },
        "noisy | literal");
    s.reg.add("scale", &scale, "output size = input size x scale");
    s.reg.add("trace", &trace, "dump per-step snapshots");
    s.reg.add("trace_every", &cfg.trace_every, "snapshot interval when tracing");
    s.reg.add("denoiser", &denoiser, "denoiser checkpoint (or empty with oracle_mean)");
    s.reg.add("crt", &crt, "corrector checkpoint or 'identity'");
    s.reg.add("oracle_mean", &oracle_mean, "image used as the Gaussian oracle mean");
    s.reg.add("oracle_var", &oracle_var, "Gaussian oracle variance");
    sched.add_to(s.reg);
    s.bind(cmd);
    cmd->add_option("--input", input, "low-resolution image or directory")->required();
    cmd->add_option("--out", out, "output directory")->required();
  }

  int run() {
    s.resolve();
    if (trace && cfg.trace_every == 0) cfg.trace_every = 1;
    if (!trace) cfg.trace_every = 0;
    if (scale < 1) throw ParameterError(kModule, "scale must be >= 1");
    const NoiseSchedule schedule = sched.build();
    cfg.validate();

    std::unique_ptr<Denoiser> den;
    if (!oracle_mean.empty()) {
      const Image mu = read_pnm(oracle_mean);
      den = std::make_unique<GaussianOracleDenoiser>(mu, Image(mu.shape(), oracle_var), schedule);
    } else if (!denoiser.empty()) {
      den = std::make_unique<TinyDenoiser>(load_denoiser(denoiser, schedule));
    } else {
      throw ParameterError(kModule, "restore needs --denoiser or --oracle_mean");
    }
    std::unique_ptr<ConditionCorrector> corrector;
    if (crt == "identity") {
      corrector = std::make_unique<IdentityCorrector>();
    } else {
      auto m = std::make_unique<CrtModel>(load_crt(crt, schedule));
      if (m->stride() != cfg.stride) throw ParameterError(kModule, "corrector was trained for a different stride");
      corrector = std::move(m);
    }

    const auto files = list_images(input);
    const auto images = read_all(files);
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Image& lr = images[i];
      const FixedMask fm = make_fixed_mask(lr.height() * scale, lr.width() * scale, cfg.stride);
      const Condition y_T = make_initial_condition(lr, fm);
      const DpiResult r = dpi::restore(*den, *corrector, y_T, cfg, schedule);
      const fs::path dst = fs::path(out) / files[i].filename();
      write_pnm(dst, r.x0);
      if (cfg.trace_every > 0) write_trace(fs::path(out) / (files[i].stem().string() + "_trace"), y_T, r);
      std::ostringstream line;
      line << "file=" << files[i].filename().string() << " fcm_steps=" << r.stats.fcm_steps
           << " racm_steps=" << r.stats.racm_steps << " sigma_clamped=" << r.stats.sigma_clamped
           << " identity_corrector=" << (r.stats.identity_corrector ? "true" : "false");
      lines.push_back(line.str());
      if (r.stats.identity_corrector) std::cerr << "note: identity corrector in use for " << files[i] << '\n';
    }
    write_text_file(fs::path(out) / "manifest.txt", s.manifest("restore", lines));
    std::cout << "restored " << images.size() << " images into " << out << '\n';
    return 0;
  }

  static void write_trace(const fs::path& dir, const Condition& y_T, const DpiResult& r) {
    write_pnm(dir / "y_T.pgm", y_T.values);
    std::ostringstream manifest;
    manifest << "index t w popcount\n";
    for (const auto& f : r.trace.frames) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "step_%04d", f.t);
      write_pnm(dir / (std::string(stem) + "_x.pgm"), f.x);
      write_pnm(dir / (std::string(stem) + "_y.pgm"), f.y);
      if (f.mask) write_mask_pgm(dir / (std::string(stem) + "_mask.pgm"), *f.mask);
      manifest << f.index << ' ' << f.t << ' ' << format_double(f.w) << ' ' << f.mask_popcount << '\n';
    }
    write_text_file(dir / "trace.txt", manifest.str());
  }
};

// ---- eval ----

struct Eval {
  std::string sr, gt, out;
  int stride = 0;

  void setup(CLI::App* cmd) {
    cmd->add_option("--sr", sr, "restored image or directory")->required();
    cmd->add_option("--gt", gt, "reference image or directory")->required();
    cmd->add_option("--stride", stride, "grid stride for grid MSE (0 = skip)");
    cmd->add_option("--out", out, "CSV report path (default stdout)");
  }

  int run() {
    const auto sr_files = list_images(sr);
    const auto gt_files = list_images(gt);
    MetricReport report;
    for (const auto& f : sr_files) {
      fs::path ref = fs::is_directory(gt) ? fs::path(gt) / f.filename() : gt_files.front();
      if (!fs::exists(ref)) throw DataError(kModule, "no reference for " + f.filename().string());
      const Image a = read_pnm(f), b = read_pnm(ref);
      std::optional<FixedMask> fm;
      if (stride > 0) fm = make_fixed_mask(a.height(), a.width(), stride);
      report.rows.push_back(evaluate_pair(f.filename().string(), a, b, fm ? &fm->mask : nullptr));
    }
    std::ostringstream csv;
    report.write_csv(csv);
    if (out.empty()) std::cout << csv.str();
    else write_text_file(out, csv.str());
    report.write_text(std::cerr);
    return 0;
  }
};

// ---- selftest ----

struct Selftest {
  std::vector<std::string> only;
  double fault = 0.0;

  void setup(CLI::App* cmd) {
    cmd->add_option("--only", only, "suite names");
    cmd->add_option("--inject-coefficient-fault", fault, "relative error injected into the posterior-mean coefficient");
  }

  int run() {
    const auto results = run_selftest({only, fault});
    bool ok = true;
    for (const auto& r : results) {
      std::printf("%-20s %s  %.2fs%s%s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.seconds,
                  r.passed ? "" : "  ", r.detail.c_str());
      ok = ok && r.passed;
    }
    return ok ? 0 : 3;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked diffusion face restoration: degrade, train, restore, evaluate"};
  app.require_subcommand(1);
  GenData gen;
  Degrade degrade_cmd;
  TrainDenoiser train_den;
  TrainCrt train_crt_cmd;
  Restore restore_cmd;
  Eval eval;
  Selftest selftest;
  auto* c_gen = app.add_subcommand("gen-data", "write a procedural toy-face corpus");
  auto* c_deg = app.add_subcommand("degrade", "apply the blur/downsample/noise/JPEG/upsample pipeline");
  auto* c_tden = app.add_subcommand("train-denoiser", "fit the tiny noise predictor");
  auto* c_tcrt = app.add_subcommand("train-crt", "fit the condition corrector");
  auto* c_res = app.add_subcommand("restore", "run two-stage masked sampling on low-resolution inputs");
  auto* c_eval = app.add_subcommand("eval", "PSNR / SSIM / grid MSE report");
  auto* c_self = app.add_subcommand("selftest", "run the built-in invariant suites");
  gen.setup(c_gen);
  degrade_cmd.setup(c_deg);
  train_den.setup(c_tden);
  train_crt_cmd.setup(c_tcrt);
  restore_cmd.setup(c_res);
  eval.setup(c_eval);
  selftest.setup(c_self);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (c_gen->parsed()) return gen.run();
    if (c_deg->parsed()) return degrade_cmd.run();
    if (c_tden->parsed()) return train_den.run();
    if (c_tcrt->parsed()) return train_crt_cmd.run();
    if (c_res->parsed()) return restore_cmd.run();
    if (c_eval->parsed()) return eval.run();
    if (c_self->parsed()) return selftest.run();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 1;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dpi/corrector.hpp"
#include "dpi/denoiser.hpp"
#include "dpi/diffusion.hpp"
#include "dpi/image.hpp"
#include "dpi/masks.hpp"
#include "dpi/nn.hpp"
#include "dpi/training.hpp"

namespace dpi {

// ---- images -------------------------------------------------------------

/// v / 127.5 - 1
double from_byte(std::uint8_t v);
/// round(clamp(x, -1, 1) * 127.5 + 127.5)
std::uint8_t to_byte(double x);

/// Binary PGM (P5) or PPM (P6) with maxval 255.
Image read_pnm(const std::filesystem::path& path);
Image decode_pnm(std::string_view bytes, const std::string& source = "<memory>");
void write_pnm(const std::filesystem::path& path, const Image& img);
std::string encode_pnm(const Image& img);
/// 0 / 255 PGM.
void write_mask_pgm(const std::filesystem::path& path, const Mask& m);

/// Sorted .pgm / .ppm files of a directory, or the file itself.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& input);

// ---- checkpoints --------------------------------------------------------

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

/// "DPICKPT1", u32 count, per tensor (u32 name length, name, u8 type tag 0,
/// u32 rank, rank x u32 dims), little-endian f32 payload in header order,
/// trailing FNV-1a 64 checksum of everything before it.
struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(std::string_view bytes);

enum class ModelKind { kDenoiser = 0, kCorrector = 1 };

/// Parameters plus "meta/arch" and "meta/schedule" (the betas).
Checkpoint make_model_checkpoint(const nn::UNet& net, ModelKind kind, int stride, const NoiseSchedule& sched);

/// Rebuilds the network; rejects the wrong kind or a different schedule.
nn::UNet network_from_checkpoint(const Checkpoint& ckpt, ModelKind kind, const NoiseSchedule& sched,
                                 int* stride = nullptr);

void save_denoiser(const std::filesystem::path& path, const TinyDenoiser& d, const NoiseSchedule& sched);
TinyDenoiser load_denoiser(const std::filesystem::path& path, const NoiseSchedule& sched);
void save_crt(const std::filesystem::path& path, const CrtModel& m, const NoiseSchedule& sched);
CrtModel load_crt(const std::filesystem::path& path, const NoiseSchedule& sched);

// ---- configuration ------------------------------------------------------

/// Parses "key = value" lines; '#' starts a comment. Duplicate keys and
/// malformed lines are errors.
std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& source);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Named, typed settings that can be filled from files and flags and dumped
/// back as a manifest that re-runs the command.
class ConfigRegistry {
 public:
  void add(std::string key, int* target, std::string help = {});
  void add(std::string key, double* target, std::string help = {});
  void add(std::string key, std::uint64_t* target, std::string help = {});
  void add(std::string key, bool* target, std::string help = {});
  void add(std::string key, std::string* target, std::string help = {});
  void add(std::string key, std::function<void(const std::string&)> set, std::function<std::string()> get,
           std::string help = {});

  /// Unknown keys are parameter errors.
  void apply(const std::map<std::string, std::string>& values, const std::string& source);
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  bool contains(const std::string& key) const;

  struct Entry {
    std::string key;
    std::string help;
    std::function<void(const std::string&)> set;
    std::function<std::string()> get;
  };
  const std::vector<Entry>& entries() const { return entries_; }

  /// key=value lines in registration order.
  void write(std::ostream& os) const;

 private:
  std::vector<Entry> entries_;
};

int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

// ---- reports ------------------------------------------------------------

void write_loss_csv(std::ostream& os, const TrainLog& log);
void write_loss_csv(const std::filesystem::path& path, const TrainLog& log);

/// Writes the file via a temporary and renames it into place.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_binary_file(const std::filesystem::path& path);

}  // namespace dpi

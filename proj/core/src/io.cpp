#include "dpi/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dpi/error.hpp"

namespace dpi {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "cli_and_io";
constexpr std::string_view kMagic = "DPICKPT1";

// ---- byte helpers ----

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(std::string_view bytes, const std::string& source) : bytes_(bytes), source_(source) {}

  std::string_view take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) throw DataError(kModule, source_ + ": truncated " + what);
    const std::string_view s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32(const char* what) {
    const auto s = take(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    const auto s = take(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

// ---- PNM header tokens ----

std::size_t skip_space(std::string_view b, std::size_t pos) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  return pos;
}

int header_int(std::string_view b, std::size_t& pos, const std::string& source, const char* what) {
  pos = skip_space(b, pos);
  int v = 0;
  const auto [ptr, ec] = std::from_chars(b.data() + pos, b.data() + b.size(), v);
  if (ec != std::errc() || v <= 0) throw DataError(kModule, source + ": bad PNM " + what);
  pos = static_cast<std::size_t>(ptr - b.data());
  return v;
}

constexpr std::uint32_t kArchSize = 10;

}  // namespace

// ---- images ----

double from_byte(std::uint8_t v) { return v / 127.5 - 1.0; }

std::uint8_t to_byte(double x) {
  if (std::isnan(x)) x = -1.0;
  return static_cast<std::uint8_t>(std::lround(std::clamp(x, -1.0, 1.0) * 127.5 + 127.5));
}

Image decode_pnm(std::string_view b, const std::string& source) {
  if (b.size() < 2 || b[0] != 'P' || (b[1] != '5' && b[1] != '6')) {
    throw DataError(kModule, source + ": not a binary PGM/PPM file");
  }
  const int channels = b[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  const int w = header_int(b, pos, source, "width");
  const int h = header_int(b, pos, source, "height");
  const int maxval = header_int(b, pos, source, "maxval");
  if (maxval != 255) throw DataError(kModule, source + ": only 8-bit PNM (maxval 255) is supported");
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw DataError(kModule, source + ": malformed PNM header");
  }
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (b.size() - pos < n) throw DataError(kModule, source + ": truncated pixel data");
  Image img(h, w, channels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < channels; ++c) {
        img.at(c, y, x) = from_byte(static_cast<std::uint8_t>(b[pos++]));
      }
    }
  }
  return img;
}

Image read_pnm(const fs::path& path) { return decode_pnm(read_binary_file(path), path.string()); }

std::string encode_pnm(const Image& img) {
  if (img.channels() != 1 && img.channels() != 3) {
    throw ParameterError(kModule, "PNM output needs 1 or 3 channels, got " + img.shape().str());
  }
  std::string out = (img.channels() == 1 ? "P5\n" : "P6\n") + std::to_string(img.width()) + " " +
                    std::to_string(img.height()) + "\n255\n";
  out.reserve(out.size() + img.size());
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < img.channels(); ++c) out.push_back(static_cast<char>(to_byte(img.at(c, y, x))));
    }
  }
  return out;
}

void write_pnm(const fs::path& path, const Image& img) { write_text_file(path, encode_pnm(img)); }

void write_mask_pgm(const fs::path& path, const Mask& m) {
  Image img(m.height(), m.width(), 1, -1.0);
  for (int y = 0; y < m.height(); ++y) {
    for (int x = 0; x < m.width(); ++x) {
      if (m.at(y, x)) img.at(0, y, x) = 1.0;
    }
  }
  write_pnm(path, img);
}

std::vector<fs::path> list_images(const fs::path& input) {
  std::error_code ec;
  if (fs::is_regular_file(input, ec)) return {input};
  if (!fs::is_directory(input, ec)) throw DataError(kModule, input.string() + ": no such file or directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(input)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw DataError(kModule, input.string() + ": no .pgm/.ppm images");
  return out;
}

// ---- checkpoints ----

const NamedTensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kMagic);
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.data.size()) throw ParameterError(kModule, "tensor " + t.name + " shape does not match its data");
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(0);  // f32
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_u32(out, d);
  }
  for (const auto& t : ckpt.tensors) {
    for (float f : t.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  put_u64(out, fnv1a64(out));
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source) {
  if (bytes.size() < kMagic.size() + 12 || bytes.substr(0, kMagic.size()) != kMagic) {
    throw DataError(kModule, source + ": not a DPICKPT1 checkpoint");
  }
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8), source);
  if (tail.u64("checksum") != fnv1a64(body)) throw DataError(kModule, source + ": checkpoint checksum mismatch");

  Reader r(body, source);
  r.take(kMagic.size(), "magic");
  const std::uint32_t count = r.u32("tensor count");
  Checkpoint ckpt;
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint32_t len = r.u32("name length");
    t.name = std::string(r.take(len, "tensor name"));
    const auto tag = static_cast<unsigned char>(r.take(1, "type tag")[0]);
    if (tag != 0) throw DataError(kModule, source + ": unsupported element type in " + t.name);
    const std::uint32_t rank = r.u32("rank");
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      t.shape.push_back(r.u32("dimension"));
      n *= t.shape.back();
    }
    sizes.push_back(n);
    ckpt.tensors.push_back(std::move(t));
  }
  std::size_t total = 0;
  for (auto n : sizes) total += n;
  if (r.remaining() != total * 4) throw DataError(kModule, source + ": payload size does not match header");
  for (std::size_t i = 0; i < ckpt.tensors.size(); ++i) {
    auto& data = ckpt.tensors[i].data;
    data.resize(sizes[i]);
    for (auto& f : data) f = std::bit_cast<float>(r.u32("payload"));
  }
  return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_text_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) { return decode_checkpoint(read_binary_file(path), path.string()); }

Checkpoint make_model_checkpoint(const nn::UNet& net, ModelKind kind, int stride, const NoiseSchedule& sched) {
  Checkpoint ckpt;
  const auto& c = net.config();
  ckpt.tensors.push_back({"meta/arch",
                          {kArchSize},
                          {static_cast<float>(kind), static_cast<float>(c.in_channels),
                           static_cast<float>(c.out_channels), static_cast<float>(c.cond_channels),
                           static_cast<float>(c.base_width), static_cast<float>(c.width_mult[0]),
                           static_cast<float>(c.width_mult[1]), static_cast<float>(c.width_mult[2]),
                           static_cast<float>(c.time_dim), static_cast<float>(stride)}});
  NamedTensor betas{"meta/schedule", {static_cast<std::uint32_t>(sched.steps())}, {}};
  for (int t = 1; t <= sched.steps(); ++t) betas.data.push_back(static_cast<float>(sched.beta(t)));
  ckpt.tensors.push_back(std::move(betas));
  for (const auto& p : net.params()) {
    NamedTensor t{p.name, {}, {}};
    for (int d : p.shape) t.shape.push_back(static_cast<std::uint32_t>(d));
    t.data.reserve(p.value.size());
    for (double v : p.value) t.data.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

nn::UNet network_from_checkpoint(const Checkpoint& ckpt, ModelKind kind, const NoiseSchedule& sched, int* stride) {
  const NamedTensor* arch = ckpt.find("meta/arch");
  const NamedTensor* betas = ckpt.find("meta/schedule");
  if (!arch || arch->data.size() != kArchSize || !betas) throw DataError(kModule, "checkpoint lacks model metadata");
  const auto& a = arch->data;
  if (static_cast<int>(a[0]) != static_cast<int>(kind)) {
    throw DataError(kModule, kind == ModelKind::kDenoiser ? "checkpoint is not a denoiser" : "checkpoint is not a corrector");
  }
  if (betas->data.size() != static_cast<std::size_t>(sched.steps())) {
    throw DataError(kModule, "checkpoint was trained with a " + std::to_string(betas->data.size()) +
                                 "-step schedule, run uses " + std::to_string(sched.steps()));
  }
  for (int t = 1; t <= sched.steps(); ++t) {
    if (std::abs(betas->data[t - 1] - sched.beta(t)) > 1e-6 * sched.beta(t)) {
      throw DataError(kModule, "checkpoint noise schedule differs from the run schedule at t=" + std::to_string(t));
    }
  }
  nn::UNetConfig cfg;
  cfg.in_channels = static_cast<int>(a[1]);
  cfg.out_channels = static_cast<int>(a[2]);
  cfg.cond_channels = static_cast<int>(a[3]);
  cfg.base_width = static_cast<int>(a[4]);
  cfg.width_mult = {static_cast<int>(a[5]), static_cast<int>(a[6]), static_cast<int>(a[7])};
  cfg.time_dim = static_cast<int>(a[8]);
  if (stride) *stride = static_cast<int>(a[9]);

  nn::UNet net(cfg, 0);
  std::size_t used = 2;
  for (auto& p : net.params()) {
    const NamedTensor* t = ckpt.find(p.name);
    if (!t) throw DataError(kModule, "checkpoint is missing tensor " + p.name);
    if (t->shape.size() != p.shape.size() ||
        !std::equal(p.shape.begin(), p.shape.end(), t->shape.begin(),
                    [](int a, std::uint32_t b) { return static_cast<std::uint32_t>(a) == b; })) {
      throw DataError(kModule, "tensor " + p.name + " has the wrong shape");
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = t->data[i];
    ++used;
  }
  if (used != ckpt.tensors.size()) throw DataError(kModule, "checkpoint has tensors the architecture does not use");
  return net;
}

void save_denoiser(const fs::path& path, const TinyDenoiser& d, const NoiseSchedule& sched) {
  save_checkpoint(path, make_model_checkpoint(d.net(), ModelKind::kDenoiser, 1, sched));
}

TinyDenoiser load_denoiser(const fs::path& path, const NoiseSchedule& sched) {
  return TinyDenoiser(network_from_checkpoint(load_checkpoint(path), ModelKind::kDenoiser, sched));
}

void save_crt(const fs::path& path, const CrtModel& m, const NoiseSchedule& sched) {
  save_checkpoint(path, make_model_checkpoint(m.net(), ModelKind::kCorrector, m.stride(), sched));
}

CrtModel load_crt(const fs::path& path, const NoiseSchedule& sched) {
  int stride = 1;
  nn::UNet net = network_from_checkpoint(load_checkpoint(path), ModelKind::kCorrector, sched, &stride);
  return CrtModel(std::move(net), stride);
}

// ---- configuration ----

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

std::map<std::string, std::string> parse_key_values(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ParameterError(kModule, where + ": expected key=value");
    const std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) throw ParameterError(kModule, where + ": empty key");
    if (!out.emplace(key, value).second) throw ParameterError(kModule, where + ": duplicate key '" + key + "'");
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(kModule, path.string() + ": cannot open config");
  return parse_key_values(in, path.string());
}

int parse_int(const std::string& key, const std::string& value) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ParameterError(kModule, key + ": '" + value + "' is not an integer");
  }
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(v)) {
    throw ParameterError(kModule, key + ": '" + value + "' is not a finite number");
  }
  return v;
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ParameterError(kModule, key + ": '" + value + "' is not an unsigned integer");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on" || value == "yes") return true;
  if (value == "0" || value == "false" || value == "off" || value == "no") return false;
  throw ParameterError(kModule, key + ": '" + value + "' is not a boolean");
}

std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void ConfigRegistry::add(std::string key, int* target, std::string help) {
  add(key, [key, target](const std::string& v) { *target = parse_int(key, v); },
      [target] { return std::to_string(*target); }, std::move(help));
}

void ConfigRegistry::add(std::string key, double* target, std::string help) {
  add(key, [key, target](const std::string& v) { *target = parse_double(key, v); },
      [target] { return format_double(*target); }, std::move(help));
}

void ConfigRegistry::add(std::string key, std::uint64_t* target, std::string help) {
  add(key, [key, target](const std::string& v) { *target = parse_u64(key, v); },
      [target] { return std::to_string(*target); }, std::move(help));
}

void ConfigRegistry::add(std::string key, bool* target, std::string help) {
  add(key, [key, target](const std::string& v) { *target = parse_bool(key, v); },
      [target] { return std::string(*target ? "true" : "false"); }, std::move(help));
}

void ConfigRegistry::add(std::string key, std::string* target, std::string help) {
  add(key, [target](const std::string& v) { *target = v; }, [target] { return *target; }, std::move(help));
}

void ConfigRegistry::add(std::string key, std::function<void(const std::string&)> set,
                         std::function<std::string()> get, std::string help) {
  if (contains(key)) throw ParameterError(kModule, "config key '" + key + "' registered twice");
  entries_.push_back({std::move(key), std::move(help), std::move(set), std::move(get)});
}

bool ConfigRegistry::contains(const std::string& key) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.key == key; });
}

void ConfigRegistry::set(const std::string& key, const std::string& value) {
  for (auto& e : entries_) {
    if (e.key == key) {
      e.set(value);
      return;
    }
  }
  throw ParameterError(kModule, "unknown config key '" + key + "'");
}

std::string ConfigRegistry::get(const std::string& key) const {
  for (const auto& e : entries_) {
    if (e.key == key) return e.get();
  }
  throw ParameterError(kModule, "unknown config key '" + key + "'");
}

void ConfigRegistry::apply(const std::map<std::string, std::string>& values, const std::string& source) {
  for (const auto& [k, v] : values) {
    if (!contains(k)) throw ParameterError(kModule, source + ": unknown config key '" + k + "'");
  }
  for (const auto& [k, v] : values) set(k, v);
}

void ConfigRegistry::write(std::ostream& os) const {
  for (const auto& e : entries_) os << e.key << '=' << e.get() << '\n';
}

// ---- reports ----

void write_loss_csv(std::ostream& os, const TrainLog& log) {
  os << "epoch,step,loss\n";
  for (const auto& r : log.steps) os << r.epoch << ',' << r.step << ',' << format_double(r.loss) << '\n';
}

void write_loss_csv(const fs::path& path, const TrainLog& log) {
  std::ostringstream os;
  write_loss_csv(os, log);
  write_text_file(path, os.str());
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError(kModule, path.string() + ": cannot write");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataError(kModule, path.string() + ": write failed");
  }
  fs::rename(tmp, path);
}

std::string read_binary_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(kModule, path.string() + ": cannot open");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dpi

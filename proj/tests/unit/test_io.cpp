#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include "dpi/error.hpp"
#include "dpi/io.hpp"
#include "dpi/toy_data.hpp"

namespace fs = std::filesystem;

namespace dpi {
namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("dpi_io_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(PixelMapping, ByteRoundTrip) {
  for (int v = 0; v < 256; ++v) EXPECT_EQ(to_byte(from_byte(static_cast<std::uint8_t>(v))), v);
  EXPECT_EQ(from_byte(0), -1.0);
  EXPECT_EQ(from_byte(255), 1.0);
  EXPECT_EQ(to_byte(3.0), 255);
  EXPECT_EQ(to_byte(-3.0), 0);
}

TEST(Pnm, GreyAndColourRoundTrip) {
  const Image grey = make_toy_face(1, 0, 16);
  const Image back = decode_pnm(encode_pnm(grey));
  EXPECT_EQ(back.shape(), grey.shape());
  EXPECT_EQ(encode_pnm(back), encode_pnm(grey));
  for (std::size_t i = 0; i < grey.size(); ++i) EXPECT_NEAR(back[i], grey[i], 0.5 / 127.5 + 1e-12);

  Image rgb(3, 5, 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = from_byte(static_cast<std::uint8_t>(i * 17 % 256));
  EXPECT_EQ(decode_pnm(encode_pnm(rgb)), rgb);
  EXPECT_EQ(encode_pnm(rgb).substr(0, 2), "P6");
}

TEST(Pnm, HeaderWithComments) {
  const std::string bytes = std::string("P5\n# made by hand\n2 1\n255\n") + char(0) + char(255);
  const Image img = decode_pnm(bytes);
  EXPECT_EQ(img.shape(), (Shape{1, 2, 1}));
  EXPECT_EQ(img[1], 1.0);
}

TEST(Pnm, MalformedInputsAreDataErrors) {
  EXPECT_THROW(decode_pnm("P2\n1 1\n255\n0"), DataError);
  EXPECT_THROW(decode_pnm(std::string("P5\n2 2\n255\n") + "ab"), DataError);
  EXPECT_THROW(decode_pnm(std::string("P5\n1 1\n65535\n") + "ab"), DataError);
  EXPECT_THROW(decode_pnm("P5\n-1 1\n255\n"), DataError);
  EXPECT_THROW(read_pnm("/nonexistent/x.pgm"), DataError);
  EXPECT_THROW(encode_pnm(Image(2, 2, 2)), ParameterError);
}

TEST(Files, ListImagesSortedAndFiltered) {
  const fs::path dir = scratch_dir("list");
  write_pnm(dir / "b.pgm", Image(4, 4, 1));
  write_pnm(dir / "a.pgm", Image(4, 4, 1));
  write_text_file(dir / "notes.txt", "x");
  const auto files = list_images(dir);
  ASSERT_EQ(files.size(), 2u);
  EXPECT_EQ(files[0].filename(), "a.pgm");
  EXPECT_EQ(list_images(dir / "b.pgm").size(), 1u);
  EXPECT_THROW(list_images(dir / "missing"), DataError);
  const fs::path empty = scratch_dir("empty");
  EXPECT_THROW(list_images(empty), DataError);
  fs::remove_all(dir);
  fs::remove_all(empty);
}

TEST(Files, MaskPgmIsBlackAndWhite) {
  const fs::path dir = scratch_dir("mask");
  Mask m(2, 2, false);
  m.set(1, 0, true);
  write_mask_pgm(dir / "m.pgm", m);
  const Image img = read_pnm(dir / "m.pgm");
  EXPECT_EQ(img.at(0, 1, 0), 1.0);
  EXPECT_EQ(img.at(0, 0, 0), -1.0);
  fs::remove_all(dir);
}

Checkpoint sample_checkpoint() {
  Checkpoint c;
  c.tensors.push_back({"a", {2, 3}, {1, 2, 3, 4, 5, 6}});
  c.tensors.push_back({"b/c", {1}, {-0.25f}});
  return c;
}

TEST(Checkpoint, EncodeDecodeEncodeIsByteIdentical) {
  const std::string bytes = encode_checkpoint(sample_checkpoint());
  EXPECT_EQ(bytes.substr(0, 8), "DPICKPT1");
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(encode_checkpoint(back), bytes);
  ASSERT_NE(back.find("b/c"), nullptr);
  EXPECT_EQ(back.find("b/c")->data[0], -0.25f);
  EXPECT_EQ(back.find("zzz"), nullptr);
}

TEST(Checkpoint, CorruptionDetected) {
  std::string bytes = encode_checkpoint(sample_checkpoint());
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  EXPECT_THROW(decode_checkpoint(flipped), DataError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), DataError);
  EXPECT_THROW(decode_checkpoint(""), DataError);
}

TEST(Checkpoint, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Checkpoint, DenoiserSaveLoadSaveByteIdentical) {
  const fs::path dir = scratch_dir("den");
  const auto sched = NoiseSchedule::default_schedule();
  TinyDenoiser d(1, 4, 3);
  d.net().randomize(5);
  save_denoiser(dir / "d.ckpt", d, sched);
  const TinyDenoiser back = load_denoiser(dir / "d.ckpt", sched);
  save_denoiser(dir / "d2.ckpt", back, sched);
  EXPECT_EQ(read_binary_file(dir / "d.ckpt"), read_binary_file(dir / "d2.ckpt"));
  EXPECT_EQ(back.net().config(), d.net().config());
  EXPECT_THROW(load_crt(dir / "d.ckpt", sched), DataError);
  EXPECT_THROW(load_denoiser(dir / "d.ckpt", NoiseSchedule::linear(1000, 1e-4, 0.03)), DataError);
  EXPECT_THROW(load_denoiser(dir / "d.ckpt", NoiseSchedule::linear(500, 1e-4, 0.02)), DataError);
  fs::remove_all(dir);
}

TEST(Checkpoint, CorrectorKeepsStride) {
  const fs::path dir = scratch_dir("crt");
  const auto sched = NoiseSchedule::default_schedule();
  CrtModel m(3, 4, 4, 2);
  m.net().randomize(1);
  save_crt(dir / "c.ckpt", m, sched);
  const CrtModel back = load_crt(dir / "c.ckpt", sched);
  EXPECT_EQ(back.stride(), 4);
  EXPECT_EQ(back.parameter_count(), m.parameter_count());
  EXPECT_THROW(load_denoiser(dir / "c.ckpt", sched), DataError);
  fs::remove_all(dir);
}

TEST(Checkpoint, ExtraOrMissingTensorsRejected) {
  const auto sched = NoiseSchedule::default_schedule();
  const TinyDenoiser d(1, 4, 3);
  Checkpoint c = make_model_checkpoint(d.net(), ModelKind::kDenoiser, 1, sched);
  Checkpoint extra = c;
  extra.tensors.push_back({"stray", {1}, {0.0f}});
  EXPECT_THROW(network_from_checkpoint(extra, ModelKind::kDenoiser, sched), DataError);
  Checkpoint missing = c;
  missing.tensors.erase(missing.tensors.begin() + 3);
  EXPECT_THROW(network_from_checkpoint(missing, ModelKind::kDenoiser, sched), DataError);
  EXPECT_NO_THROW(network_from_checkpoint(c, ModelKind::kDenoiser, sched));
}

TEST(Config, ParseKeyValues) {
  std::istringstream in("# comment\n a = 1 \n\nb=two # trailing\n");
  const auto kv = parse_key_values(in, "test");
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two");
  std::istringstream dup("a=1\na=2\n");
  EXPECT_THROW(parse_key_values(dup, "dup"), ParameterError);
  std::istringstream bad("just words\n");
  EXPECT_THROW(parse_key_values(bad, "bad"), ParameterError);
}

TEST(Config, RegistryRoundTrip) {
  int n = 3;
  double x = 0.5;
  std::uint64_t seed = 7;
  bool flag = false;
  std::string name = "id";
  ConfigRegistry reg;
  reg.add("n", &n);
  reg.add("x", &x);
  reg.add("seed", &seed);
  reg.add("flag", &flag);
  reg.add("name", &name);
  reg.apply({{"n", "12"}, {"x", "0.1"}, {"flag", "true"}}, "test");
  EXPECT_EQ(n, 12);
  EXPECT_EQ(x, 0.1);
  EXPECT_TRUE(flag);
  EXPECT_THROW(reg.apply({{"nn", "1"}}, "typo"), ParameterError);
  EXPECT_THROW(reg.set("n", "1.5"), ParameterError);
  EXPECT_THROW(reg.set("seed", "-1"), ParameterError);
  EXPECT_THROW(reg.set("flag", "maybe"), ParameterError);
  EXPECT_THROW(reg.add("n", &n), ParameterError);

  std::ostringstream os;
  reg.write(os);
  EXPECT_EQ(os.str(), "n=12\nx=0.1\nseed=7\nflag=true\nname=id\n");
  std::istringstream in(os.str());
  int n2 = 0;
  double x2 = 0;
  std::uint64_t seed2 = 0;
  bool flag2 = false;
  std::string name2;
  ConfigRegistry again;
  again.add("n", &n2);
  again.add("x", &x2);
  again.add("seed", &seed2);
  again.add("flag", &flag2);
  again.add("name", &name2);
  again.apply(parse_key_values(in, "manifest"), "manifest");
  EXPECT_EQ(n2, n);
  EXPECT_EQ(x2, x);
  EXPECT_EQ(seed2, seed);
  EXPECT_EQ(flag2, flag);
  EXPECT_EQ(name2, name);
}

TEST(Config, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1e-4, 1.0 / 3.0, 12345.678, -2.5e-300}) {
    EXPECT_EQ(parse_double("v", format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.02), "0.02");
  EXPECT_THROW(parse_double("v", "nan"), ParameterError);
}

TEST(Reports, LossCsv) {
  TrainLog log;
  log.steps.push_back({0, 0, 0.5});
  log.steps.push_back({0, 1, 0.25});
  std::ostringstream os;
  write_loss_csv(os, log);
  EXPECT_EQ(os.str(), "epoch,step,loss\n0,0,0.5\n0,1,0.25\n");
}

}  // namespace
}  // namespace dpi

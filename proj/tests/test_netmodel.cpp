#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace dwd;
using namespace dwd::test;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dwd_netmodel_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

NetworkModel mixed_model(std::uint64_t seed) {
  NetworkModel m;
  m.name = "mixed";
  m.input = {3, 9, 9};
  RegularConvLayer a = random_regular(4, 3, 3, 3, seed, {1, 1}, {1, 1});
  a.bias = std::vector<float>{0.1f, -0.2f, 0.3f, 0.0f};
  SeparableConvLayer b = random_separable(5, 4, 3, 3, seed + 10, {2, 2}, {1, 1});
  RegularConvLayer c = random_regular(2, 5, 1, 1, seed + 20);
  m.layers = {{a, Activation::relu}, {b, Activation::identity}, {c, Activation::relu}};
  return m;
}

ErrorKind load_error(const std::filesystem::path& p) {
  try {
    deserialize_model(p);
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "load succeeded";
  return ErrorKind::input;
}

}  // namespace

TEST(Flops, SeparableRatioN64) {
  NetworkModel ref;
  ref.input = {64, 8, 8};
  ref.layers = {{random_regular(64, 64, 3, 3, 1, {1, 1}, {1, 1}), Activation::identity}};
  NetworkModel sep = ref;
  sep.layers[0].conv = random_separable(64, 64, 3, 3, 2, {1, 1}, {1, 1});
  const FlopsReport r = flops_and_speedup(ref, &sep, ref.input);
  EXPECT_NEAR(*r.speedup, 64.0 * 9 / (9 + 64), 1e-12);
  EXPECT_NEAR(*r.speedup, 7.89, 0.005);
}

TEST(Flops, SeparableRatioN512InBand) {
  const double ratio = double(per_position_cost(random_regular(512, 512, 3, 3, 1))) /
                       double(per_position_cost(random_separable(512, 512, 3, 3, 2)));
  EXPECT_NEAR(ratio, 512.0 * 9 / (9 + 512), 1e-12);
  EXPECT_GE(ratio, 8.0);
  EXPECT_LE(ratio, 9.0);
}

TEST(Flops, SeparableRatioN128) {
  for (std::size_t c : {1, 16, 64}) {
    const double ratio = double(per_position_cost(random_regular(128, c, 3, 3, 1))) /
                         double(per_position_cost(random_separable(128, c, 3, 3, 2)));
    EXPECT_NEAR(ratio, 1152.0 / 137.0, 1e-12);
  }
}

TEST(Flops, PointwiseAgainstItself) {
  NetworkModel m;
  m.input = {4, 5, 5};
  m.layers = {{random_regular(3, 4, 1, 1, 1), Activation::identity}};
  EXPECT_EQ(*flops_and_speedup(m, &m, m.input).speedup, 1.0);
}

TEST(Flops, TotalsUseOutputPositions) {
  const NetworkModel m = mixed_model(3);
  const ModelFlops f = model_flops(m, m.input);
  ASSERT_EQ(f.layers.size(), 3u);
  EXPECT_EQ(f.layers[0].positions, 81u);
  EXPECT_EQ(f.layers[0].per_position, 4u * 3 * 9);
  EXPECT_EQ(f.layers[1].positions, 25u);
  EXPECT_EQ(f.layers[1].per_position, 4u * 9 + 5u * 4);
  EXPECT_EQ(f.layers[2].per_position, 10u);
  EXPECT_EQ(f.total, 81u * 108 + 25u * 56 + 25u * 10);
}

TEST(Flops, FoldMultipliesCostByRatio) {
  const SeparableConvLayer s = random_separable(40, 12, 3, 3, 4);
  const double ratio = double(per_position_cost(fold_separable(s))) / double(per_position_cost(s));
  EXPECT_DOUBLE_EQ(ratio, 40.0 * 9 / (9 + 40));
}

TEST(Flops, IncompatibleSignature) {
  const NetworkModel m = mixed_model(5);
  EXPECT_THROW(model_flops(m, {2, 9, 9}), Error);
}

TEST(Forward, IdentityLayerPassthrough) {
  NetworkModel m;
  m.input = {1, 4, 4};
  RegularConvLayer l;
  l.weights = Tensor4(Role::weight_nckk, {1, 1, 1, 1}, 1.0f);
  m.layers = {{l, Activation::identity}};
  const Tensor4 x = random_tensor(Role::activation_nchw, {1, 1, 4, 4}, 1);
  EXPECT_EQ(forward(m, x), x);
}

TEST(Forward, FoldedModelMatchesSeparable) {
  const NetworkModel m = mixed_model(6);
  NetworkModel folded = m;
  for (auto& l : folded.layers)
    if (const auto* s = std::get_if<SeparableConvLayer>(&l.conv)) l.conv = fold_separable(*s);
  const Tensor4 x = random_tensor(Role::activation_nchw, {2, 3, 9, 9}, 7);
  EXPECT_LE(relative_difference(forward(folded, x), forward(m, x)), 1e-5);
}

TEST(Forward, ReluInactiveOnNonNegativeData) {
  NetworkModel m;
  m.input = {2, 5, 5};
  RegularConvLayer a = random_regular(3, 2, 3, 3, 8, {1, 1}, {1, 1});
  RegularConvLayer b = random_regular(2, 3, 3, 3, 9, {1, 1}, {1, 1});
  for (float& v : a.weights.data()) v = std::abs(v);
  for (float& v : b.weights.data()) v = std::abs(v);
  m.layers = {{a, Activation::relu}, {b, Activation::relu}};
  NetworkModel lin = m;
  for (auto& l : lin.layers) l.activation = Activation::identity;
  Tensor4 x = random_tensor(Role::activation_nchw, {1, 2, 5, 5}, 10);
  for (float& v : x.data()) v = std::abs(v);
  EXPECT_EQ(forward(m, x), forward(lin, x));
}

TEST(Forward, SignatureMismatch) {
  const NetworkModel m = mixed_model(11);
  EXPECT_THROW(forward(m, random_tensor(Role::activation_nchw, {1, 2, 9, 9}, 1)), Error);
}

TEST(Model, ValidateRejectsIncompatibleChain) {
  NetworkModel m = mixed_model(12);
  m.layers[2].conv = random_regular(2, 3, 1, 1, 1);
  EXPECT_THROW(m.validate(), Error);
  m.layers.clear();
  EXPECT_THROW(m.validate(), Error);
}

TEST(Serialize, RoundTripIsBitExact) {
  const auto dir = temp_dir("roundtrip");
  const NetworkModel m = mixed_model(13);
  serialize_model(m, dir / "m.json");
  const NetworkModel back = deserialize_model(dir / "m.json");
  EXPECT_EQ(back, m);
  const Tensor4 x = random_tensor(Role::activation_nchw, {1, 3, 9, 9}, 14);
  EXPECT_EQ(forward(back, x), forward(m, x));
}

TEST(Serialize, SpecialValuesSurvive) {
  const auto dir = temp_dir("special");
  NetworkModel m = mixed_model(15);
  auto w = std::get<RegularConvLayer>(m.layers[0].conv).weights.data();
  w[0] = -0.0f;
  w[1] = std::numeric_limits<float>::denorm_min();
  w[2] = std::numeric_limits<float>::max();
  serialize_model(m, dir / "m.json");
  const NetworkModel back = deserialize_model(dir / "m.json");
  const auto wb = std::get<RegularConvLayer>(back.layers[0].conv).weights.data();
  EXPECT_TRUE(std::signbit(wb[0]));
  EXPECT_EQ(wb[1], w[1]);
  EXPECT_EQ(wb[2], w[2]);
}

TEST(Serialize, ManifestIsReadableJson) {
  const auto dir = temp_dir("manifest");
  serialize_model(mixed_model(16), dir / "m.json");
  std::ifstream in(dir / "m.json");
  const nlohmann::json j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("format"), "dwd-model");
  EXPECT_EQ(j.at("version"), 1);
  EXPECT_EQ(j.at("layers").size(), 3u);
  EXPECT_EQ(j.at("layers")[1].at("kind"), "separable");
  EXPECT_EQ(j.at("buffer").at("bytes").get<std::size_t>(), std::filesystem::file_size(dir / "m.json.bin"));
}

TEST(Serialize, CorruptedBufferFailsChecksum) {
  const auto dir = temp_dir("checksum");
  serialize_model(mixed_model(17), dir / "m.json");
  std::vector<unsigned char> bytes = read_file_bytes(dir / "m.json.bin");
  bytes[7] ^= 0x40;
  write_file_atomic(dir / "m.json.bin", bytes);
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::checksum);
}

TEST(Serialize, WrongChecksumInManifest) {
  const auto dir = temp_dir("manifestcrc");
  serialize_model(mixed_model(18), dir / "m.json");
  std::ifstream in(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["buffer"]["crc32"] = "00000000";
  write_text_atomic(dir / "m.json", j.dump());
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::checksum);
}

TEST(Serialize, ShortBufferIsTruncated) {
  const auto dir = temp_dir("truncated");
  serialize_model(mixed_model(19), dir / "m.json");
  std::vector<unsigned char> bytes = read_file_bytes(dir / "m.json.bin");
  bytes.resize(bytes.size() - 12);
  write_file_atomic(dir / "m.json.bin", bytes);
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::truncated);
}

TEST(Serialize, ManifestDeclaringLongerBufferIsTruncated) {
  const auto dir = temp_dir("declared");
  serialize_model(mixed_model(20), dir / "m.json");
  std::ifstream in(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["buffer"]["bytes"] = j["buffer"]["bytes"].get<std::size_t>() + 400;
  write_text_atomic(dir / "m.json", j.dump());
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::truncated);
}

TEST(Serialize, SectionPastEndIsTruncated) {
  const auto dir = temp_dir("section");
  serialize_model(mixed_model(21), dir / "m.json");
  std::ifstream in(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["layers"][0]["weights"]["offset"] = 100000;
  write_text_atomic(dir / "m.json", j.dump());
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::truncated);
}

TEST(Serialize, UnknownVersion) {
  const auto dir = temp_dir("version");
  serialize_model(mixed_model(22), dir / "m.json");
  std::ifstream in(dir / "m.json");
  nlohmann::json j = nlohmann::json::parse(in);
  j["version"] = 2;
  write_text_atomic(dir / "m.json", j.dump());
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::format_version);
}

TEST(Serialize, GarbageManifestIsMalformed) {
  const auto dir = temp_dir("garbage");
  write_text_atomic(dir / "m.json", "{ not json");
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::malformed);
  write_text_atomic(dir / "m.json", R"({"format":"dwd-model","version":1})");
  EXPECT_EQ(load_error(dir / "m.json"), ErrorKind::malformed);
}

TEST(Serialize, MissingFileIsIo) {
  EXPECT_EQ(load_error(temp_dir("missing") / "nope.json"), ErrorKind::io);
}

TEST(Serialize, NoTemporaryFilesLeft) {
  const auto dir = temp_dir("atomic");
  serialize_model(mixed_model(23), dir / "m.json");
  std::size_t files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    EXPECT_NE(e.path().extension(), ".tmp");
    ++files;
  }
  EXPECT_EQ(files, 2u);
}

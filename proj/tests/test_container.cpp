#include <gtest/gtest.h>

#include "nlaic/container.hpp"
#include "nlaic/trainer.hpp"
#include "test_util.hpp"

using namespace nlaic;
using nlaic::testing::random_tensor;

namespace {

Image test_image(int w, int h, std::uint64_t seed) {
  const auto data = synthetic_dataset(1, round_up(std::max(w, h), 64), seed);
  return crop(tensor_to_image(data[0]), w, h);
}

LoadedModel model(ContextMode mode, std::uint64_t seed = 1) {
  NetConfig cfg;
  cfg.N = 4;
  cfg.context_mode = mode;
  auto ps = init_params(cfg, seed);
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps.name(i).rfind("context.", 0) == 0 || ps.name(i).find(".w_z") != std::string::npos)
      ps.at(i) = random_tensor(ps.at(i).shape(), seed + i, -0.2, 0.2).cast<float>();
  return LoadedModel::from_bytes(serialize_checkpoint(cfg, ps));
}

}  // namespace

TEST(Ppm, RoundTripAndComments) {
  const auto img = test_image(5, 3, 1);
  EXPECT_EQ(parse_ppm(serialize_ppm(img)), img);
  const std::string text = "P6\n# made by hand\n2 1\n255\n";
  std::vector<std::uint8_t> bytes(text.begin(), text.end());
  for (std::uint8_t b : {1, 2, 3, 4, 5, 6}) bytes.push_back(b);
  const auto two = parse_ppm(bytes);
  EXPECT_EQ(two.width, 2);
  EXPECT_EQ(two.at(2, 0, 1), 6);
}

TEST(Ppm, RejectsOtherFormats) {
  auto make = [](const std::string& s) { return std::vector<std::uint8_t>(s.begin(), s.end()); };
  EXPECT_THROW(parse_ppm(make("P3\n1 1\n255\n0 0 0\n")), FormatError);
  EXPECT_THROW(parse_ppm(make("P6\n1 1\n65535\n")), FormatError);
  EXPECT_THROW(parse_ppm(make("P6\n2 2\n255\nabc")), FormatError);
  EXPECT_THROW(parse_ppm(make("")), FormatError);
}

TEST(Padding, EdgeReplicationAndCrop) {
  const auto img = test_image(70, 30, 2);
  const auto p = pad_edge(img, 64);
  EXPECT_EQ(p.width, 128);
  EXPECT_EQ(p.height, 64);
  for (int c = 0; c < 3; ++c) {
    EXPECT_EQ(p.at(c, 10, 100), img.at(c, 10, 69));
    EXPECT_EQ(p.at(c, 50, 5), img.at(c, 29, 5));
    EXPECT_EQ(p.at(c, 63, 127), img.at(c, 29, 69));
  }
  EXPECT_EQ(crop(p, 70, 30), img);
  EXPECT_EQ(round_up(1, 64), 64);
  EXPECT_EQ(round_up(128, 64), 128);
  EXPECT_EQ(round_up(129, 64), 192);
}

TEST(Pixels, TensorConversionRoundTrips) {
  const auto img = test_image(9, 4, 3);
  EXPECT_EQ(tensor_to_image(image_to_tensor(img)), img);
  Tensor<float> t({3, 1, 1}, {-0.2f, 0.5f, 1.7f});
  const auto q = tensor_to_image(t);
  EXPECT_EQ(q.at(0, 0, 0), 0);
  EXPECT_EQ(q.at(1, 0, 0), 128);  // 127.5 rounds away from zero
  EXPECT_EQ(q.at(2, 0, 0), 255);
}

TEST(ContainerFormat, RoundTripAndLayout) {
  Container c;
  c.flags = 1;
  c.hash = {1, 2, 3, 4, 5, 6, 7, 8};
  c.orig_w = 70;
  c.orig_h = 30;
  c.padded_w = 128;
  c.padded_h = 64;
  c.N = 4;
  c.y_bounds = {-12, 9};
  c.z_bounds = {-3, 4};
  c.z_bytes = {9, 8, 7};
  c.y_bytes = {1, 2, 3, 4, 5};
  const auto bytes = serialize_container(c);
  EXPECT_EQ(bytes.size(), std::size_t(kContainerFixedBytes) + 3 + 5);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "NLIC");
  const auto back = parse_container(bytes);
  EXPECT_EQ(serialize_container(back), bytes);
  EXPECT_TRUE(back.joint());
  EXPECT_EQ(back.y_bounds.n_min, -12);
  EXPECT_EQ(back.z_bytes, c.z_bytes);
}

TEST(ContainerFormat, DistinguishesFailureKinds) {
  Container c;
  c.orig_w = c.orig_h = 64;
  c.padded_w = c.padded_h = 64;
  c.N = 4;
  c.y_bytes = {1, 2, 3, 4, 5, 6};
  const auto good = serialize_container(c);

  auto bad_magic = good;
  bad_magic[1] = 'X';
  EXPECT_THROW(parse_container(bad_magic), FormatError);
  auto bad_version = good;
  bad_version[4] = 9;
  EXPECT_THROW(parse_container(bad_version), VersionError);
  auto flipped = good;
  flipped[40] ^= 0x10;
  EXPECT_THROW(parse_container(flipped), ChecksumError);
  for (std::size_t keep = 0; keep < good.size(); ++keep) {
    const std::vector<std::uint8_t> cut(good.begin(), good.begin() + std::ptrdiff_t(keep));
    EXPECT_THROW(parse_container(cut), FormatError) << keep;
  }
}

TEST(ModelHash, DependsOnEveryByte) {
  const auto ckpt = serialize_checkpoint(NetConfig{.N = 4}, init_params(NetConfig{.N = 4}, 1));
  auto other = ckpt;
  other.back() ^= 1;
  EXPECT_NE(model_hash(ckpt), model_hash(other));
  EXPECT_EQ(hex(model_hash(ckpt)).size(), 16u);
  // FNV-1a 64 offset basis 0xcbf29ce484222325, stored little-endian.
  EXPECT_EQ(hex(model_hash({})), "25232284e49cf2cb");
}

class Codec : public ::testing::TestWithParam<ContextMode> {};

TEST_P(Codec, RoundTripRecoversLatentsExactly) {
  const auto m = model(GetParam());
  const auto img = test_image(70, 50, 4);
  const auto enc = encode_image(m, img);
  const auto dec = decode_image(m, enc.bytes);
  EXPECT_EQ(dec.y_hat, enc.y_hat);
  EXPECT_EQ(dec.image.width, 70);
  EXPECT_EQ(dec.image.height, 50);
  EXPECT_NEAR(enc.bpp_actual, 8.0 * double(enc.bytes.size()) / (70 * 50), 1e-12);
  EXPECT_GT(enc.bits_est, 0);
}

TEST_P(Codec, EncodingIsDeterministic) {
  const auto img = test_image(64, 64, 5);
  EXPECT_EQ(encode_image(model(GetParam()), img).bytes, encode_image(model(GetParam()), img).bytes);
}

TEST_P(Codec, RefusesOtherModels) {
  const auto img = test_image(64, 64, 6);
  const auto enc = encode_image(model(GetParam(), 1), img);
  EXPECT_THROW(decode_image(model(GetParam(), 2), enc.bytes), ModelMismatchError);
}

TEST_P(Codec, TruncationFailsCleanly) {
  const auto m = model(GetParam());
  const auto enc = encode_image(m, test_image(64, 64, 7));
  for (std::size_t keep : {std::size_t(0), std::size_t(10), std::size_t(53), enc.bytes.size() / 2,
                           enc.bytes.size() - 1}) {
    const std::vector<std::uint8_t> cut(enc.bytes.begin(), enc.bytes.begin() + std::ptrdiff_t(keep));
    EXPECT_THROW(decode_image(m, cut), FormatError) << keep;
  }
}

INSTANTIATE_TEST_SUITE_P(Modes, Codec, ::testing::Values(ContextMode::Baseline, ContextMode::Joint));

TEST(NlamMasks, OnePerUnmaskedNlam) {
  const auto img = test_image(64, 64, 8);
  const auto masks = nlam_masks(model(ContextMode::Baseline), img);
  EXPECT_FALSE(masks.empty());
  // float sigmoid may round to the endpoints on 8-bit-scale activations
  for (const auto& [name, m] : masks) {
    EXPECT_GE(m.vec().minCoeff(), 0.0f) << name;
    EXPECT_LE(m.vec().maxCoeff(), 1.0f) << name;
    EXPECT_LT(m.vec().minCoeff(), m.vec().maxCoeff()) << name;
  }
  NetConfig ablated;
  ablated.N = 4;
  ablated.remove_all_masks = true;
  const auto none = LoadedModel::from_bytes(serialize_checkpoint(ablated, init_params(ablated, 1)));
  EXPECT_TRUE(nlam_masks(none, img).empty());
}

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "cplx/train.hpp"
#include "support/oracles.hpp"

namespace cplx {
namespace {

using testing::random_tensor;

TEST(ParamCount, HandCountedTotals) {
  // conv 256x1x1x3 + 256, conv 80x256x2x3 + 80, dense 256x(80*124) + 256, dense 11x256 + 11
  EXPECT_EQ(param_count(model_spec("CNN2")), 1024u + 122960u + 2539776u + 2827u);
  EXPECT_EQ(param_count(model_spec("CNN2")), 2666587u);
  EXPECT_EQ(param_count(model_spec("CNN2-257")), 2676519u);
  // complex taps 256x1x2x3 with a complex bias 256x2, then the same tail
  EXPECT_EQ(param_count(model_spec("Complex")), 2667611u);
}

TEST(ParamCount, OrderingAndRelativeGap) {
  const auto cnn2 = param_count(model_spec("CNN2"));
  const auto wide = param_count(model_spec("CNN2-257"));
  const auto cplx = param_count(model_spec("Complex"));
  EXPECT_GT(wide, cplx);
  EXPECT_GT(cplx, cnn2);
  const double gap = static_cast<double>(wide - cplx) / static_cast<double>(cplx);
  EXPECT_GE(gap, 0.001);
  EXPECT_LE(gap, 0.006);
}

TEST(ParamCount, WiderDenseLayerStrictlyIncreasesCount) {
  for (const auto& name : architecture_names()) {
    auto s = model_spec(name);
    const auto before = param_count(s);
    s.dense_width *= 2;
    EXPECT_GT(param_count(s), before);
  }
}

TEST(ParamCount, BuiltModelAgreesWithSpec) {
  for (const auto& name : architecture_names()) {
    EXPECT_EQ(build(name, 1).param_count(), param_count(model_spec(name)));
  }
}

TEST(Build, Cnn2LayerSequence) {
  const auto m = build("CNN2", 0);
  const auto& l = m.layers();
  ASSERT_EQ(l.size(), 4u);
  EXPECT_EQ(l[0].kind, LayerKind::Conv);
  EXPECT_EQ(l[0].weights.shape(), (Shape{256, 1, 1, 3}));
  EXPECT_EQ(l[1].weights.shape(), (Shape{80, 256, 2, 3}));
  EXPECT_EQ(l[2].weights.shape(), (Shape{256, 80 * 124}));
  EXPECT_EQ(l[3].weights.shape(), (Shape{11, 256}));
  for (const auto& layer : l) {
    EXPECT_EQ(layer.bias.dim(0), layer.weights.dim(0));
    for (const float b : layer.bias.data()) EXPECT_EQ(b, 0.0f);
  }
  EXPECT_EQ(m.spec().dropout, 0.5);
}

TEST(Build, VariantsDifferOnlyWhereExpected) {
  const auto a = model_spec("CNN2"), b = model_spec("CNN2-257"), c = model_spec("Complex");
  auto b_as_a = b;
  b_as_a.name = a.name;
  b_as_a.dense_width = a.dense_width;
  EXPECT_EQ(b_as_a, a);
  auto c_as_a = c;
  c_as_a.name = a.name;
  c_as_a.complex_first = false;
  EXPECT_EQ(c_as_a, a);
  const auto m = build(c, 0);
  EXPECT_EQ(m.layers()[0].kind, LayerKind::ComplexConv);
  EXPECT_EQ(m.layers()[0].weights.shape(), (Shape{256, 1, 2, 3}));
  EXPECT_EQ(m.layers()[0].bias.shape(), (Shape{256, 2}));
}

TEST(Build, UnknownNameIsConfigError) {
  EXPECT_THROW(model_spec("ResNet"), ConfigError);
  EXPECT_THROW(build("cnn2", 0), ConfigError);
}

TEST(Build, SameSeedBitwiseIdenticalParameters) {
  const auto a = build("Complex", 42), b = build("Complex", 42), c = build("Complex", 43);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].numel(), pb[i].numel());
    EXPECT_EQ(0, std::memcmp(pa[i].data().data(), pb[i].data().data(), pa[i].numel() * sizeof(float)));
    any_diff |= std::memcmp(pa[i].data().data(), pc[i].data().data(), pa[i].numel() * sizeof(float)) != 0;
  }
  EXPECT_TRUE(any_diff);
}

TEST(Forward, ZeroInputGivesFiniteLogits) {
  for (const auto& name : architecture_names()) {
    const auto logits = build(name, 5).forward(Tensor::zeros({2, 2, 128}), false);
    EXPECT_EQ(logits.shape(), (Shape{2, 11}));
    EXPECT_TRUE(logits.all_finite());
  }
}

TEST(Forward, WrongInputShapeIsDimensionError) {
  const auto m = build("CNN2", 0);
  EXPECT_THROW(m.forward(Tensor::zeros({2, 2, 127}), false), DimensionError);
  EXPECT_THROW(m.forward(Tensor::zeros({2, 3, 128}), false), DimensionError);
  EXPECT_THROW(m.forward(Tensor::zeros({2, 128}), false), DimensionError);
  EXPECT_THROW(m.forward(Tensor::zeros({1, 2, 128}), true), ContractError);
}

TEST(Forward, RowIsIndependentOfBatchSize) {
  std::mt19937_64 rng(6);
  const auto x = random_tensor<float>({64, 2, 128}, rng);
  for (const auto& name : architecture_names()) {
    const auto m = build(name, 7);
    const auto all = m.forward(x, false);
    const std::size_t pick[] = {13};
    const auto one = m.forward(gather_rows(x, pick), false);
    for (std::size_t k = 0; k < 11; ++k) EXPECT_EQ(all.at({13, k}), one.at({0, k})) << name;
  }
}

TEST(Forward, UntrainedModelsSitAtChance) {
  std::mt19937_64 rng(8);
  const std::size_t per_class = 20;
  const auto x = random_tensor<float>({11 * per_class, 2, 128}, rng);
  std::vector<int> labels(11 * per_class);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 11);
  for (const auto& name : architecture_names()) {
    double acc = 0;
    const int seeds = 5;
    for (int s = 0; s < seeds; ++s) {
      const auto pred = predict(build(name, 100 + s), x);
      std::size_t correct = 0;
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
      acc += static_cast<double>(correct) / static_cast<double>(pred.size());
    }
    EXPECT_NEAR(acc / seeds, 1.0 / 11.0, 0.03) << name;
  }
}

TEST(Forward, ComplexLayerWithRealTapsActsPerChannel) {
  std::mt19937_64 rng(9);
  const auto x = random_tensor<float>({3, 1, 2, 128}, rng);
  const auto re = random_tensor<float>({16, 1, 1, 3}, rng);
  std::vector<float> taps(16 * 2 * 3, 0.0f);
  for (std::size_t f = 0; f < 16; ++f) {
    for (std::size_t m = 0; m < 3; ++m) taps[f * 6 + m] = re.at({f, 0, 0, m});
  }
  const auto complex_out = complex_conv(x, Tensor({16, 1, 2, 3}, taps));
  const auto real_out = xcorr2d_valid(x, re);
  ASSERT_EQ(complex_out.shape(), real_out.shape());
  for (std::size_t i = 0; i < real_out.numel(); ++i) EXPECT_NEAR(complex_out[i], real_out[i], 1e-5);
}

TEST(Model, CloneIsIndependentAndFreezable) {
  auto m = build("CNN2", 1);
  auto c = m.clone();
  c.set_trainable(false);
  c.layers()[3].bias.mutable_data()[0] = 99.0f;
  EXPECT_EQ(m.layers()[3].bias[0], 0.0f);
  EXPECT_TRUE(m.layers()[0].weights.requires_grad());
  EXPECT_FALSE(c.layers()[0].weights.requires_grad());
}

class CheckpointTest : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "cplx_models_test";
  void SetUp() override { std::filesystem::create_directories(dir); }
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(CheckpointTest, RoundTripIsBitExact) {
  for (const auto& name : architecture_names()) {
    const auto m = build(name, 77);
    const auto path = (dir / (name + ".ckpt")).string();
    save_checkpoint(m, path);
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back.spec(), m.spec());
    EXPECT_EQ(back.seed(), 77u);
    const auto a = m.parameters(), b = back.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(0, std::memcmp(a[i].data().data(), b[i].data().data(), a[i].numel() * sizeof(float)));
    }
    EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
  }
}

TEST_F(CheckpointTest, CorruptionReportsOffsets) {
  auto bytes = encode_checkpoint(build("CNN2", 1));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    decode_checkpoint(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  auto truncated = bytes;
  truncated.resize(1000);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_LE(e.offset(), 1000u);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  auto renamed = bytes;
  renamed[10] = 'X';  // "CNN2" -> "XNN2"
  EXPECT_THROW(decode_checkpoint(renamed), FormatError);
  EXPECT_THROW(load_checkpoint((dir / "missing.ckpt").string()), FormatError);
}

TEST_F(CheckpointTest, ShapeMismatchAgainstSpecIsFormatError) {
  // Relabel a CNN2 checkpoint as Complex: the first layer shapes disagree.
  auto bytes = encode_checkpoint(build("CNN2", 1));
  detail::ByteWriter w;
  w.put_bytes("CPLX");
  w.put<std::uint32_t>(1);
  w.put<std::uint16_t>(7);
  w.put_bytes("Complex");
  auto out = w.bytes();
  out.insert(out.end(), bytes.begin() + 4 + 4 + 2 + 4, bytes.end());
  EXPECT_THROW(decode_checkpoint(out), FormatError);
}

}  // namespace
}  // namespace cplx

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cplx/train.hpp"
#include "support/oracles.hpp"

namespace cplx {
namespace {

using testing::random_tensor;

TEST(Dropout, InferenceAndZeroRateAreIdentity) {
  std::mt19937_64 rng(1);
  const auto x = random_tensor<float>({4, 9}, rng);
  const auto a = dropout(x, 0.5, false, rng);
  const auto b = dropout(x, 0.0, true, rng);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    EXPECT_EQ(a[i], x[i]);
    EXPECT_EQ(b[i], x[i]);
  }
}

TEST(Dropout, HalfRatePreservesMeanOfOnes) {
  std::mt19937_64 rng(2);
  const auto y = dropout(Tensor::full({100000}, 1.0f), 0.5, true, rng);
  double mean = 0;
  std::size_t zeros = 0;
  for (const float v : y.data()) {
    mean += v;
    zeros += v == 0.0f;
    EXPECT_TRUE(v == 0.0f || v == 2.0f);
  }
  mean /= static_cast<double>(y.numel());
  EXPECT_NEAR(mean, 1.0, 0.015);
  EXPECT_NEAR(static_cast<double>(zeros) / 1e5, 0.5, 0.01);
}

TEST(Dropout, RateOfOneOrMoreIsContractError) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(dropout(Tensor::zeros({3}), 1.0, true, rng), ContractError);
  EXPECT_THROW(dropout(Tensor::zeros({3}), 1.5, false, rng), ContractError);
  EXPECT_THROW(dropout(Tensor::zeros({3}), -0.1, true, rng), ContractError);
}

TEST(SoftmaxXent, UniformLogitsGiveLogK) {
  const auto y = one_hot<float>({4}, 11);
  const auto loss = softmax_xent(Tensor::full({1, 11}, 0.3f), y);
  EXPECT_NEAR(loss.item(), std::log(11.0), 1e-6);
  EXPECT_NEAR(loss.item(), 2.3979, 1e-4);
}

TEST(SoftmaxXent, HugeCorrectLogitDoesNotOverflow) {
  std::vector<float> z(11, 0.0f);
  z[2] = 1000.0f;
  const auto loss = softmax_xent(Tensor({1, 11}, z), one_hot<float>({2}, 11));
  EXPECT_TRUE(std::isfinite(loss.item()));
  EXPECT_NEAR(loss.item(), 0.0, 1e-6);
  const auto p = softmax(Tensor({1, 11}, z));
  EXPECT_TRUE(p.all_finite());
}

TEST(SoftmaxXent, MatchesLongDoubleReference) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const auto z = random_tensor<float>({4, 11}, rng, -5, 5);
    std::vector<int> labels(4);
    for (auto& l : labels) l = static_cast<int>(rng() % 11);
    long double ref = 0;
    for (std::size_t r = 0; r < 4; ++r) {
      long double total = 0;
      for (std::size_t k = 0; k < 11; ++k) total += std::exp(static_cast<long double>(z.at({r, k})));
      ref -= static_cast<long double>(z.at({r, static_cast<std::size_t>(labels[r])})) - std::log(total);
    }
    ref /= 4;
    const auto loss = softmax_xent(z, one_hot<float>(labels, 11));
    EXPECT_NEAR(loss.item(), static_cast<double>(ref), 1e-6 * std::max(1.0, static_cast<double>(ref)));
    EXPECT_GE(loss.item(), 0.0f);
  }
}

TEST(SoftmaxXent, LabelRowsMustSumToOne) {
  EXPECT_THROW(softmax_xent(Tensor::zeros({1, 3}), Tensor({1, 3}, {0.5f, 0.4f, 0.0f})), ContractError);
  EXPECT_THROW(softmax_xent(Tensor::zeros({1, 3}), Tensor({1, 3}, {1.0f, 1.0f, 0.0f})), ContractError);
  EXPECT_NO_THROW(softmax_xent(Tensor::zeros({1, 3}), Tensor({1, 3}, {0.25f, 0.25f, 0.5f})));
}

TEST(Softmax, RowsSumToOneAndAreShiftInvariant) {
  std::mt19937_64 rng(5);
  const auto z = random_tensor<float>({8, 11}, rng, -10, 10);
  std::vector<float> shifted(z.data().begin(), z.data().end());
  for (auto& v : shifted) v += 37.5f;
  const auto p = softmax(z);
  const auto q = softmax(Tensor({8, 11}, shifted));
  for (std::size_t r = 0; r < 8; ++r) {
    double s = 0;
    for (std::size_t k = 0; k < 11; ++k) {
      s += p.at({r, k});
      EXPECT_NEAR(p.at({r, k}), q.at({r, k}), 1e-5);
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
  EXPECT_EQ(argmax_rows(z), argmax_rows(Tensor({8, 11}, shifted)));
}

TEST(Adam, ZeroGradientLeavesParametersButAdvancesStep) {
  std::vector<Tensor> params{Tensor({3}, {1.0f, -2.0f, 0.5f}, true)};
  AdamState st(params, {});
  adam_step(params, st);
  adam_step(params, st);
  EXPECT_EQ(st.t, 2u);
  EXPECT_EQ(params[0][0], 1.0f);
  EXPECT_EQ(params[0][1], -2.0f);
  EXPECT_EQ(params[0][2], 0.5f);
}

TEST(Adam, FirstStepWithUnitGradientMovesByLearningRate) {
  std::vector<Tensor> params{Tensor::scalar(0.0f, true)};
  AdamState st(params, {});
  params[0].mutable_grad()[0] = 1.0f;
  adam_step(params, st);
  // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  EXPECT_FLOAT_EQ(params[0].item(), -0.001f);
  EXPECT_NEAR(params[0].item(), -0.001, 1e-10);
}

TEST(Adam, ConvergesOnQuadraticBowl) {
  std::vector<Tensor> params{Tensor::scalar(1.0f, true)};
  AdamState st(params, AdamConfig{.lr = 0.01});
  for (int i = 0; i < 500; ++i) {
    params[0].zero_grad();
    Tape tape;
    tape.backward(sum(mul(params[0], params[0])));
    adam_step(params, st);
  }
  EXPECT_LT(std::abs(params[0].item()), 0.05f);
}

TEST(Adam, MissingGradientIsContractError) {
  std::vector<Tensor> params{Tensor::scalar(1.0f, true)};
  AdamState st(params, {});
  params[0].set_requires_grad(false);
  EXPECT_THROW(adam_step(params, st), ContractError);
  std::vector<Tensor> more{Tensor::scalar(1.0f, true), Tensor::scalar(2.0f, true)};
  EXPECT_THROW(adam_step(more, st), ContractError);
}

TEST(Glorot, DenseValuesWithinBound) {
  std::mt19937_64 rng(6);
  const auto w = glorot_init({100, 100}, rng);
  const double bound = std::sqrt(6.0 / 200.0);
  EXPECT_NEAR(bound, 0.1732, 1e-4);
  for (const float v : w.data()) EXPECT_LE(std::abs(v), bound);
}

TEST(Glorot, MeanNearZeroAndSpreadMatchesUniform) {
  std::mt19937_64 rng(7);
  const auto w = glorot_init({100, 100}, rng);
  double mean = 0, sq = 0;
  for (const float v : w.data()) {
    mean += v;
    sq += double(v) * v;
  }
  mean /= 1e4;
  sq /= 1e4;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(sq, (6.0 / 200.0) / 3.0, 0.001);
}

TEST(Glorot, ConvolutionFansIncludeReceptiveField) {
  const auto [fan_in, fan_out] = glorot_fans({80, 256, 2, 3});
  EXPECT_EQ(fan_in, 256u * 6u);
  EXPECT_EQ(fan_out, 80u * 6u);
  std::mt19937_64 rng(0);
  EXPECT_THROW(glorot_init({3}, rng), DimensionError);
}

TEST(Glorot, SameSeedSameTensor) {
  std::mt19937_64 a(8), b(8);
  const auto x = glorot_init({7, 5}, a);
  const auto y = glorot_init({7, 5}, b);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
}

ModelSpec tiny_spec(double dropout_rate) {
  ModelSpec s = model_spec("Complex");
  s.conv1_filters = 4;
  s.conv2_filters = 3;
  s.dense_width = 8;
  s.input_length = 16;
  s.dropout = dropout_rate;
  return s;
}

std::pair<Tensor, std::vector<int>> tiny_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto x = random_tensor<float>({n, 2, 16}, rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % 11);
  return {x, labels};
}

TEST(Training, DeterministicWithoutDropout) {
  const auto [x, y] = tiny_data(64, 9);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.seed = 3;
  cfg.val_fraction = 0.25;
  Model a(tiny_spec(0.0), 1), b(tiny_spec(0.0), 1);
  const auto ha = train(a, x, y, cfg);
  const auto hb = train(b, x, y, cfg);
  ASSERT_EQ(ha.epochs.size(), hb.epochs.size());
  for (std::size_t e = 0; e < ha.epochs.size(); ++e) {
    EXPECT_EQ(ha.epochs[e].train_loss, hb.epochs[e].train_loss);
    EXPECT_EQ(ha.epochs[e].val_loss, hb.epochs[e].val_loss);
  }
}

TEST(Training, LossFallsOnMemorizableData) {
  const auto [x, y] = tiny_data(44, 10);
  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 11;
  cfg.val_fraction = 0.0;
  cfg.adam.lr = 3e-3;
  Model m(tiny_spec(0.0), 2);
  const auto h = train(m, x, y, cfg);
  EXPECT_LT(h.epochs.back().train_loss, 0.5 * h.epochs.front().train_loss);
  const auto pred = predict(m, x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  EXPECT_GT(correct, 30u);
}

TEST(Training, EarlyStoppingRestoresBestWeights) {
  const auto [x, y] = tiny_data(66, 11);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.val_fraction = 0.3;
  cfg.patience = 2;
  cfg.adam.lr = 1e-2;
  Model m(tiny_spec(0.0), 4);
  const auto h = train(m, x, y, cfg);
  ASSERT_TRUE(h.stopped_early);
  EXPECT_EQ(h.epochs.size(), h.best_epoch + cfg.patience);
  double best = 1e9;
  for (const auto& e : h.epochs) best = std::min(best, e.val_loss);
  EXPECT_EQ(h.epochs[h.best_epoch - 1].val_loss, best);
}

TEST(Training, RejectsMismatchedLabels) {
  const auto [x, y] = tiny_data(10, 12);
  Model m(tiny_spec(0.5), 1);
  EXPECT_THROW(train(m, x, std::vector<int>(9, 0), TrainConfig{}), DimensionError);
}

}  // namespace
}  // namespace cplx

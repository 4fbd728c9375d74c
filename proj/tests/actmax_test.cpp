#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "cplx/actmax.hpp"
#include "cplx/signal.hpp"

namespace cplx {
namespace {

constexpr std::size_t kDim = 64;

// Rows of an 11 x kDim matrix with orthonormal rows, by Gram-Schmidt in double.
std::vector<std::vector<double>> orthonormal_rows(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<std::vector<double>> w;
  while (w.size() < 11) {
    std::vector<double> v(kDim);
    for (auto& e : v) e = g(rng);
    for (const auto& u : w) {
      const double d = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
      for (std::size_t i = 0; i < kDim; ++i) v[i] -= d * u[i];
    }
    const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    for (auto& e : v) e /= n;
    w.push_back(v);
  }
  return w;
}

LogitsFn linear_model(const std::vector<std::vector<double>>& w) {
  std::vector<float> wt(kDim * 11);
  for (std::size_t k = 0; k < 11; ++k) {
    for (std::size_t i = 0; i < kDim; ++i) wt[i * 11 + k] = static_cast<float>(w[k][i]);
  }
  const Tensor weights({kDim, 11}, std::move(wt));
  return [weights](const Tensor& x) { return matmul(x, weights); };
}

double cosine(std::span<const float> a, const std::vector<double>& b) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    ab += a[i] * b[i];
    aa += double(a[i]) * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

TEST(LinearOracle, AscentFollowsTheAnalyticMaximizer) {
  // With orthonormal rows the stationary point is x = W^T (e_t - p) / (2 lambda),
  // and symmetry among the other classes makes it parallel to
  // w_t - mean of the other rows.
  const auto w = orthonormal_rows(1);
  const auto fn = linear_model(w);
  ActMaxConfig cfg;
  for (std::size_t t = 0; t < 11; ++t) {
    const auto img = maximize(fn, {1, kDim}, 11, t, cfg);
    std::vector<double> direction(kDim);
    for (std::size_t i = 0; i < kDim; ++i) {
      double others = 0;
      for (std::size_t k = 0; k < 11; ++k) others += k == t ? 0 : w[k][i];
      direction[i] = w[t][i] - others / 10;
    }
    EXPECT_GE(cosine(img.input.data(), direction), 0.99) << "class " << t;
    EXPECT_NEAR(cosine(img.input.data(), w[t]), std::sqrt(10.0 / 11.0), 0.01) << "class " << t;
    EXPECT_EQ(argmax_rows(fn(img.input))[0], static_cast<int>(t));
  }
}

TEST(LinearOracle, ObjectiveNeverDecreasesWithMoreSteps) {
  const auto fn = linear_model(orthonormal_rows(2));
  ActMaxConfig cfg;
  cfg.step_size = 3.0;  // large enough to force rejected steps
  double previous = -std::numeric_limits<double>::infinity();
  for (std::size_t n = 1; n <= 40; ++n) {
    cfg.steps = n;
    const auto img = maximize(fn, {1, kDim}, 11, 4, cfg);
    EXPECT_GE(img.objective, previous) << "after " << n << " steps";
    previous = img.objective;
  }
}

TEST(LinearOracle, ReachingTheTargetMeansArgmax) {
  const auto fn = linear_model(orthonormal_rows(3));
  ActMaxConfig cfg;
  cfg.l2_penalty = 0;
  for (std::size_t t = 0; t < 11; ++t) {
    const auto img = maximize(fn, {1, kDim}, 11, t, cfg);
    ASSERT_TRUE(img.reached) << t;
    EXPECT_GE(img.softmax[t], 0.999);
    EXPECT_NEAR(std::accumulate(img.softmax.begin(), img.softmax.end(), 0.0), 1.0, 1e-6);
    EXPECT_EQ(argmax_rows(fn(img.input))[0], static_cast<int>(t));
    EXPECT_LT(img.iterations, cfg.steps);
  }
}

TEST(LinearOracle, HeavyPenaltyShrinksInputToZero) {
  const auto fn = linear_model(orthonormal_rows(4));
  ActMaxConfig cfg;
  cfg.l2_penalty = 1e4;
  const auto img = maximize(fn, {1, kDim}, 11, 0, cfg);
  double norm = 0;
  for (const float v : img.input.data()) norm += double(v) * v;
  EXPECT_LT(std::sqrt(norm), 1e-3);
  EXPECT_FALSE(img.reached);
}

TEST(Contract, BadArgumentsAndNonFiniteLogits) {
  const auto fn = linear_model(orthonormal_rows(5));
  ActMaxConfig cfg;
  EXPECT_THROW(maximize(fn, {1, kDim}, 11, 11, cfg), ContractError);
  cfg.steps = 0;
  EXPECT_THROW(maximize(fn, {1, kDim}, 11, 0, cfg), ConfigError);
  cfg.steps = 10;
  cfg.target_confidence = 0.05;
  EXPECT_THROW(maximize(fn, {1, kDim}, 11, 0, cfg), ConfigError);
  cfg.target_confidence = 0.9;
  const LogitsFn broken = [](const Tensor& x) {
    return scale(matmul(x, Tensor::full({kDim, 11}, 1.0f)), std::numeric_limits<float>::quiet_NaN());
  };
  EXPECT_THROW(maximize(broken, {1, kDim}, 11, 0, cfg), NumericError);
}

struct Trained {
  Dataset ds;
  std::vector<std::size_t> train_idx;
  Model model;
};

const Trained& trained() {
  static const Trained t = [] {
    auto ds = signal::generate_dataset(20, 21, 1, {}, {10, 14, 18});
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    const auto [x, y] = to_tensor(ds, idx);
    auto spec = model_spec("Complex");
    spec.conv1_filters = 16;
    spec.conv2_filters = 8;
    spec.dense_width = 64;
    spec.dropout = 0.2;
    auto model = build(spec, 3);
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.adam.lr = 3e-3;
    cfg.batch_size = 64;
    cfg.val_fraction = 0;
    train(model, x, y, cfg);
    return Trained{std::move(ds), std::move(idx), std::move(model)};
  }();
  return t;
}

TEST(Model, NineOfElevenClassesReachHalfConfidence) {
  ActMaxConfig cfg;
  cfg.target_confidence = 0.5;
  cfg.steps = 300;
  const auto images = maximize_all(trained().model, cfg);
  ASSERT_EQ(images.size(), 11u);
  int hits = 0, confident = 0;
  for (const auto& img : images) {
    confident += img.softmax[img.class_id] >= 0.5;
    hits += argmax_rows(trained().model.forward(img.input, false))[0] == static_cast<int>(img.class_id);
    EXPECT_TRUE(img.input.all_finite());
    if (img.reached) EXPECT_EQ(argmax_rows(trained().model.forward(img.input, false))[0], static_cast<int>(img.class_id));
  }
  EXPECT_GE(hits, 9);
  EXPECT_GE(confident, 9);
  EXPECT_TRUE(trained().model.layers()[0].weights.requires_grad());
}

TEST(Model, JobsDoNotChangeTheResult) {
  ActMaxConfig cfg;
  cfg.steps = 20;
  const auto a = maximize_all(trained().model, cfg, 1);
  const auto b = maximize_all(trained().model, cfg, 3);
  for (std::size_t c = 0; c < 11; ++c) {
    EXPECT_EQ(0, std::memcmp(a[c].input.data().data(), b[c].input.data().data(), 256 * sizeof(float)));
  }
}

class GalleryFiles : public ::testing::Test {
 protected:
  std::filesystem::path dir = std::filesystem::temp_directory_path() / "cplx_actmax_test";
  void TearDown() override { std::filesystem::remove_all(dir); }
};

TEST_F(GalleryFiles, ElevenPanelsAndDeterministicBytes) {
  ActMaxConfig cfg;
  cfg.steps = 10;
  const auto images = maximize_all(trained().model, cfg);
  const auto refs = reference_frames(trained().ds, trained().train_idx);
  for (const auto& r : refs) EXPECT_EQ(r.snr_db, 18);
  const auto files = render_gallery(images, refs, trained().ds.mod_names, dir / "a");
  render_gallery(images, refs, trained().ds.mod_names, dir / "b");
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  };
  const auto svg_text = slurp(files[0]);
  EXPECT_TRUE(svg_text.starts_with("<?xml"));
  EXPECT_TRUE(svg_text.ends_with("</svg>\n"));
  std::size_t polylines = 0;
  for (auto pos = svg_text.find("<polyline"); pos != std::string::npos; pos = svg_text.find("<polyline", pos + 1)) {
    ++polylines;
  }
  EXPECT_EQ(polylines, 11u * 2 * 2);
  EXPECT_EQ(slurp(files[0]), slurp(dir / "b" / "gallery.svg"));
  EXPECT_EQ(slurp(files[1]), slurp(dir / "b" / "gallery.json"));
  const auto side = nlohmann::json::parse(slurp(files[1]));
  ASSERT_EQ(side.size(), 11u);
  EXPECT_EQ(side[3]["class"], "BPSK");
}

TEST_F(GalleryFiles, MissingClassIsContractError) {
  ActMaxConfig cfg;
  cfg.steps = 1;
  auto images = maximize_all(trained().model, cfg);
  const auto refs = reference_frames(trained().ds, trained().train_idx);
  images.pop_back();
  EXPECT_THROW(render_gallery(images, refs, trained().ds.mod_names, dir), ContractError);
  EXPECT_FALSE(std::filesystem::exists(dir / "gallery.svg"));
}

}  // namespace
}  // namespace cplx

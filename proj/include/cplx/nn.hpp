#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cplx/ops.hpp"

namespace cplx {

enum class LayerKind { Conv, ComplexConv, Dense };

[[nodiscard]] inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::ComplexConv: return "complex_conv";
    case LayerKind::Dense: return "dense";
  }
  return "?";
}

/// Trainable weights and bias of one layer.
template <typename T>
struct BasicLayerParams {
  LayerKind kind;
  BasicTensor<T> weights;
  BasicTensor<T> bias;
};

using LayerParams = BasicLayerParams<float>;

/// Fan-in and fan-out of a weight shape: [out x in] for dense layers,
/// [F x C x kH x kW] for convolutions (receptive field counted on both sides).
[[nodiscard]] inline std::pair<std::size_t, std::size_t> glorot_fans(const Shape& shape) {
  if (shape.size() == 2) return {shape[1], shape[0]};
  if (shape.size() == 4) {
    const std::size_t field = shape[2] * shape[3];
    return {shape[1] * field, shape[0] * field};
  }
  throw DimensionError("glorot_init: expected a dense or convolution weight shape, got " + shape_string(shape));
}

/// Uniform draw in +-sqrt(6 / (fan_in + fan_out)).
template <typename T = float>
BasicTensor<T> glorot_init(const Shape& shape, std::mt19937_64& rng) {
  const auto [fan_in, fan_out] = glorot_fans(shape);
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    v = static_cast<T>((2.0 * u - 1.0) * limit);
  }
  return BasicTensor<T>(shape, std::move(values));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment buffers for a fixed list of parameters, one slot per parameter.
template <typename T>
struct BasicAdamState {
  AdamConfig config;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  BasicAdamState() = default;
  BasicAdamState(const std::vector<BasicTensor<T>>& params, AdamConfig cfg) : config(cfg) {
    for (const auto& p : params) {
      m.emplace_back(p.numel(), 0.0);
      v.emplace_back(p.numel(), 0.0);
    }
  }
};

using AdamState = BasicAdamState<float>;

/// Bias-corrected Adam update applied in place to every parameter.
template <typename T>
void adam_step(std::vector<BasicTensor<T>>& params, BasicAdamState<T>& state) {
  if (params.size() != state.m.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(state.m.size()) + " optimizer slots");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].requires_grad() || params[i].numel() != state.m[i].size()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient slot");
    }
  }
  const auto& c = state.config;
  ++state.t;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    const auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      w[j] = static_cast<T>(static_cast<double>(w[j]) - c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
    }
  }
}

/// One-hot rows [labels.size() x classes].
template <typename T = float>
BasicTensor<T> one_hot(const std::vector<int>& labels, std::size_t classes) {
  std::vector<T> values(labels.size() * classes, T{0});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw ContractError("one_hot: label " + std::to_string(labels[r]) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
    values[r * classes + static_cast<std::size_t>(labels[r])] = T{1};
  }
  return BasicTensor<T>({labels.size(), classes}, std::move(values));
}

/// Index of the largest logit in each row; ties go to the lowest index.
template <typename T>
std::vector<int> argmax_rows(const BasicTensor<T>& logits) {
  require_rank(logits, 2, "argmax_rows");
  const std::size_t k = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  const auto z = logits.data();
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
      if (z[r * k + j] > z[r * k + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace cplx

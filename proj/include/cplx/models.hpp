#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cplx/complexconv.hpp"
#include "cplx/detail/binary_io.hpp"
#include "cplx/nn.hpp"

namespace cplx {

/// Declarative description of one of the three architectures.
///
/// All three share the tail conv(F2 filters, 2 x k2) -> dense(D) -> dense(K).
/// They differ in the first layer (real 1 x k1 convolution on the stacked I/Q
/// rows, or complex convolution with k1 taps) and in the dense width D.
struct ModelSpec {
  std::string name;
  bool complex_first = false;
  std::size_t conv1_filters = 256;
  std::size_t conv1_taps = 3;
  std::size_t conv2_filters = 80;
  std::size_t conv2_taps = 3;
  std::size_t dense_width = 256;
  std::size_t num_classes = 11;
  std::size_t input_length = 128;
  double dropout = 0.5;

  bool operator==(const ModelSpec&) const = default;
};

inline const std::array<std::string, 3>& architecture_names() {
  static const std::array<std::string, 3> names{"CNN2", "CNN2-257", "Complex"};
  return names;
}

[[nodiscard]] inline ModelSpec model_spec(const std::string& name) {
  ModelSpec spec;
  spec.name = name;
  if (name == "CNN2") return spec;
  if (name == "CNN2-257") {
    spec.dense_width = 257;
    return spec;
  }
  if (name == "Complex") {
    spec.complex_first = true;
    return spec;
  }
  throw ConfigError("unknown architecture '" + name + "' (expected CNN2, CNN2-257 or Complex)");
}

struct LayerShape {
  LayerKind kind;
  Shape weights;
  Shape bias;
};

/// Parameter shapes in forward order.
[[nodiscard]] inline std::vector<LayerShape> layer_shapes(const ModelSpec& s) {
  if (s.conv1_taps > s.input_length || s.conv2_taps + s.conv1_taps - 1 > s.input_length) {
    throw ConfigError("model " + s.name + ": kernels longer than the input");
  }
  const std::size_t len1 = s.input_length - s.conv1_taps + 1;
  const std::size_t len2 = len1 - s.conv2_taps + 1;
  std::vector<LayerShape> layers;
  if (s.complex_first) {
    layers.push_back({LayerKind::ComplexConv, {s.conv1_filters, 1, 2, s.conv1_taps}, {s.conv1_filters, 2}});
  } else {
    layers.push_back({LayerKind::Conv, {s.conv1_filters, 1, 1, s.conv1_taps}, {s.conv1_filters}});
  }
  layers.push_back({LayerKind::Conv, {s.conv2_filters, s.conv1_filters, 2, s.conv2_taps}, {s.conv2_filters}});
  layers.push_back({LayerKind::Dense, {s.dense_width, s.conv2_filters * len2}, {s.dense_width}});
  layers.push_back({LayerKind::Dense, {s.num_classes, s.dense_width}, {s.num_classes}});
  return layers;
}

/// Exact number of trainable scalars (weights and biases).
[[nodiscard]] inline std::size_t param_count(const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& l : layer_shapes(spec)) total += shape_numel(l.weights) + shape_numel(l.bias);
  return total;
}

/// An instantiated architecture. Copies share parameters; use clone() for a deep copy.
class Model {
 public:
  Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    std::mt19937_64 rng(seed);
    for (const auto& l : layer_shapes(spec_)) {
      auto w = glorot_init<float>(l.weights, rng);
      w.set_requires_grad(true);
      layers_.push_back({l.kind, std::move(w), Tensor::zeros(l.bias, true)});
    }
  }

  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const std::vector<LayerParams>& layers() const noexcept { return layers_; }
  [[nodiscard]] std::vector<LayerParams>& layers() noexcept { return layers_; }

  /// Weight and bias handles of every layer, in forward order.
  [[nodiscard]] std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
      out.push_back(l.weights);
      out.push_back(l.bias);
    }
    return out;
  }

  [[nodiscard]] std::size_t param_count() const {
    std::size_t total = 0;
    for (const auto& l : layers_) total += l.weights.numel() + l.bias.numel();
    return total;
  }

  [[nodiscard]] Model clone() const {
    Model copy = *this;
    for (auto& l : copy.layers_) {
      l.weights = l.weights.clone();
      l.bias = l.bias.clone();
    }
    return copy;
  }

  void set_trainable(bool on) {
    for (auto& l : layers_) {
      l.weights.set_requires_grad(on);
      l.bias.set_requires_grad(on);
    }
  }

  void zero_grad() {
    for (auto& l : layers_) {
      l.weights.zero_grad();
      l.bias.zero_grad();
    }
  }

  /// Logits [B x K] for a batch [B x 2 x L]. Dropout is active only when
  /// training, which then requires a random stream.
  [[nodiscard]] Tensor forward(const Tensor& batch, bool training, std::mt19937_64* rng = nullptr) const {
    if (batch.rank() != 3 || batch.dim(1) != 2 || batch.dim(2) != spec_.input_length) {
      throw DimensionError("forward: expected B x 2 x " + std::to_string(spec_.input_length) + ", got " +
                           shape_string(batch.shape()));
    }
    if (training && rng == nullptr) throw ContractError("forward: training mode needs a random stream");
    std::mt19937_64 unused;
    auto& r = rng ? *rng : unused;
    const std::size_t b = batch.dim(0);
    const double p = spec_.dropout;

    auto h = reshape(batch, {b, 1, 2, spec_.input_length});
    const auto& l1 = layers_[0];
    if (l1.kind == LayerKind::ComplexConv) {
      h = add_bias(complex_conv(h, l1.weights), l1.bias, 1);
    } else {
      h = add_bias(xcorr2d_valid(h, l1.weights), l1.bias, 1);
    }
    h = dropout(relu(h), p, training, r);
    h = add_bias(xcorr2d_valid(h, layers_[1].weights), layers_[1].bias, 1);
    h = dropout(relu(h), p, training, r);
    h = reshape(h, {b, h.numel() / b});
    h = linear(h, layers_[2].weights, layers_[2].bias);
    h = dropout(relu(h), p, training, r);
    return linear(h, layers_[3].weights, layers_[3].bias);
  }

 private:
  ModelSpec spec_;
  std::uint64_t seed_;
  std::vector<LayerParams> layers_;
};

[[nodiscard]] inline Model build(const ModelSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

[[nodiscard]] inline Model build(const std::string& name, std::uint64_t seed) {
  return Model(model_spec(name), seed);
}

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint layout (little-endian):
///   "CPLX" | u32 version | u16 name length | name | u64 seed | u32 tensor count |
///   per tensor: u32 rank | u64 extents... | f32 values...
inline std::vector<char> encode_checkpoint(const Model& model) {
  detail::ByteWriter w;
  w.put_bytes("CPLX");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(model.spec().name.size()));
  w.put_bytes(model.spec().name);
  w.put<std::uint64_t>(model.seed());
  const auto params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& t : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (const auto d : t.shape()) w.put<std::uint64_t>(d);
    for (const float v : t.data()) w.put(v);
  }
  return w.bytes();
}

inline Model decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  if (r.get_bytes(4, "magic") != "CPLX") throw FormatError("not a checkpoint: bad magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  const auto name_len = r.get<std::uint16_t>("name length");
  const auto name_at = r.offset();
  const auto name = r.get_bytes(name_len, "architecture name");
  ModelSpec spec;
  try {
    spec = model_spec(name);
  } catch (const ConfigError& e) {
    throw FormatError(e.what(), name_at);
  }
  const auto seed = r.get<std::uint64_t>("seed");
  Model model(spec, seed);
  auto params = model.parameters();
  const auto count_at = r.offset();
  const auto count = r.get<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " tensors, " + name + " needs " +
                          std::to_string(params.size()),
                      count_at);
  }
  for (auto& p : params) {
    const auto at = r.offset();
    const auto rank = r.get<std::uint32_t>("tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.get<std::uint64_t>("tensor extent");
    if (shape != p.shape()) {
      throw FormatError("tensor shape " + shape_string(shape) + " does not match " + name + " layer " +
                            shape_string(p.shape()),
                        at);
    }
    r.require(p.numel() * 4, "tensor values");
    for (auto& v : p.mutable_data()) v = r.get<float>("tensor values");
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return model;
}

inline void save_checkpoint(const Model& model, const std::string& path) {
  detail::write_file(path, encode_checkpoint(model));
}

inline Model load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace cplx

#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "cplx/models.hpp"

namespace cplx {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 1024;
  AdamConfig adam;
  std::size_t patience = 5;
  double val_fraction = 0.05;
  std::uint64_t seed = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
  double val_accuracy = 0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

/// Rows `index` of x along the leading axis.
template <typename T>
BasicTensor<T> gather_rows(const BasicTensor<T>& x, std::span<const std::size_t> index) {
  if (x.rank() == 0) throw DimensionError("gather_rows: scalar input");
  const std::size_t row = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = index.size();
  std::vector<T> values(index.size() * row);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(index[i] * row), row, values.begin() + i * row);
  }
  return BasicTensor<T>(std::move(shape), std::move(values));
}

/// Inference-mode logits for every row of x, computed in chunks.
inline Tensor predict_logits(const Model& model, const Tensor& x, std::size_t batch_size = 256) {
  const std::size_t n = x.dim(0), k = model.spec().num_classes;
  std::vector<float> out(n * k);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t stop = std::min(n, start + batch_size);
    idx.resize(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto logits = model.forward(gather_rows(x, idx), false);
    std::copy(logits.data().begin(), logits.data().end(), out.begin() + start * k);
  }
  return Tensor({n, k}, std::move(out));
}

inline std::vector<int> predict(const Model& model, const Tensor& x, std::size_t batch_size = 256) {
  return argmax_rows(predict_logits(model, x, batch_size));
}

namespace detail {

inline std::vector<int> pick_labels(const std::vector<int>& labels, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[idx[i]];
  return out;
}

// Mean cross-entropy and accuracy over the rows `idx`.
inline std::pair<double, double> evaluate(const Model& model, const Tensor& x, const std::vector<int>& labels,
                                          std::span<const std::size_t> idx, std::size_t batch_size) {
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const auto chunk = idx.subspan(start, std::min(batch_size, idx.size() - start));
    const auto y = pick_labels(labels, chunk);
    const auto logits = model.forward(gather_rows(x, chunk), false);
    loss += softmax_xent(logits, one_hot(y, model.spec().num_classes)).item() * static_cast<double>(chunk.size());
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  }
  const auto n = static_cast<double>(idx.size());
  return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace detail

/// Mini-batch Adam on softmax cross-entropy.
///
/// A seeded `val_fraction` of the rows is held out; training stops after
/// `patience` epochs without a lower validation loss and the best weights are
/// restored. With no held-out rows every epoch runs and the final weights are kept.
inline TrainHistory train(Model& model, const Tensor& x, const std::vector<int>& labels, const TrainConfig& cfg,
                          const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (x.rank() != 3 || x.dim(0) != labels.size()) {
    throw DimensionError("train: inputs " + shape_string(x.shape()) + " vs " + std::to_string(labels.size()) +
                         " labels");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) throw ConfigError("train: batch size and epochs must be positive");
  if (!(cfg.val_fraction >= 0 && cfg.val_fraction < 1)) throw ConfigError("train: val_fraction outside [0, 1)");

  std::mt19937_64 split_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x0ddba11ca5cadeULL);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0xd20b0a7d20b0a7ULL);

  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(order.size()));
  std::vector<std::size_t> val(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
  std::vector<std::size_t> fit(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  if (fit.empty()) throw ConfigError("train: no training rows left after the validation split");

  model.set_trainable(true);
  auto params = model.parameters();
  AdamState opt(params, cfg.adam);
  TrainHistory history;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(fit.begin(), fit.end(), shuffle_rng);
    double total = 0;
    for (std::size_t start = 0; start < fit.size(); start += cfg.batch_size) {
      const auto chunk = std::span<const std::size_t>(fit).subspan(start, std::min(cfg.batch_size, fit.size() - start));
      const auto xb = gather_rows(x, chunk);
      const auto yb = one_hot(detail::pick_labels(labels, chunk), model.spec().num_classes);
      model.zero_grad();
      Tape tape;
      const auto loss = softmax_xent(model.forward(xb, true, &dropout_rng), yb);
      tape.backward(loss);
      for (const auto& p : params) {
        for (const float g : p.grad()) {
          if (!std::isfinite(g)) throw NumericError("train: non-finite gradient in epoch " + std::to_string(epoch));
        }
      }
      adam_step(params, opt);
      total += loss.item() * static_cast<double>(chunk.size());
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = total / static_cast<double>(fit.size());
    if (!val.empty()) std::tie(stats.val_loss, stats.val_accuracy) = detail::evaluate(model, x, labels, val, 256);
    history.epochs.push_back(stats);
    if (on_epoch) on_epoch(stats);

    if (val.empty()) {
      history.best_epoch = epoch;
      continue;
    }
    if (stats.val_loss < best_val) {
      best_val = stats.val_loss;
      history.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : params) best_params.push_back(p.detach());
      stale = 0;
    } else if (++stale >= cfg.patience) {
      history.stopped_early = true;
      break;
    }
  }

  if (!best_params.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      std::copy(best_params[i].data().begin(), best_params[i].data().end(), params[i].mutable_data().begin());
    }
  }
  return history;
}

}  // namespace cplx

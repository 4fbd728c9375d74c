#pragma once

#include <functional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "cplx/tensor.hpp"

namespace cplx {

/// Reverse-mode gradient tape.
///
/// Constructing a tape makes it the active tape of the calling thread until it
/// is destroyed; ops executed meanwhile record themselves when any input
/// requires a gradient. backward() replays the recorded ops newest-first,
/// each at most once, and then drops them. Leaf gradients accumulate until the
/// caller zeroes them.
template <typename T>
class BasicTape {
 public:
  using Pullback = std::function<void()>;

  BasicTape() : previous_(active_) { active_ = this; }
  ~BasicTape() { active_ = previous_; }

  BasicTape(const BasicTape&) = delete;
  BasicTape& operator=(const BasicTape&) = delete;

  [[nodiscard]] static BasicTape* active() noexcept { return active_; }

  /// Tape to record on, or nullptr when no input participates in differentiation.
  [[nodiscard]] static BasicTape* recording(std::initializer_list<const BasicTensor<T>*> inputs) noexcept {
    if (active_ == nullptr) return nullptr;
    for (const auto* t : inputs) {
      if (t->requires_grad()) return active_;
    }
    return nullptr;
  }

  void record(std::vector<BasicTensor<T>> inputs, BasicTensor<T> output, Pullback pullback) {
    entries_.push_back(Entry{std::move(inputs), std::move(output), std::move(pullback)});
  }

  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

  /// Number of ops whose pullback ran during the last backward().
  [[nodiscard]] std::size_t last_visited() const noexcept { return last_visited_; }

  void backward(BasicTensor<T> loss) {
    if (loss.numel() != 1) {
      throw ContractError("backward() needs a scalar loss, got " + shape_string(loss.shape()));
    }
    const bool on_tape = std::any_of(entries_.begin(), entries_.end(),
                                     [&](const Entry& e) { return e.output.same_storage(loss); });
    if (!on_tape) throw ContractError("backward(): loss was not produced on this tape");

    loss.mutable_grad()[0] += T{1};
    std::unordered_set<const void*> reached{loss.identity()};
    last_visited_ = 0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (!reached.contains(it->output.identity())) continue;
      it->pullback();
      ++last_visited_;
      for (const auto& in : it->inputs) {
        if (in.requires_grad()) reached.insert(in.identity());
      }
    }
    entries_.clear();
  }

 private:
  struct Entry {
    std::vector<BasicTensor<T>> inputs;
    BasicTensor<T> output;
    Pullback pullback;
  };

  std::vector<Entry> entries_;
  BasicTape* previous_;
  std::size_t last_visited_ = 0;
  inline static thread_local BasicTape* active_ = nullptr;
};

using Tape = BasicTape<float>;

}  // namespace cplx

#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "ugest/tensor.hpp"

namespace ugest {

/// Handle to a value recorded on a Tape.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

/// Reverse-mode tape. Nodes are appended in creation order, which is a
/// topological order; backward() walks them once in reverse.
///
/// A tape is single-threaded. Run independent tapes for parallel work.
template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::span<const T> grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value that never receives a gradient.
  Var constant(Tensor<T> value) { return push(std::move(value), nullptr, nullptr, false); }

  /// Owned leaf; its gradient is readable through grad() after backward().
  Var input(Tensor<T> value, bool requires_grad = true) {
    return push(std::move(value), nullptr, nullptr, requires_grad);
  }

  /// Borrowed leaf. The tensor must outlive the tape. When it has
  /// requires_grad set, backward() adds the gradient into tensor.grad.
  Var param(Tensor<T>& tensor) { return push(Tensor<T>{}, &tensor, &tensor, tensor.requires_grad); }

  /// Records an op output. `fn` is kept only if some input requires grad.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward fn) {
    bool rg = false;
    for (auto v : inputs) rg = rg || nodes_.at(v.id).requires_grad;
    return push(std::move(value), nullptr, nullptr, rg, rg ? std::move(fn) : Backward{});
  }

  const Tensor<T>& value(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.external ? *n.external : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Branch tracking for non-smooth ops (relu, max). Off by default; the
  /// gradient checker turns it on to spot finite differences that straddle
  /// a kink.
  void track_branches(bool on) { track_ = on; }
  bool tracking_branches() const { return track_; }
  void note_branch(std::uint64_t v) {
    branch_hash_ ^= v + 0x9e3779b97f4a7c15ULL + (branch_hash_ << 6) + (branch_hash_ >> 2);
  }
  std::uint64_t branch_signature() const { return branch_hash_; }

  /// Gradient of an owned or borrowed leaf (empty span when none flowed).
  std::span<const T> grad(Var v) const { return nodes_.at(v.id).grad; }

  /// Accumulation buffer for an input's gradient; ops call this from their
  /// backward rules. Returns an empty span for nodes that need no gradient.
  std::span<T> grad_accumulator(Var v) {
    auto& n = nodes_.at(v.id);
    if (!n.requires_grad) return {};
    if (n.grad.empty()) n.grad.assign(value(v).size(), T{0});
    return n.grad;
  }

  void backward(Var loss) {
    if (loss.id >= nodes_.size()) throw ContractError("backward: loss is not on this tape");
    if (value(loss).size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
    }
    if (done_) throw ContractError("backward: tape already consumed");
    done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad.assign(1, T{1});
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(*this, std::span<const T>(n.grad));
    }
    for (auto& n : nodes_) {
      if (n.sink && n.requires_grad && !n.grad.empty()) {
        auto& g = n.sink->grad;
        if (!g) g.emplace(n.grad.size(), T{0});
        for (std::size_t k = 0; k < n.grad.size(); ++k) (*g)[k] += n.grad[k];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    const Tensor<T>* external = nullptr;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
    Backward backward;
  };

  Var push(Tensor<T> value, const Tensor<T>* ext, Tensor<T>* sink, bool rg, Backward fn = {}) {
#ifndef NDEBUG
    if (!ext && !value.all_finite()) throw DomainError("non-finite value recorded on tape");
#endif
    nodes_.push_back(Node{std::move(value), ext, sink, rg, {}, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::deque<Node> nodes_;  // deque: references stay valid as nodes are appended
  bool done_ = false;
  bool track_ = false;
  std::uint64_t branch_hash_ = 0;
};

}  // namespace ugest

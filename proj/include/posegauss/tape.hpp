#pragma once

#include "posegauss/tensor.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace pg {

template <typename Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor3<Scalar>& value() const { return tape->value(*this); }
  int height() const { return value().height(); }
  int width() const { return value().width(); }
  int channels() const { return value().channels(); }
};

/// Named parameter buffer with its gradient accumulator.
///
/// `shape` is metadata only; storage is flat. Gradients accumulate across
/// backward passes until `zero_grad()`.
template <typename Scalar>
struct ParamBuffer {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  std::string name;
  std::vector<int> shape;
  Vector value;
  Vector grad;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(); }
};

/// Owns every parameter of a model in registration order (the canonical order
/// used by checkpoints and optimizers). Addresses are stable.
template <typename Scalar>
class ParamStore {
 public:
  ParamBuffer<Scalar>& add(const std::string& name, std::vector<int> shape);

  std::size_t count() const { return params_.size(); }
  ParamBuffer<Scalar>& at(std::size_t i) { return *params_[i]; }
  const ParamBuffer<Scalar>& at(std::size_t i) const { return *params_[i]; }
  ParamBuffer<Scalar>* find(const std::string& name);

  Eigen::Index total_size() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<ParamBuffer<Scalar>>> params_;
};

/// Reverse-mode recording of differentiable operations.
///
/// Nodes are appended in execution order, so the record is topologically
/// sorted by construction. Parameter gradients are accumulated directly into
/// the ParamBuffers captured by each op's backward closure.
template <typename Scalar>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  struct Node {
    Tensor3<Scalar> value;
    Tensor3<Scalar> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Input that never receives a gradient.
  Var<Scalar> constant(Tensor3<Scalar> value);
  /// Input whose gradient is kept after backward (used by gradient checks).
  Var<Scalar> leaf(Tensor3<Scalar> value);
  /// Records an op result. `requires_grad` should be true when any input or
  /// captured parameter needs a gradient.
  Var<Scalar> push(Tensor3<Scalar> value, bool requires_grad, Backward backward);

  const Tensor3<Scalar>& value(Var<Scalar> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<Scalar> v) const { return nodes_.at(v.id).requires_grad; }
  /// Gradient buffer for `v`, allocated (zeroed) on first access.
  Tensor3<Scalar>& grad(Var<Scalar> v) { return grad(v.id); }
  Tensor3<Scalar>& grad(int id);
  bool has_grad(Var<Scalar> v) const { return !nodes_.at(v.id).grad.empty(); }

  /// Seeds d(terminal)/d(terminal) = seed and replays the record in reverse.
  /// Each node's backward runs at most once. Rejects non-scalar terminals.
  void backward(Var<Scalar> terminal, Scalar seed = Scalar(1));

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::deque<Node> nodes_;  // deque: values stay addressable while new ops are recorded
};

template <typename Scalar>
Var<Scalar> detach(Var<Scalar> v) {
  return v.tape->constant(v.value());
}

}  // namespace pg

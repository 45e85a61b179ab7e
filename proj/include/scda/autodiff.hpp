#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Tape owns every value computed during one forward pass. Ops append a node
// holding the forward value, its parent ids and a closure that pushes the
// node's upstream gradient into those parents. Nodes are only appended, so
// parents always precede children and backward() is a single reverse sweep.
// Nodes whose inputs are all constant are recorded without a closure and are
// never visited.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "scda/tensor.hpp"

namespace scda::ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Differentiable input (parameter). requires_grad=false is a constant.
  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value);

  /// Appends an op result. If no parent requires a gradient the closure is
  /// dropped and the node is a constant.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  /// Clears previous gradients, seeds d(loss)/d(loss) = 1 and sweeps the tape
  /// once in reverse. Throws ShapeError for a non-scalar loss.
  void backward(Var loss);

  /// Gradient of the last backward() loss w.r.t. v; zeros of v's shape if v
  /// was not reached.
  Tensor grad(Var v) const;

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Upstream gradient of node `id` while its closure runs.
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of node `id`, zero-initialized on first access.
  Tensor& accumulator(std::size_t id);

  std::size_t size() const { return nodes_.size(); }
  std::size_t backward_passes() const { return backward_passes_; }
  /// Closures run by the most recent backward().
  std::size_t nodes_visited() const { return nodes_visited_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    std::vector<std::size_t> parents;
    BackwardFn backward;
  };

  // deque: references to values stay valid while the tape grows
  std::deque<Node> nodes_;
  std::size_t backward_passes_ = 0;
  std::size_t nodes_visited_ = 0;
};

/// Inputs below this are clamped before taking a logarithm.
inline constexpr double kLogFloor = 1e-12;

// ---- linear algebra -------------------------------------------------------
Var matmul(Var a, Var b);     // [m x k] x [k x n]
Var matmul_nt(Var a, Var b);  // [m x k] x [n x k]^T
Var transpose(Var a);         // rank 2

// ---- elementwise ----------------------------------------------------------
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var add_bias(Var x, Var bias);  // [m x n] + [n] broadcast over rows
Var scale(Var x, double s);
Var add_scalar(Var x, double s);
Var relu(Var x);
Var sigmoid(Var x);
/// log(max(x, kLogFloor)); gradient is zero where the clamp is active.
Var log(Var x);

// ---- reductions -----------------------------------------------------------
Var sum(Var x);   // -> scalar
Var mean(Var x);  // -> scalar
Var sum_axis(Var x, std::size_t axis);   // rank 2 -> rank 1
Var mean_axis(Var x, std::size_t axis);  // rank 2 -> rank 1

// ---- softmax family (rank 2, row-wise) ------------------------------------
Var softmax_rows(Var z, double temperature = 1.0);
Var log_softmax_rows(Var z, double temperature = 1.0);

// ---- spatial --------------------------------------------------------------
/// [n x c x h x w] -> [n x c], mean over spatial positions.
Var global_average_pool(Var x);
/// Per-location affine map: [n x ci x h x w], weight [co x ci], bias [co].
Var conv1x1(Var x, Var weight, Var bias);
Var conv1x1(Var x, Var weight);
/// 3x3 neighbourhood unfold with zero padding: [n x c x h x w] -> [n x 9c x h x w].
/// Channel layout is c * 9 + (dy+1) * 3 + (dx+1).
Var unfold3x3(Var x);

// ---- structural -----------------------------------------------------------
/// Concatenation along axis 0; trailing extents must agree.
Var concat(std::span<const Var> parts);
Var reshape(Var x, Shape shape);
/// Rows of a rank-2 tensor, in the given order (repeats allowed).
Var gather_rows(Var x, std::span<const std::size_t> rows);
/// out[i] = x[i, cols[i]] for rank-2 x.
Var pick(Var x, std::span<const std::size_t> cols);
/// Same value, no gradient flows back.
Var detach(Var x);
/// Gradient reversal: forward is the identity, backward scales the upstream
/// gradient by -lambda.
Var grl(Var x, double lambda = 1.0);

}  // namespace scda::ad

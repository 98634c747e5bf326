#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "headlamp/activations.hpp"
#include "headlamp/tensor.hpp"

namespace headlamp {

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::size_t id = kNone;
  bool valid() const { return id != kNone; }
};

/// Linear reverse-mode tape over 2-D tensors.
///
/// Every op appends a node holding its forward value and a closure that
/// pushes the node's gradient to its inputs. backward() walks the nodes in
/// reverse insertion order, so gradient accumulation order is fixed by the
/// order in which the forward pass was recorded. A tape built with
/// `record = false` computes values only.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var leaf(Tensor value);
  Var push(Tensor value, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target w.r.t. v; empty if none flowed.
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  /// Zero-initialised on first access.
  Tensor& grad_mut(Var v);

  /// Seeds d(out)/d(out) = 1 for a single-element output and propagates.
  void backward(Var out);

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a length-n bias row to every row of an (m x n) value.
  Var add_bias(Var a, Var bias);
  Var scale(Var a, double factor);
  /// Multiplies every entry of a by a single-element variable.
  Var scale_by(Var a, Var factor);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var softmax_rows(Var a);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  /// Row-wise softmax or sparsemax. With `causal`, row i only covers keys
  /// 0..i and the remaining entries are exactly zero.
  Var attention(Var scores, AttentionKind kind, bool causal = false);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var gather_rows(Var table, std::span<const std::size_t> ids);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
  };

  Var append(Tensor value, Backward backward);

  bool record_;
  std::vector<Node> nodes_;
};

}  // namespace headlamp

#pragma once

// Reverse-mode automatic differentiation over Tensors.
//
// Every backward rule is written in terms of the same differentiable
// operations it differentiates, so gradients returned with
// `create_graph = true` are ordinary graph nodes and can be differentiated
// again. This is what lets the self-tuner differentiate a validation loss
// through the detector's own gradient-based updates.
//
// Graph lifetime follows ownership: a node lives as long as some Var (or a
// downstream node) refers to it. `detach()` cuts a value out of its history.

#include <functional>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "tsap/tensor.hpp"

namespace tsap {

class Var;

struct Node {
  using Backward = std::function<std::vector<Var>(const Var& self, const Var& grad)>;

  Tensor value;
  bool requires_grad = false;
  std::vector<Var> inputs;
  Backward backward;  // empty for leaves
  const char* op = "leaf";
};

/// Handle to a node in the differentiation graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  static Var constant(Tensor value) { return Var(std::move(value), false); }
  static Var param(Tensor value) { return Var(std::move(value), true); }

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  double item() const { return node_->value.item(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  const char* op() const { return node_->op; }
  const std::vector<Var>& inputs() const { return node_->inputs; }
  const Node* node() const { return node_.get(); }

  /// Overwrites the value of a leaf in place (optimizer updates).
  void assign(Tensor value);

  /// Leaf with the same value and no history.
  Var detach(bool requires_grad = false) const;

  static Var make(Tensor value, std::vector<Var> inputs, Node::Backward backward,
                  const char* op);

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, new operations record no history (values only).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Gradients of scalar `loss` with respect to each of `wrt`.
///
/// With `create_graph` the returned gradients carry their own history.
/// Inputs that `loss` does not depend on get zero gradients.
/// Throws ContractError if `loss` is not a single element.
std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt,
                      bool create_graph = false);

/// Text dump of the graph below `root`, one node per line.
void dump_graph(const Var& root, std::ostream& os);

// ---------------------------------------------------------------------------
// Operations. Binary elementwise ops broadcast size-1 axes of equal-rank
// operands; anything else is a ShapeError.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);

Var exp(const Var& a);
Var log(const Var& a);
/// Elementwise power with constant exponent. Gradient at a zero base is taken
/// as zero when the exponent is below one.
Var pow(const Var& a, double p);
Var relu(const Var& a);
Var sigmoid(const Var& a);
/// log(1 + exp(a)), evaluated stably.
Var softplus(const Var& a);

/// Replicates size-1 axes of `a` up to `shape` (same rank).
Var broadcast_to(const Var& a, const Shape& shape);
/// Sums `a` down to `shape` (same rank; target axes are 1 or equal).
Var sum_to(const Var& a, const Shape& shape);
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over one axis, keeping it with extent 1.
Var sum_axis(const Var& a, std::size_t axis);
/// Log-sum-exp over one axis, keeping it with extent 1.
Var logsumexp(const Var& a, std::size_t axis);

Var reshape(const Var& a, const Shape& shape);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

/// Rows (leading-axis slices) of `a` picked by `index`, in order.
Var gather_rows(const Var& a, const std::vector<std::size_t>& index);
/// Adjoint of gather_rows: adds row i of `a` into row index[i] of a zero
/// tensor with `rows` leading extent.
Var scatter_rows(const Var& a, const std::vector<std::size_t>& index, std::size_t rows);
/// Concatenation along the leading axis.
Var concat_rows(const std::vector<Var>& parts);

Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator/(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(double c, const Var& a);
Var operator*(const Var& a, double c);

}  // namespace tsap

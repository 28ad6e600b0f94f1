#include "tsap/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace tsap {

namespace {

thread_local bool g_grad_enabled = true;

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size())
    throw ShapeError("rank mismatch: " + shape_str(a) + " vs " + shape_str(b));
  Shape out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || b[i] == 1)
      out[i] = a[i];
    else if (a[i] == 1)
      out[i] = b[i];
    else
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
  }
  return out;
}

std::vector<std::size_t> strides_of(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Visits every index of `big`, handing out the flat offsets into `big` and
// into `small` (whose size-1 axes repeat).
template <typename F>
void for_each_broadcast(const Shape& big, const Shape& small, F&& f) {
  const std::size_t rank = big.size();
  std::vector<std::size_t> small_stride = strides_of(small);
  for (std::size_t i = 0; i < rank; ++i)
    if (small[i] == 1) small_stride[i] = 0;
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t n = numel(big);
  const std::size_t inner = rank ? big[rank - 1] : 1;
  const std::size_t inner_stride = rank ? small_stride[rank - 1] : 0;
  std::size_t small_off = 0;
  for (std::size_t flat = 0; flat < n; flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, small_off + j * inner_stride);
    // advance odometer over all but the innermost axis
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      small_off += small_stride[ax];
      if (idx[ax] < big[ax]) break;
      small_off -= small_stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

template <typename F>
Tensor map_unary(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  auto src = a.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <typename F>
Tensor map_binary(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

// Promotes both operands to their common broadcast shape.
std::pair<Var, Var> promote(const Var& a, const Var& b) {
  if (a.shape() == b.shape()) return {a, b};
  Shape s = broadcast_shape(a.shape(), b.shape());
  return {a.shape() == s ? a : broadcast_to(a, s), b.shape() == s ? b : broadcast_to(b, s)};
}

Var pow_impl(const Var& a, double p, bool zero_safe);

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

void Var::assign(Tensor value) {
  if (!is_leaf()) throw ContractError("assign() on a non-leaf node");
  if (value.shape() != node_->value.shape())
    throw ShapeError("assign() changes shape " + shape_str(node_->value.shape()) + " -> " +
                     shape_str(value.shape()));
  node_->value = std::move(value);
}

Var Var::detach(bool requires_grad) const { return Var(value(), requires_grad); }

Var Var::make(Tensor value, std::vector<Var> inputs, Node::Backward backward,
              const char* op) {
  bool needs = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  Var out(std::move(value), needs);
  if (needs) {
    out.node_->inputs = std::move(inputs);
    out.node_->backward = std::move(backward);
    out.node_->op = op;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::vector<Var> grad(const Var& loss, const std::vector<Var>& wrt, bool create_graph) {
  if (loss.size() != 1)
    throw ContractError("grad() needs a scalar loss, got shape " + shape_str(loss.shape()));

  std::vector<Var> result(wrt.size());
  auto zeros_for = [&](std::size_t i) { result[i] = Var::constant(Tensor(wrt[i].shape())); };

  if (!loss.requires_grad()) {
    for (std::size_t i = 0; i < wrt.size(); ++i) zeros_for(i);
    return result;
  }

  // Iterative post-order DFS for a topological order.
  std::vector<Var> order;
  std::unordered_set<const Node*> seen;
  std::vector<std::pair<Var, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [v, next] = stack.back();
    if (next < v.inputs().size()) {
      const Var& in = v.inputs()[next++];
      if (in.requires_grad() && seen.insert(in.node()).second) stack.emplace_back(in, 0);
    } else {
      order.push_back(v);
      stack.pop_back();
    }
  }

  std::unordered_map<const Node*, Var> grads;
  grads.emplace(loss.node(), Var::constant(Tensor(loss.shape(), 1.0)));

  std::unordered_set<const Node*> targets;
  for (const auto& w : wrt)
    if (w.defined()) targets.insert(w.node());

  // Nodes with a target among their ancestors; everything else is skipped.
  // `order` lists inputs before their consumers.
  std::unordered_set<const Node*> reaches;
  for (const Var& v : order) {
    bool r = targets.count(v.node()) > 0;
    for (const Var& in : v.inputs())
      if (!r && reaches.count(in.node())) r = true;
    if (r) reaches.insert(v.node());
  }

  {
    std::unique_ptr<NoGradGuard> guard;
    if (!create_graph) guard = std::make_unique<NoGradGuard>();
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const Var& v = *it;
      if (v.is_leaf() || !reaches.count(v.node())) continue;
      auto found = grads.find(v.node());
      if (found == grads.end()) continue;
      Var g = found->second;
      // Intermediate gradients are no longer needed once propagated, unless
      // the caller asked for them.
      if (!targets.count(v.node())) grads.erase(found);
      std::vector<Var> in_grads = v.node()->backward(v, g);
      for (std::size_t k = 0; k < v.inputs().size(); ++k) {
        const Var& in = v.inputs()[k];
        if (!reaches.count(in.node()) || k >= in_grads.size() || !in_grads[k].defined()) continue;
        auto slot = grads.find(in.node());
        if (slot == grads.end())
          grads.emplace(in.node(), in_grads[k]);
        else
          slot->second = add(slot->second, in_grads[k]);
      }
    }
  }

  for (std::size_t i = 0; i < wrt.size(); ++i) {
    auto found = wrt[i].defined() ? grads.find(wrt[i].node()) : grads.end();
    if (found == grads.end())
      zeros_for(i);
    else
      result[i] = create_graph ? found->second : found->second.detach();
  }
  return result;
}

void dump_graph(const Var& root, std::ostream& os) {
  std::unordered_map<const Node*, std::size_t> ids;
  std::vector<Var> todo{root};
  ids.emplace(root.node(), 0);
  for (std::size_t i = 0; i < todo.size(); ++i) {
    const Var v = todo[i];
    os << '#' << ids[v.node()] << ' ' << v.op() << ' ' << shape_str(v.shape())
       << (v.requires_grad() ? " grad" : "");
    for (const auto& in : v.inputs()) {
      auto [it, fresh] = ids.emplace(in.node(), ids.size());
      if (fresh) todo.push_back(in);
      os << " <- #" << it->second;
    }
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a0, const Var& b0) {
  auto [a, b] = promote(a0, b0);
  return Var::make(map_binary(a.value(), b.value(), std::plus<>()), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, g}; }, "add");
}

Var sub(const Var& a0, const Var& b0) {
  auto [a, b] = promote(a0, b0);
  return Var::make(map_binary(a.value(), b.value(), std::minus<>()), {a, b},
                   [](const Var&, const Var& g) { return std::vector<Var>{g, neg(g)}; },
                   "sub");
}

Var mul(const Var& a0, const Var& b0) {
  auto [a, b] = promote(a0, b0);
  return Var::make(map_binary(a.value(), b.value(), std::multiplies<>()), {a, b},
                   [](const Var& self, const Var& g) {
                     const Var& x = self.inputs()[0];
                     const Var& y = self.inputs()[1];
                     return std::vector<Var>{mul(g, y), mul(g, x)};
                   },
                   "mul");
}

Var div(const Var& a0, const Var& b0) {
  auto [a, b] = promote(a0, b0);
  return Var::make(map_binary(a.value(), b.value(), std::divides<>()), {a, b},
                   [](const Var& self, const Var& g) {
                     const Var& x = self.inputs()[0];
                     const Var& y = self.inputs()[1];
                     Var gx = div(g, y);
                     return std::vector<Var>{gx, neg(mul(gx, div(x, y)))};
                   },
                   "div");
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var scale(const Var& a, double c) {
  return Var::make(map_unary(a.value(), [c](double v) { return c * v; }), {a},
                   [c](const Var&, const Var& g) { return std::vector<Var>{scale(g, c)}; },
                   "scale");
}

Var add_scalar(const Var& a, double c) {
  return Var::make(map_unary(a.value(), [c](double v) { return v + c; }), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{g}; }, "add_scalar");
}

Var exp(const Var& a) {
  return Var::make(map_unary(a.value(), [](double v) { return std::exp(v); }), {a},
                   [](const Var& self, const Var& g) {
                     // d exp(x) = exp(x); the output node carries the history
                     return std::vector<Var>{mul(g, self)};
                   },
                   "exp");
}

Var log(const Var& a) {
  return Var::make(map_unary(a.value(), [](double v) { return std::log(v); }), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{div(g, self.inputs()[0])};
                   },
                   "log");
}

namespace {
Var pow_impl(const Var& a, double p, bool zero_safe) {
  Tensor out = map_unary(a.value(), [p, zero_safe](double v) {
    if (zero_safe && v == 0.0 && p < 0.0) return 0.0;
    return std::pow(v, p);
  });
  return Var::make(std::move(out), {a},
                   [p](const Var& self, const Var& g) {
                     if (p == 1.0) return std::vector<Var>{g};
                     if (p == 2.0) return std::vector<Var>{mul(g, scale(self.inputs()[0], 2.0))};
                     return std::vector<Var>{
                         mul(g, scale(pow_impl(self.inputs()[0], p - 1.0, true), p))};
                   },
                   "pow");
}
}  // namespace

Var pow(const Var& a, double p) { return pow_impl(a, p, false); }

Var relu(const Var& a) {
  Tensor mask = map_unary(a.value(), [](double v) { return v > 0.0 ? 1.0 : 0.0; });
  Tensor out = map_binary(a.value(), mask, std::multiplies<>());
  return Var::make(std::move(out), {a},
                   [mask = std::move(mask)](const Var&, const Var& g) {
                     return std::vector<Var>{mul(g, Var::constant(mask))};
                   },
                   "relu");
}

Var sigmoid(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
  return Var::make(std::move(out), {a},
                   [](const Var& self, const Var& g) {
                     // σ' = σ(1-σ); recompute σ from the input so the rule is
                     // differentiable again.
                     Var s = sigmoid(self.inputs()[0]);
                     return std::vector<Var>{mul(g, sub(s, mul(s, s)))};
                   },
                   "sigmoid");
}

Var softplus(const Var& a) {
  Tensor out = map_unary(a.value(), [](double v) {
    return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
  });
  return Var::make(std::move(out), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{mul(g, sigmoid(self.inputs()[0]))};
                   },
                   "softplus");
}

// ---------------------------------------------------------------------------
// Broadcast / reduce

Var broadcast_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(shape, a.shape()) != shape)
    throw ShapeError("broadcast_to " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(shape);
  auto src = a.value().data();
  auto dst = out.data();
  for_each_broadcast(shape, a.shape(), [&](std::size_t o, std::size_t s) { dst[o] = src[s]; });
  return Var::make(std::move(out), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{sum_to(g, self.inputs()[0].shape())};
                   },
                   "broadcast");
}

Var sum_to(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  if (broadcast_shape(a.shape(), shape) != a.shape())
    throw ShapeError("sum_to " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(shape);
  auto src = a.value().data();
  auto dst = out.data();
  for_each_broadcast(a.shape(), shape, [&](std::size_t i, std::size_t o) { dst[o] += src[i]; });
  return Var::make(std::move(out), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{broadcast_to(g, self.inputs()[0].shape())};
                   },
                   "sum_to");
}

Var sum(const Var& a) {
  return reshape(sum_to(a, Shape(a.shape().size(), 1)), {1});
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var sum_axis(const Var& a, std::size_t axis) {
  if (axis >= a.shape().size()) throw ShapeError("sum_axis: axis out of range");
  Shape s = a.shape();
  s[axis] = 1;
  return sum_to(a, s);
}

Var logsumexp(const Var& a, std::size_t axis) {
  if (axis >= a.shape().size()) throw ShapeError("logsumexp: axis out of range");
  Shape s = a.shape();
  s[axis] = 1;
  // Shift by the (constant) per-slice maximum; the gradient is unaffected.
  Tensor shift(s, -std::numeric_limits<double>::infinity());
  auto src = a.value().data();
  auto dst = shift.data();
  for_each_broadcast(a.shape(), s,
                     [&](std::size_t i, std::size_t o) { dst[o] = std::max(dst[o], src[i]); });
  for (double& v : dst)
    if (!std::isfinite(v)) v = 0.0;
  Var m = Var::constant(std::move(shift));
  return add(log(sum_to(exp(sub(a, m)), s)), m);
}

// ---------------------------------------------------------------------------
// Structural

Var reshape(const Var& a, const Shape& shape) {
  if (a.shape() == shape) return a;
  return Var::make(a.value().reshaped(shape), {a},
                   [](const Var& self, const Var& g) {
                     return std::vector<Var>{reshape(g, self.inputs()[0].shape())};
                   },
                   "reshape");
}

Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw ShapeError("matmul " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  Tensor out({n, m});
  auto A = a.value().data();
  auto B = b.value().data();
  auto C = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B[p * m];
      double* crow = &C[i * m];
      for (std::size_t j = 0; j < m; ++j) crow[j] += aip * brow[j];
    }
  return Var::make(std::move(out), {a, b},
                   [](const Var& self, const Var& g) {
                     const Var& x = self.inputs()[0];
                     const Var& y = self.inputs()[1];
                     return std::vector<Var>{matmul(g, transpose(y)), matmul(transpose(x), g)};
                   },
                   "matmul");
}

Var transpose(const Var& a) {
  if (a.shape().size() != 2) throw ShapeError("transpose needs rank 2");
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  Tensor out({m, n});
  auto src = a.value().data();
  auto dst = out.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) dst[j * n + i] = src[i * m + j];
  return Var::make(std::move(out), {a},
                   [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; },
                   "transpose");
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& index) {
  if (a.shape().empty() || index.empty()) throw ShapeError("gather_rows: empty");
  const std::size_t rows = a.shape()[0];
  const std::size_t width = a.size() / rows;
  Shape s = a.shape();
  s[0] = index.size();
  Tensor out(s);
  auto src = a.value().data();
  auto dst = out.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(&src[index[i] * width], width, &dst[i * width]);
  }
  return Var::make(std::move(out), {a},
                   [index](const Var& self, const Var& g) {
                     return std::vector<Var>{
                         scatter_rows(g, index, self.inputs()[0].shape()[0])};
                   },
                   "gather_rows");
}

Var scatter_rows(const Var& a, const std::vector<std::size_t>& index, std::size_t rows) {
  if (a.shape().empty() || a.shape()[0] != index.size())
    throw ShapeError("scatter_rows: index length mismatch");
  const std::size_t width = a.size() / index.size();
  Shape s = a.shape();
  s[0] = rows;
  Tensor out(s);
  auto src = a.value().data();
  auto dst = out.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) throw ShapeError("scatter_rows: index out of range");
    for (std::size_t j = 0; j < width; ++j) dst[index[i] * width + j] += src[i * width + j];
  }
  return Var::make(std::move(out), {a},
                   [index](const Var&, const Var& g) {
                     return std::vector<Var>{gather_rows(g, index)};
                   },
                   "scatter_rows");
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no parts");
  Shape s = parts[0].shape();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    if (ps.size() != s.size() || !std::equal(ps.begin() + 1, ps.end(), s.begin() + 1))
      throw ShapeError("concat_rows: trailing shape mismatch");
    rows += ps[0];
  }
  s[0] = rows;
  std::vector<double> data;
  data.reserve(numel(s));
  for (const auto& p : parts) data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  return Var::make(Tensor(s, std::move(data)), parts,
                   [](const Var& self, const Var& g) {
                     std::vector<Var> out;
                     std::size_t start = 0;
                     for (const auto& p : self.inputs()) {
                       std::vector<std::size_t> idx(p.shape()[0]);
                       for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
                       start += idx.size();
                       out.push_back(gather_rows(g, idx));
                     }
                     return out;
                   },
                   "concat_rows");
}

Var operator+(const Var& a, const Var& b) { return add(a, b); }
Var operator-(const Var& a, const Var& b) { return sub(a, b); }
Var operator*(const Var& a, const Var& b) { return mul(a, b); }
Var operator/(const Var& a, const Var& b) { return div(a, b); }
Var operator-(const Var& a) { return neg(a); }
Var operator*(double c, const Var& a) { return scale(a, c); }
Var operator*(const Var& a, double c) { return scale(a, c); }

}  // namespace tsap

#include "tsap/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace tsap {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

struct ConvDims {
  std::size_t batch, channels, len, out_channels, kernel, out_len;
};

// cols(c*K + k, b*T + t) = x[b, c, t*s + k*d]
RowMat im2col(std::span<const double> x, const ConvDims& d, std::size_t stride,
              std::size_t dilation) {
  const std::size_t bt = d.batch * d.out_len;
  RowMat cols(d.channels * d.kernel, bt);
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t k = 0; k < d.kernel; ++k) {
      double* row = cols.data() + (c * d.kernel + k) * bt;
      for (std::size_t b = 0; b < d.batch; ++b) {
        const double* src = x.data() + (b * d.channels + c) * d.len + k * dilation;
        double* dst = row + b * d.out_len;
        for (std::size_t t = 0; t < d.out_len; ++t) dst[t] = src[t * stride];
      }
    }
  return cols;
}

// x[b, c, t*s + k*d] += cols(c*K + k, b*T + t)
void col2im(const RowMat& cols, std::span<double> x, const ConvDims& d, std::size_t stride,
            std::size_t dilation) {
  const std::size_t bt = d.batch * d.out_len;
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t k = 0; k < d.kernel; ++k) {
      const double* row = cols.data() + (c * d.kernel + k) * bt;
      for (std::size_t b = 0; b < d.batch; ++b) {
        double* dst = x.data() + (b * d.channels + c) * d.len + k * dilation;
        const double* src = row + b * d.out_len;
        for (std::size_t t = 0; t < d.out_len; ++t) dst[t * stride] += src[t];
      }
    }
}

// [B,O,T] <-> (O x B*T)
RowMat to_channel_major(std::span<const double> y, std::size_t batch, std::size_t ch,
                        std::size_t len) {
  RowMat m(ch, batch * len);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < ch; ++o)
      std::copy_n(y.data() + (b * ch + o) * len, len, m.data() + o * batch * len + b * len);
  return m;
}

Tensor from_channel_major(const RowMat& m, std::size_t batch, std::size_t ch, std::size_t len) {
  Tensor y({batch, ch, len});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < ch; ++o)
      std::copy_n(m.data() + o * batch * len + b * len, len, y.data().data() + (b * ch + o) * len);
  return y;
}

void require_rank3(const Var& v, const char* what) {
  if (v.shape().size() != 3)
    throw ShapeError(std::string(what) + " must be rank 3, got " + shape_str(v.shape()));
}

}  // namespace

std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                         std::size_t dilation) {
  if (stride == 0 || dilation == 0 || kernel == 0)
    throw ShapeError("conv: stride, dilation and kernel must be positive");
  const std::size_t span = dilation * (kernel - 1) + 1;
  if (len < span)
    throw ShapeError("conv: input length " + std::to_string(len) + " shorter than receptive span " +
                     std::to_string(span));
  return (len - span) / stride + 1;
}

std::size_t conv_transposed_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                                    std::size_t dilation) {
  if (stride == 0 || dilation == 0 || kernel == 0 || len == 0)
    throw ShapeError("conv_transposed: invalid geometry");
  return (len - 1) * stride + dilation * (kernel - 1) + 1;
}

Var conv1d_raw(const Var& x, const Var& w, std::size_t stride, std::size_t dilation) {
  require_rank3(x, "conv1d input");
  require_rank3(w, "conv1d weight");
  if (x.shape()[1] != w.shape()[1])
    throw ShapeError("conv1d: input channels " + std::to_string(x.shape()[1]) +
                     " vs weight " + shape_str(w.shape()));
  ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], w.shape()[0], w.shape()[2], 0};
  d.out_len = conv_out_len(d.len, d.kernel, stride, dilation);
  RowMat cols = im2col(x.value().data(), d, stride, dilation);
  ConstMap wm(w.value().data().data(), d.out_channels, d.channels * d.kernel);
  RowMat out = wm * cols;
  return Var::make(from_channel_major(out, d.batch, d.out_channels, d.out_len), {x, w},
                   [stride, dilation](const Var& self, const Var& g) {
                     const Var& x = self.inputs()[0];
                     const Var& w = self.inputs()[1];
                     return std::vector<Var>{
                         conv1d_adjoint(g, w, x.shape()[2], stride, dilation),
                         conv1d_weight_adjoint(x, g, w.shape()[2], stride, dilation)};
                   },
                   "conv1d");
}

Var conv1d_adjoint(const Var& y, const Var& w, std::size_t in_len, std::size_t stride,
                   std::size_t dilation) {
  require_rank3(y, "conv1d_adjoint input");
  require_rank3(w, "conv1d_adjoint weight");
  if (y.shape()[1] != w.shape()[0])
    throw ShapeError("conv1d_adjoint: channels " + shape_str(y.shape()) + " vs weight " +
                     shape_str(w.shape()));
  ConvDims d{y.shape()[0], w.shape()[1], in_len, w.shape()[0], w.shape()[2], y.shape()[2]};
  if (conv_out_len(in_len, d.kernel, stride, dilation) != d.out_len)
    throw ShapeError("conv1d_adjoint: length " + std::to_string(in_len) +
                     " inconsistent with input " + shape_str(y.shape()));
  RowMat gm = to_channel_major(y.value().data(), d.batch, d.out_channels, d.out_len);
  ConstMap wm(w.value().data().data(), d.out_channels, d.channels * d.kernel);
  RowMat cols = wm.transpose() * gm;
  Tensor out({d.batch, d.channels, in_len});
  col2im(cols, out.data(), d, stride, dilation);
  return Var::make(std::move(out), {y, w},
                   [stride, dilation](const Var& self, const Var& h) {
                     const Var& y = self.inputs()[0];
                     const Var& w = self.inputs()[1];
                     return std::vector<Var>{
                         conv1d_raw(h, w, stride, dilation),
                         conv1d_weight_adjoint(h, y, w.shape()[2], stride, dilation)};
                   },
                   "conv1d_adjoint");
}

Var conv1d_weight_adjoint(const Var& x, const Var& y, std::size_t kernel, std::size_t stride,
                          std::size_t dilation) {
  require_rank3(x, "conv1d_weight_adjoint input");
  require_rank3(y, "conv1d_weight_adjoint output");
  ConvDims d{x.shape()[0], x.shape()[1], x.shape()[2], y.shape()[1], kernel, y.shape()[2]};
  if (y.shape()[0] != d.batch || conv_out_len(d.len, kernel, stride, dilation) != d.out_len)
    throw ShapeError("conv1d_weight_adjoint: " + shape_str(x.shape()) + " vs " +
                     shape_str(y.shape()));
  RowMat cols = im2col(x.value().data(), d, stride, dilation);
  RowMat gm = to_channel_major(y.value().data(), d.batch, d.out_channels, d.out_len);
  RowMat dw = gm * cols.transpose();
  Tensor out({d.out_channels, d.channels, kernel},
             std::vector<double>(dw.data(), dw.data() + dw.size()));
  return Var::make(std::move(out), {x, y},
                   [stride, dilation](const Var& self, const Var& h) {
                     const Var& x = self.inputs()[0];
                     const Var& y = self.inputs()[1];
                     return std::vector<Var>{conv1d_adjoint(y, h, x.shape()[2], stride, dilation),
                                             conv1d_raw(x, h, stride, dilation)};
                   },
                   "conv1d_weight_adjoint");
}

Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride, std::size_t dilation) {
  Var y = conv1d_raw(x, w, stride, dilation);
  if (!b.defined()) return y;
  if (b.shape() != Shape{w.shape()[0]})
    throw ShapeError("conv1d bias " + shape_str(b.shape()) + " for weight " + shape_str(w.shape()));
  return add(y, reshape(b, {1, b.shape()[0], 1}));
}

Var conv1d_transposed(const Var& x, const Var& w, const Var& b, std::size_t stride,
                      std::size_t output_padding) {
  require_rank3(x, "conv1d_transposed input");
  require_rank3(w, "conv1d_transposed weight");
  if (output_padding >= stride)
    throw ShapeError("conv1d_transposed: output padding must be smaller than stride");
  const std::size_t out_len =
      conv_transposed_out_len(x.shape()[2], w.shape()[2], stride) + output_padding;
  Var y = conv1d_adjoint(x, w, out_len, stride, 1);
  if (!b.defined()) return y;
  if (b.shape() != Shape{w.shape()[1]})
    throw ShapeError("conv1d_transposed bias " + shape_str(b.shape()) + " for weight " +
                     shape_str(w.shape()));
  return add(y, reshape(b, {1, b.shape()[0], 1}));
}

Var linear(const Var& x, const Var& w, const Var& b) {
  if (x.shape().size() != 2 || w.shape().size() != 2 || x.shape()[1] != w.shape()[1])
    throw ShapeError("linear: input " + shape_str(x.shape()) + " weight " + shape_str(w.shape()));
  Var y = matmul(x, transpose(w));
  if (!b.defined()) return y;
  if (b.shape() != Shape{w.shape()[0]})
    throw ShapeError("linear bias " + shape_str(b.shape()));
  return add(y, reshape(b, {1, b.shape()[0]}));
}

Var avgpool1d(const Var& x, std::size_t kernel, std::size_t stride) {
  require_rank3(x, "avgpool1d input");
  const std::size_t rows = x.shape()[0] * x.shape()[1];
  const std::size_t len = x.shape()[2];
  const std::size_t out_len = conv_out_len(len, kernel, stride);
  Tensor out({x.shape()[0], x.shape()[1], out_len});
  auto src = x.value().data();
  auto dst = out.data();
  const double inv = 1.0 / static_cast<double>(kernel);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < out_len; ++t) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kernel; ++k) acc += src[r * len + t * stride + k];
      dst[r * out_len + t] = acc * inv;
    }
  return Var::make(std::move(out), {x},
                   [kernel, stride](const Var& self, const Var& g) {
                     return std::vector<Var>{
                         avgpool1d_adjoint(g, kernel, stride, self.inputs()[0].shape()[2])};
                   },
                   "avgpool1d");
}

Var avgpool1d_adjoint(const Var& y, std::size_t kernel, std::size_t stride, std::size_t in_len) {
  require_rank3(y, "avgpool1d_adjoint input");
  const std::size_t rows = y.shape()[0] * y.shape()[1];
  const std::size_t out_len = y.shape()[2];
  if (conv_out_len(in_len, kernel, stride) != out_len)
    throw ShapeError("avgpool1d_adjoint: inconsistent lengths");
  Tensor out({y.shape()[0], y.shape()[1], in_len});
  auto src = y.value().data();
  auto dst = out.data();
  const double inv = 1.0 / static_cast<double>(kernel);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < out_len; ++t)
      for (std::size_t k = 0; k < kernel; ++k)
        dst[r * in_len + t * stride + k] += src[r * out_len + t] * inv;
  return Var::make(std::move(out), {y},
                   [kernel, stride](const Var&, const Var& g) {
                     return std::vector<Var>{avgpool1d(g, kernel, stride)};
                   },
                   "avgpool1d_adjoint");
}

Var flatten(const Var& x) {
  if (x.shape().empty()) throw ShapeError("flatten of rank-0 tensor");
  return reshape(x, {x.shape()[0], x.size() / x.shape()[0]});
}

Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool train) {
  const std::size_t rank = x.shape().size();
  if (rank != 2 && rank != 3) throw ShapeError("batchnorm1d expects [B,C] or [B,C,L]");
  const std::size_t channels = x.shape()[1];
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels})
    throw ShapeError("batchnorm1d: affine parameters must have shape [C]");
  Shape stat_shape = rank == 2 ? Shape{1, channels} : Shape{1, channels, 1};
  Var g = reshape(gamma, stat_shape);
  Var b = reshape(beta, stat_shape);

  if (!train) {
    Var m = reshape(state.running_mean, stat_shape);
    Var inv = reshape(pow(add_scalar(state.running_var, state.eps), -0.5), stat_shape);
    return add(mul(mul(sub(x, m), inv), g), b);
  }

  const double n = static_cast<double>(x.size() / channels);
  if (n < 2) throw ShapeError("batchnorm1d in training mode needs more than one value per channel");
  Var mu = scale(sum_to(x, stat_shape), 1.0 / n);
  Var xc = sub(x, mu);
  Var var = scale(sum_to(mul(xc, xc), stat_shape), 1.0 / n);
  Var y = add(mul(mul(xc, pow(add_scalar(var, state.eps), -0.5)), g), b);

  Tensor rm = state.running_mean.value();
  Tensor rv = state.running_var.value();
  const double unbias = n / (n - 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    rm[c] = (1.0 - state.momentum) * rm[c] + state.momentum * mu.value()[c];
    rv[c] = (1.0 - state.momentum) * rv[c] + state.momentum * var.value()[c] * unbias;
  }
  state.running_mean.assign(std::move(rm));
  state.running_var.assign(std::move(rv));
  return y;
}

Var dropout(const Var& x, double keep_prob, Rng& rng) {
  if (!(keep_prob > 0.0 && keep_prob <= 1.0))
    throw ContractError("dropout keep probability must be in (0, 1]");
  if (keep_prob == 1.0) return x;
  Tensor mask(x.shape());
  for (double& m : mask.vec()) m = rng.bernoulli(keep_prob) ? 1.0 / keep_prob : 0.0;
  return mul(x, Var::constant(std::move(mask)));
}

// ---------------------------------------------------------------------------

Var& ParamSet::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw ContractError("duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Var(std::move(value), trainable), trainable});
  return entries_.back().var;
}

const Var& ParamSet::operator[](const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].var;
}

Var& ParamSet::operator[](const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return entries_[it->second].var;
}

std::vector<std::string> ParamSet::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.name);
  return out;
}

std::vector<Var> ParamSet::trainable() const {
  std::vector<Var> out;
  for (const auto& e : entries_)
    if (e.trainable) out.push_back(e.var);
  return out;
}

void ParamSet::set_trainable(const std::vector<Var>& vars) {
  std::size_t i = 0;
  for (auto& e : entries_) {
    if (!e.trainable) continue;
    if (i >= vars.size()) throw ContractError("set_trainable: too few values");
    if (vars[i].shape() != e.var.shape())
      throw ShapeError("set_trainable: shape mismatch for '" + e.name + "'");
    e.var = vars[i++];
  }
  if (i != vars.size()) throw ContractError("set_trainable: too many values");
}

ParamSet ParamSet::clone() const {
  ParamSet out(seed_);
  for (const auto& e : entries_) out.add(e.name, e.var.value(), e.trainable);
  return out;
}

ParamSet ParamSet::detached() const {
  ParamSet out(seed_);
  out.index_ = index_;
  for (const auto& e : entries_)
    out.entries_.push_back({e.name, e.trainable ? e.var.detach(true) : e.var, e.trainable});
  return out;
}

std::size_t ParamSet::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.var.size();
  return n;
}

Tensor init_uniform_fan_in(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& v : t.vec()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace tsap

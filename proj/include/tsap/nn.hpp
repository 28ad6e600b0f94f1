#pragma once

// Neural-network layers on top of the autodiff core.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tsap/autodiff.hpp"
#include "tsap/rng.hpp"

namespace tsap {

/// Output length of a strided, dilated valid convolution.
/// Throws ShapeError when the result would be < 1.
std::size_t conv_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                         std::size_t dilation = 1);
/// Output length of a transposed convolution (before output padding).
std::size_t conv_transposed_out_len(std::size_t len, std::size_t kernel, std::size_t stride,
                                    std::size_t dilation = 1);

// The three bilinear convolution primitives. Each one's derivatives are
// expressed through the other two, so the family is closed under
// differentiation.

/// y[b,o,t] = sum_{c,k} w[o,c,k] x[b,c,t*stride + k*dilation]
Var conv1d_raw(const Var& x, const Var& w, std::size_t stride, std::size_t dilation);
/// Adjoint of conv1d_raw in x: scatters y[B,O,T] back to length `in_len`.
Var conv1d_adjoint(const Var& y, const Var& w, std::size_t in_len, std::size_t stride,
                   std::size_t dilation);
/// Adjoint of conv1d_raw in w: dw[o,c,k] = sum_{b,t} y[b,o,t] x[b,c,t*s + k*d].
Var conv1d_weight_adjoint(const Var& x, const Var& y, std::size_t kernel, std::size_t stride,
                          std::size_t dilation);

/// Cross-correlation with bias. x[B,Cin,L], w[Cout,Cin,K], b[Cout] (b may be
/// undefined).
Var conv1d(const Var& x, const Var& w, const Var& b, std::size_t stride = 1,
           std::size_t dilation = 1);

/// Transposed convolution; w[Cin,Cout,K] as in the usual deep-learning
/// convention. Output length (L-1)*stride + K + output_padding.
Var conv1d_transposed(const Var& x, const Var& w, const Var& b, std::size_t stride = 1,
                      std::size_t output_padding = 0);

/// y[B,F_out] = x[B,F_in] w[F_out,F_in]^T + b[F_out]
Var linear(const Var& x, const Var& w, const Var& b);

Var avgpool1d(const Var& x, std::size_t kernel, std::size_t stride);
/// Adjoint of avgpool1d back to length `in_len`.
Var avgpool1d_adjoint(const Var& y, std::size_t kernel, std::size_t stride, std::size_t in_len);

/// [B, ...] -> [B, prod(...)]
Var flatten(const Var& x);

struct BatchNormState {
  Var running_mean;  // [C], constant
  Var running_var;   // [C], constant
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Batch normalization over all axes but the channel axis 1, for [B,C] or
/// [B,C,L]. In training mode normalizes with batch statistics (biased
/// variance) and updates the running statistics in place; in eval mode uses
/// the running statistics.
Var batchnorm1d(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state,
                bool train);

/// Inverted dropout with the given keep probability; the mask is a constant.
Var dropout(const Var& x, double keep_prob, Rng& rng);

/// One (transposed) convolution stage of a model description.
struct ConvSpec {
  std::size_t in = 1, out = 1, kernel = 1, stride = 1, dilation = 1;
  std::size_t output_padding = 0;  // transposed stages only
  bool relu = true;
  bool batchnorm = false;  // applied after the activation
};

// ---------------------------------------------------------------------------

/// Named collection of model tensors. Copies share the underlying nodes, so
/// a copy with some entries replaced is a cheap "view" of the parameters at
/// another point of an unrolled optimization.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable = true;
  };

  ParamSet() = default;
  explicit ParamSet(std::uint64_t seed) : seed_(seed) {}

  Var& add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) > 0; }
  const Var& operator[](const std::string& name) const;
  Var& operator[](const std::string& name);

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::vector<std::string> trainable_names() const;
  std::vector<Var> trainable() const;
  /// Replaces the trainable entries, in trainable_names() order.
  void set_trainable(const std::vector<Var>& vars);

  /// Deep copy: new leaf nodes with copied values.
  ParamSet clone() const;
  /// Same values as fresh leaves; trainable entries require grad.
  ParamSet detached() const;

  std::uint64_t seed() const { return seed_; }
  std::size_t total_size() const;

 private:
  std::uint64_t seed_ = 0;
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

/// Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor init_uniform_fan_in(const Shape& shape, std::size_t fan_in, Rng& rng);

}  // namespace tsap

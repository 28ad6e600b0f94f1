#pragma once

// Distribution alignment between empirical embedding sets.

#include <cstddef>

#include "tsap/autodiff.hpp"

namespace tsap {

/// n x d embeddings; `normalized` asserts unit-norm rows.
struct EmbeddingSet {
  Var z;
  bool normalized = false;

  EmbeddingSet() = default;
  explicit EmbeddingSet(Var z_, bool normalized_ = false)
      : z(std::move(z_)), normalized(normalized_) {}
  std::size_t rows() const { return z.shape()[0]; }
  std::size_t dim() const { return z.shape()[1]; }
};

struct SinkhornConfig {
  double p = 2.0;         // ground cost ||a - b||^p
  double epsilon = 0.05;  // entropic regularization
  int max_iter = 200;
  double tol = 1e-6;      // L1 marginal violation; 0 runs exactly max_iter
};

struct SinkhornResult {
  Var cost;        // <P, C>, differentiable in both inputs
  Tensor plan;     // n x m
  int iterations = 0;
  bool converged = false;
  double marginal_error = 0.0;  // L1 violation of both marginals, summed
};

/// Rescales rows to unit L2 norm. Throws DegenerateEmbedding if a row norm
/// is below 1e-12.
EmbeddingSet normalize_embeddings(const EmbeddingSet& z);

/// Pairwise squared Euclidean distances, [n,d] x [m,d] -> [n,m]. Exact zero
/// for identical rows.
Var pairwise_sq_dist(const Var& a, const Var& b);

/// Ground-cost matrix ||a_i - b_j||^p.
Var cost_matrix(const Var& a, const Var& b, double p);

/// Entropic OT between uniform empirical measures on the rows of a and b,
/// solved in the log domain by alternating potential updates, run in both
/// orders and averaged so the result is symmetric in (a, b). The
/// iterations are recorded in the graph, so gradients flow to a and b by
/// unrolled differentiation. Non-convergence is reported through the result
/// flag; a non-finite cost throws NumericError.
SinkhornResult sinkhorn(const EmbeddingSet& a, const EmbeddingSet& b, const SinkhornConfig& cfg);

Var sinkhorn_distance(const EmbeddingSet& a, const EmbeddingSet& b, const SinkhornConfig& cfg);

/// Exact OT cost between two equal-size uniform point sets (an assignment
/// problem, solved with the Hungarian algorithm). Size is capped at 12.
double exact_ot(const Tensor& a, const Tensor& b, double p);

/// Squared Euclidean distance between the row means of a and b.
Var pointwise_loss(const EmbeddingSet& a, const EmbeddingSet& b);

/// Soft-min half step of log-domain Sinkhorn:
///   f_i = -eps * LSE_j((g_j - C_ij) / eps) + eps * log_weight.
/// Keeps no n x m intermediates alive; they are recomputed on the way back.
Var softmin_step(const Var& cost, const Var& g, double eps, double log_weight);

}  // namespace tsap

#include "tsap/ot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tsap {

namespace {

void require_matrix(const Var& v, const char* what) {
  if (v.shape().size() != 2) throw ShapeError(std::string(what) + " must be an n x d matrix");
}

// Row-wise soft-min weights S_ij = softmax_j((g_j - C_ij)/eps), computed from
// values only.
Tensor softmin_weights(const Tensor& cost, const Tensor& g, double eps) {
  const std::size_t n = cost.dim(0), m = cost.dim(1);
  Tensor s({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, (g[j] - cost[i * m + j]) / eps);
    double acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double e = std::exp((g[j] - cost[i * m + j]) / eps - mx);
      s[i * m + j] = e;
      acc += e;
    }
    for (std::size_t j = 0; j < m; ++j) s[i * m + j] /= acc;
  }
  return s;
}

// log of the plan, (f_i + g_j - C_ij)/eps, as graph ops.
Var log_plan(const Var& cost, const Var& f, const Var& g, double eps) {
  const std::size_t n = cost.shape()[0], m = cost.shape()[1];
  Var fg = add(reshape(f, {n, 1}), reshape(g, {1, m}));
  return scale(sub(fg, cost), 1.0 / eps);
}

double marginal_error(const Tensor& cost, const Tensor& f, const Tensor& g, double eps) {
  const std::size_t n = cost.dim(0), m = cost.dim(1);
  std::vector<double> col(m, 0.0);
  double err = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double p = std::exp((f[i] + g[j] - cost[i * m + j]) / eps);
      row += p;
      col[j] += p;
    }
    err += std::abs(row - 1.0 / static_cast<double>(n));
  }
  for (double c : col) err += std::abs(c - 1.0 / static_cast<double>(m));
  return err;
}

// Hungarian algorithm (shortest augmenting path, O(n^3)) on a square cost
// matrix; returns the minimum total assignment cost.
double assignment_min_cost(const std::vector<std::vector<double>>& c) {
  const std::size_t n = c.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = c[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (std::size_t j = 1; j <= n; ++j) total += c[p[j] - 1][j - 1];
  return total;
}

}  // namespace

EmbeddingSet normalize_embeddings(const EmbeddingSet& z) {
  require_matrix(z.z, "embedding set");
  const std::size_t n = z.rows(), d = z.dim();
  Var sq = sum_to(mul(z.z, z.z), {n, 1});
  for (std::size_t i = 0; i < n; ++i)
    if (std::sqrt(sq.value()[i]) < 1e-12)
      throw DegenerateEmbedding("embedding row " + std::to_string(i) +
                                " has (near-)zero norm; embeddings collapsed");
  (void)d;
  return EmbeddingSet(mul(z.z, pow(sq, -0.5)), true);
}

Var pairwise_sq_dist(const Var& a, const Var& b) {
  require_matrix(a, "pairwise_sq_dist lhs");
  require_matrix(b, "pairwise_sq_dist rhs");
  if (a.shape()[1] != b.shape()[1]) throw ShapeError("pairwise_sq_dist: dimension mismatch");
  const std::size_t n = a.shape()[0], m = b.shape()[0], d = a.shape()[1];
  Tensor out({n, m});
  auto A = a.value().data();
  auto B = b.value().data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = A[i * d + k] - B[j * d + k];
        acc += diff * diff;
      }
      out[i * m + j] = acc;
    }
  return Var::make(std::move(out), {a, b},
                   [](const Var& self, const Var& g) {
                     // dA_i = 2 (sum_j G_ij) a_i - 2 (G B)_i ; dB_j symmetric.
                     const Var& a = self.inputs()[0];
                     const Var& b = self.inputs()[1];
                     const std::size_t n = a.shape()[0], m = b.shape()[0];
                     Var row = sum_to(g, {n, 1});
                     Var col = reshape(sum_to(g, {1, m}), {m, 1});
                     Var ga = scale(sub(mul(row, a), matmul(g, b)), 2.0);
                     Var gb = scale(sub(mul(col, b), matmul(transpose(g), a)), 2.0);
                     return std::vector<Var>{ga, gb};
                   },
                   "pairwise_sq_dist");
}

Var cost_matrix(const Var& a, const Var& b, double p) {
  if (!(p > 0.0)) throw ContractError("ground-cost order p must be positive");
  Var sq = pairwise_sq_dist(a, b);
  return p == 2.0 ? sq : pow(sq, p / 2.0);
}

Var softmin_step(const Var& cost, const Var& g, double eps, double log_weight) {
  const std::size_t n = cost.shape()[0], m = cost.shape()[1];
  if (g.shape() != Shape{m}) throw ShapeError("softmin_step: potential/cost mismatch");
  Tensor out({n});
  {
    const Tensor& C = cost.value();
    const Tensor& G = g.value();
    for (std::size_t i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, (G[j] - C[i * m + j]) / eps);
      double acc = 0.0;
      for (std::size_t j = 0; j < m; ++j) acc += std::exp((G[j] - C[i * m + j]) / eps - mx);
      out[i] = -eps * (mx + std::log(acc)) + eps * log_weight;
    }
  }
  return Var::make(
      std::move(out), {cost, g},
      [eps](const Var& self, const Var& u) {
        const Var& cost = self.inputs()[0];
        const Var& g = self.inputs()[1];
        const std::size_t n = cost.shape()[0], m = cost.shape()[1];
        Var s;
        if (grad_enabled()) {
          // Recorded backward: build the weights from differentiable ops.
          Var z = scale(sub(reshape(g, {1, m}), cost), 1.0 / eps);
          s = exp(sub(z, logsumexp(z, 1)));
        } else {
          s = Var::constant(softmin_weights(cost.value(), g.value(), eps));
        }
        Var us = mul(reshape(u, {n, 1}), s);
        return std::vector<Var>{us, neg(reshape(sum_to(us, {1, m}), {m}))};
      },
      "softmin_step");
}

namespace {

struct Potentials {
  Var f, g;
  int iterations = 0;
  bool converged = false;
  double error = 0.0;
};

// Alternating log-domain Sinkhorn. `f_first` picks which potential is
// updated first in each sweep.
Potentials alternating_sinkhorn(const Var& cost, const Var& cost_t, const SinkhornConfig& cfg,
                                bool f_first) {
  const std::size_t n = cost.shape()[0], m = cost.shape()[1];
  const double eps = cfg.epsilon;
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Var f = Var::constant(Tensor({n}));
  Var g = Var::constant(Tensor({m}));
  Potentials best;
  best.error = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iter; ++it) {
    if (f_first) {
      f = softmin_step(cost, g, eps, log_a);
      g = softmin_step(cost_t, f, eps, log_b);
    } else {
      g = softmin_step(cost_t, f, eps, log_b);
      f = softmin_step(cost, g, eps, log_a);
    }
    const double err = marginal_error(cost.value(), f.value(), g.value(), eps);
    if (cfg.tol <= 0.0) {
      // Fixed-iteration mode: always the last iterate, for a smooth unrolled map.
      best = {f, g, it, true, err};
      continue;
    }
    if (err < best.error) best = {f, g, it, false, err};
    best.iterations = it;
    if (err <= cfg.tol) {
      best.converged = true;
      break;
    }
  }
  return best;
}

}  // namespace

SinkhornResult sinkhorn(const EmbeddingSet& a, const EmbeddingSet& b, const SinkhornConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) throw ContractError("sinkhorn: epsilon must be positive");
  if (cfg.max_iter < 1) throw ContractError("sinkhorn: max_iter must be >= 1");
  require_matrix(a.z, "sinkhorn lhs");
  require_matrix(b.z, "sinkhorn rhs");

  Var cost = cost_matrix(a.z, b.z, cfg.p);
  Var cost_t = transpose(cost);
  // Both update orders, averaged: swapping a and b swaps the two runs, so the
  // result is symmetric to rounding.
  Potentials fg = alternating_sinkhorn(cost, cost_t, cfg, true);
  Potentials gf = alternating_sinkhorn(cost, cost_t, cfg, false);
  Var plan = scale(add(exp(log_plan(cost, fg.f, fg.g, cfg.epsilon)),
                       exp(log_plan(cost, gf.f, gf.g, cfg.epsilon))),
                   0.5);

  SinkhornResult res;
  res.cost = sum(mul(plan, cost));
  res.plan = plan.value();
  res.iterations = std::max(fg.iterations, gf.iterations);
  res.converged = fg.converged && gf.converged;
  res.marginal_error = std::max(fg.error, gf.error);
  if (!std::isfinite(res.cost.item()))
    throw NumericError("sinkhorn: non-finite transport cost (epsilon too small for the cost scale?)");
  return res;
}

Var sinkhorn_distance(const EmbeddingSet& a, const EmbeddingSet& b, const SinkhornConfig& cfg) {
  return sinkhorn(a, b, cfg).cost;
}

double exact_ot(const Tensor& a, const Tensor& b, double p) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
    throw ShapeError("exact_ot: inputs must be n x d matrices of equal width");
  const std::size_t n = a.dim(0), d = a.dim(1);
  if (b.dim(0) != n) throw ContractError("exact_ot: point sets must have equal size");
  if (n > 12) throw ContractError("exact_ot: at most 12 points per set (got " + std::to_string(n) + ")");
  std::vector<std::vector<double>> c(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a[i * d + k] - b[j * d + k];
        sq += diff * diff;
      }
      c[i][j] = std::pow(sq, p / 2.0);
    }
  return assignment_min_cost(c) / static_cast<double>(n);
}

Var pointwise_loss(const EmbeddingSet& a, const EmbeddingSet& b) {
  require_matrix(a.z, "pointwise_loss lhs");
  require_matrix(b.z, "pointwise_loss rhs");
  if (a.dim() != b.dim()) throw ShapeError("pointwise_loss: dimension mismatch");
  Var ma = scale(sum_to(a.z, {1, a.dim()}), 1.0 / static_cast<double>(a.rows()));
  Var mb = scale(sum_to(b.z, {1, b.dim()}), 1.0 / static_cast<double>(b.rows()));
  Var diff = sub(ma, mb);
  return sum(mul(diff, diff));
}

}  // namespace tsap

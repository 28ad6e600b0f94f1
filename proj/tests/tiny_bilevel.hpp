#pragma once

#include <array>
#include <vector>

#include "tsap/selftune.hpp"

namespace tsap::testing {

// Tiny analytic instance: theta in R^2 is a linear encoder, a scalar.
//   inner(theta, a) = mean_i (theta . x_i - a y_i)^2
//   outer(theta, a) = mean_j (theta . v_j - t_j)^2 + s a^2 / 2
// Inner steps are plain SGD.

struct Tiny {
  std::vector<std::array<double, 2>> x{{1.0, 0.5}, {-0.3, 2.0}, {0.7, -1.1}};
  std::vector<double> y{1.0, -0.5, 2.0};
  std::vector<std::array<double, 2>> v{{0.2, 1.0}, {1.5, -0.4}};
  std::vector<double> t{0.3, -1.0};
  double s = 0.7, lr = 0.1;
  std::array<double, 2> theta0{0.4, -0.2};

  // Plain-double pipeline: L SGD steps, then the outer loss.
  double pipeline(double a, int L) const {
    auto th = theta0;
    for (int k = 0; k < L; ++k) {
      std::array<double, 2> g{0, 0};
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = th[0] * x[i][0] + th[1] * x[i][1] - a * y[i];
        g[0] += 2 * r * x[i][0] / static_cast<double>(x.size());
        g[1] += 2 * r * x[i][1] / static_cast<double>(x.size());
      }
      th[0] -= lr * g[0];
      th[1] -= lr * g[1];
    }
    return outer_value(th, a);
  }

  double outer_value(const std::array<double, 2>& th, double a) const {
    double o = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const double r = th[0] * v[j][0] + th[1] * v[j][1] - t[j];
      o += r * r / static_cast<double>(v.size());
    }
    return o + 0.5 * s * a * a;
  }

  Tensor rows(const std::vector<std::array<double, 2>>& p) const {
    Tensor m({p.size(), 2});
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[2 * i] = p[i][0];
      m[2 * i + 1] = p[i][1];
    }
    return m;
  }

  UnrollResult unroll(double a0, int L, bool second_order) const {
    Var a = Var::param(Tensor::from({a0}));
    Var X = Var::constant(rows(x)), V = Var::constant(rows(v));
    Var Y = Var::constant(Tensor({y.size(), 1}, std::vector<double>(y)));
    Var Tt = Var::constant(Tensor({t.size(), 1}, std::vector<double>(t)));
    auto inner = [&](const std::vector<Var>& th, int) {
      Var r = sub(matmul(X, th[0]), mul(Y, broadcast_to(reshape(a, {1, 1}), {y.size(), 1})));
      return mean(mul(r, r));
    };
    auto outer = [&](const std::vector<Var>& th) {
      Var r = sub(matmul(V, th[0]), Tt);
      return add(mean(mul(r, r)), scale(mul(a, a), 0.5 * s));
    };
    UnrollSpec spec;
    spec.steps = L;
    spec.second_order = second_order;
    spec.sgd_lr = lr;
    return unrolled_hypergradient({Var::constant(Tensor({2, 1}, {theta0[0], theta0[1]}))}, {a}, inner,
                                  outer, spec);
  }
};

}  // namespace tsap::testing

#include "tsap/adam.hpp"

#include <cmath>

namespace tsap {

namespace {

void check_grads(const std::vector<Var>& params, const std::vector<Var>& grads,
                 const std::vector<std::string>& names, long step) {
  if (params.size() != grads.size())
    throw ContractError("adam: " + std::to_string(params.size()) + " parameters but " +
                        std::to_string(grads.size()) + " gradients");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape())
      throw ShapeError("adam: gradient shape mismatch for parameter " + std::to_string(i));
    if (!grads[i].value().all_finite())
      throw NumericError("adam: non-finite gradient for '" +
                         (i < names.size() ? names[i] : "#" + std::to_string(i)) +
                         "' at step " + std::to_string(step + 1));
  }
}

void init_moments(AdamState& s, const std::vector<Var>& params) {
  if (!s.m.empty()) {
    if (s.m.size() != params.size()) throw ContractError("adam: state/parameter count mismatch");
    return;
  }
  for (const auto& p : params) {
    s.m.push_back(Var::constant(Tensor(p.shape())));
    s.v.push_back(Var::constant(Tensor(p.shape())));
  }
}

}  // namespace

void AdamState::detach() {
  for (auto& x : m) x = x.detach();
  for (auto& x : v) x = x.detach();
}

void adam_step(std::vector<Var>& params, const std::vector<Var>& grads, AdamState& s,
               const std::vector<std::string>& names) {
  check_grads(params, grads, names, s.step);
  init_moments(s, params);
  ++s.step;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor m = s.m[i].value();
    Tensor v = s.v[i].value();
    Tensor p = params[i].value();
    const auto g = grads[i].value().data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      p[j] -= c.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + c.eps);
    }
    s.m[i] = Var::constant(std::move(m));
    s.v[i] = Var::constant(std::move(v));
    params[i].assign(std::move(p));
  }
}

std::vector<Var> adam_step_graph(const std::vector<Var>& params, const std::vector<Var>& grads,
                                 AdamState& s, const std::vector<std::string>& names) {
  check_grads(params, grads, names, s.step);
  init_moments(s, params);
  ++s.step;
  const auto& c = s.config;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(s.step));
  std::vector<Var> out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Var& g = grads[i];
    s.m[i] = add(scale(s.m[i], c.beta1), scale(g, 1.0 - c.beta1));
    s.v[i] = add(scale(s.v[i], c.beta2), scale(mul(g, g), 1.0 - c.beta2));
    // The 1e-300 floor leaves values unchanged but keeps d sqrt(v) finite
    // where v is exactly zero (dead units), so backward gives 0, not NaN.
    Var denom = add_scalar(pow(add_scalar(scale(s.v[i], 1.0 / bc2), 1e-300), 0.5), c.eps);
    out.push_back(sub(params[i], scale(div(s.m[i], denom), c.lr / bc1)));
  }
  return out;
}

}  // namespace tsap

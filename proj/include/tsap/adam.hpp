#pragma once

#include <string>
#include <vector>

#include "tsap/autodiff.hpp"

namespace tsap {

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moments are Vars so the same state serves plain updates (constant
/// moments) and graph-recorded updates (moments carry history).
struct AdamState {
  AdamConfig config;
  std::vector<Var> m;
  std::vector<Var> v;
  long step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}

  /// Cuts the moments' history (end of an unrolled segment).
  void detach();
};

/// In-place Adam update of leaf parameters. `names` are only used for
/// diagnostics. Throws NumericError on a non-finite gradient.
void adam_step(std::vector<Var>& params, const std::vector<Var>& grads, AdamState& state,
               const std::vector<std::string>& names = {});

/// Adam update recorded in the graph: returns the new parameters as
/// functions of the old parameters and gradients (which may themselves depend
/// on hyperparameters). Differentiable almost everywhere.
std::vector<Var> adam_step_graph(const std::vector<Var>& params, const std::vector<Var>& grads,
                                 AdamState& state, const std::vector<std::string>& names = {});

}  // namespace tsap

#pragma once

// Self-tuning: alternate detector training on pseudo anomalies (Phase i)
// with gradient steps on the augmentation hyperparameters that align the
// augmented training embeddings with unlabeled test embeddings (Phase ii).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tsap/adam.hpp"
#include "tsap/detector.hpp"
#include "tsap/faug.hpp"
#include "tsap/ot.hpp"
#include "tsap/synth.hpp"

namespace tsap {

enum class AlignLoss { Wasserstein, Pointwise };

std::string to_string(AlignLoss l);
AlignLoss parse_align_loss(const std::string& s);

/// Tuned hyperparameters. `length` is only moved when length tuning is on.
struct AInit {
  double level = 0.0;
  double length = 0.3;
};

struct SelfTuneConfig {
  int T = 100;
  int L = 5;
  double lr_a = 0.001;
  /// lr_a is cosine-annealed to this value over the T epochs; negative
  /// means constant.
  double lr_a_final = -1.0;
  double lr_theta = 0.002;
  std::size_t batch = 64;
  int warm_start = 3;
  double mixing = 0.15;
  bool second_order = true;
  bool normalize = true;
  AlignLoss loss = AlignLoss::Wasserstein;
  bool freeze_a = false;
  bool tune_length = false;
  std::vector<AInit> inits;
  SinkhornConfig sinkhorn{2.0, 0.05, 100, 0.0};

  void validate() const;
  double lr_a_at(int t) const;
};

struct EpochRecord {
  int epoch = 0;
  double level = 0.0, length = 0.0;
  double l_trn = 0.0, l_val = 0.0, auroc_val = 0.0;
};

struct TuneTrajectory {
  std::vector<EpochRecord> epochs;

  /// Mean L_val over the last `n` epochs (all, if fewer).
  double tail_l_val(std::size_t n = 10) const;
  /// Population variance of the level over the last `n` epochs.
  double tail_level_variance(std::size_t n = 50) const;
};

void write_trajectory_csv(const std::filesystem::path& path, const TuneTrajectory& tr);
TuneTrajectory read_trajectory_csv(const std::filesystem::path& path);

/// Alignment loss between a reference set mixed from Z_trn and Z_aug and the
/// unlabeled Z_val. The reference has |Z_val| rows, ceil(mixing |Z_val|) of
/// them drawn from Z_aug, the rest from Z_trn.
Var validation_loss(const Var& z_trn, const Var& z_aug, const Var& z_val, const SelfTuneConfig& cfg,
                    Rng& rng);

// ---------------------------------------------------------------------------
// Unrolled hypergradients.

enum class InnerOptimizer { Sgd, Adam };

struct UnrollSpec {
  int steps = 1;
  bool second_order = true;
  InnerOptimizer optimizer = InnerOptimizer::Sgd;
  double sgd_lr = 0.1;
  AdamState* adam = nullptr;  // required for Adam; advanced in place
};

struct UnrollResult {
  double outer = 0.0;
  std::vector<Tensor> hypergrad;  // d outer / d hyper, per hyper Var
  std::vector<Tensor> theta;      // inner parameters after the last step
  std::vector<double> inner_losses;
};

/// Runs `steps` inner updates theta_{k+1} = opt(theta_k, d inner_k / d theta_k),
/// records them in the graph, then differentiates outer(theta_steps) with
/// respect to `hyper`. The closures read `hyper` themselves. Without
/// second_order the inner gradients are constants, so only the direct path
/// from hyper to the outer loss contributes.
UnrollResult unrolled_hypergradient(
    const std::vector<Var>& theta0, const std::vector<Var>& hyper,
    const std::function<Var(const std::vector<Var>& theta, int step)>& inner,
    const std::function<Var(const std::vector<Var>& theta)>& outer, const UnrollSpec& spec);

// ---------------------------------------------------------------------------

struct TuneResult {
  Detector detector;
  AInit a;
  TuneTrajectory trajectory;
};

/// Called after every epoch; a thrown exception aborts the run.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Warm start, then T epochs of L detector steps and one alignment step.
/// `faug` is frozen. D_val labels are only used for the monitoring AUROC.
TuneResult self_tune(const DatasetSplit& data, const FaugModel& faug, const DetectorArch& arch,
                     const AInit& init, const SelfTuneConfig& cfg, std::uint64_t seed,
                     const EpochCallback& on_epoch = {});

struct TypeRun {
  AnomalyType type;
  AInit init;
  double score = 0.0;  // mean L_val over the final 10 epochs
  TuneResult result;
};

struct Selection {
  std::vector<TypeRun> runs;
  std::size_t best = 0;
  const TypeRun& winner() const { return runs.at(best); }
};

/// One self_tune run per (model, init); the winner minimizes the score.
/// Without configured inits each model starts at the middle of its domain.
Selection select_type(const DatasetSplit& data, const std::vector<const FaugModel*>& models,
                      const DetectorArch& arch, const SelfTuneConfig& cfg, std::uint64_t seed);

}  // namespace tsap

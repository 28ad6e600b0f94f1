#pragma once

// Experiment configuration and the pipeline stages behind the CLI:
// generate -> pretrain -> self-tune / select-type -> evaluate, plus ablations.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsap/detector.hpp"
#include "tsap/faug.hpp"
#include "tsap/selftune.hpp"
#include "tsap/synth.hpp"

namespace tsap {

enum class Scale { Desk, Paper };

std::string to_string(Scale s);
Scale parse_scale(const std::string& s);

struct ExperimentConfig {
  Scale scale = Scale::Desk;
  GenConfig gen;
  TaskProfile profile;
  std::size_t K = 256;
  std::size_t n_trn = 256;
  std::size_t n_test = 200;
  FaugTrainConfig faug;
  SelfTuneConfig tune;
  /// Type whose f_aug is tuned by self-tune; defaults to the task's type.
  std::optional<AnomalyType> tune_type;
  /// Candidates for select-type; defaults to the task's type alone.
  std::vector<AnomalyType> candidates;
  std::size_t ablation_seeds = 3;
  std::uint64_t seed = 0;
  std::filesystem::path out = "run";

  static ExperimentConfig defaults(Scale scale = Scale::Desk);
  /// Overlays a JSON document on the defaults of its "scale" (or `scale`
  /// when given). Unknown keys and wrong types are ParseErrors.
  static ExperimentConfig from_json(const std::string& text, std::optional<Scale> scale = std::nullopt);
  static ExperimentConfig load(const std::filesystem::path& path, std::optional<Scale> scale = std::nullopt);

  void validate() const;
  /// Canonical JSON with every field spelled out.
  std::string to_json() const;
  /// 64-bit FNV-1a of the canonical JSON without the output directory, hex.
  std::string hash() const;

  AnomalyType tuned_type() const { return tune_type.value_or(profile.type); }
  std::vector<AnomalyType> candidate_types() const;
  HyperDomain domain() const;
  FaugArch faug_arch() const;
  DetectorArch detector_arch() const;
  /// Initial hyperparameters, defaulting to the midpoint of the domain.
  std::vector<AInit> inits(AnomalyType type) const;
};

struct TestMetrics {
  double auroc = 0.0;
  double best_f1 = 0.0;
};

TestMetrics evaluate_detector(const Detector& det, const DatasetSplit& data);

// Stages. Each writes its artifacts below cfg.out and throws StageError
// tagged with its name on failure.

std::filesystem::path phi_path(const ExperimentConfig& cfg, AnomalyType type);

DatasetSplit stage_gen_data(const ExperimentConfig& cfg);
/// Reads cfg.out/data if present, otherwise generates it.
DatasetSplit stage_load_data(const ExperimentConfig& cfg);
FaugModel stage_pretrain(const ExperimentConfig& cfg, const DatasetSplit& data, AnomalyType type);
/// One run per init; the lowest-score run is also written as theta.bin and
/// summary.json at the top of the output directory.
std::vector<TuneResult> stage_self_tune(const ExperimentConfig& cfg, const DatasetSplit& data);
Selection stage_select_type(const ExperimentConfig& cfg, const DatasetSplit& data);
TestMetrics stage_evaluate(const ExperimentConfig& cfg, const DatasetSplit& data);

struct AblationRow {
  std::string variant;
  std::uint64_t seed = 0;
  double level = 0.0, length = 0.0;
  double tail_l_val = 0.0;
  double level_variance = 0.0;  // over the last 50 epochs
  TestMetrics test;
};

/// Variants: default, frozen-random, pointwise, no-second-order,
/// no-normalize; each over cfg.ablation_seeds seeds. Writes ablation.csv.
std::vector<AblationRow> stage_ablate(const ExperimentConfig& cfg, const DatasetSplit& data);

/// Full pipeline; writes manifest.json with the status of every stage.
std::filesystem::path run_experiment(const ExperimentConfig& cfg);

/// Writes `content` to `path`, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& content);

}  // namespace tsap

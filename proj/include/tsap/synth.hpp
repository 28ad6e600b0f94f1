#pragma once

// Synthetic normal series, controlled anomaly tasks and dataset files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsap/anomaly.hpp"
#include "tsap/tensor.hpp"

namespace tsap {

enum class Family { EcgLike, GaitLike };

std::string to_string(Family f);
Family parse_family(const std::string& s);

struct GenConfig {
  Family family = Family::EcgLike;
  std::size_t period = 32;  // gait phase length in samples
  double noise = 0.05;
};

/// n standardized (ecg-like) or [-1, 1]-scaled (gait-like) normal series.
std::vector<Series> generate_normal(std::size_t n, std::size_t K, const GenConfig& gen,
                                    std::uint64_t seed);

/// A gait-like series whose phases in [begin, begin + size) advance
/// (1 + level) times faster: a frequency shift applied to the underlying
/// gait rather than by warping finished samples. Unscaled.
Series render_gait(std::size_t K, std::size_t period, double offset, double noise, Rng& rng,
                   std::optional<Window> fast = std::nullopt, double level = 0.0);

/// A hyperparameter is either held at a fixed value or drawn per series.
struct FieldMode {
  bool fixed = false;
  double value = 0.0;
  Interval range;

  static FieldMode Fixed(double v) { return {true, v, {v, v}}; }
  static FieldMode Random(Interval r) { return {false, 0.0, r}; }
  double draw(Rng& rng) const { return fixed ? value : rng.uniform(range.lo, range.hi); }
};

struct TaskProfile {
  AnomalyType type = AnomalyType::Platform;
  FieldMode location = FieldMode::Random({0.05, 0.45});
  FieldMode length = FieldMode::Random({0.1, 0.5});
  FieldMode level = FieldMode::Fixed(0.2);
  double ratio = 0.1;
  // Gait-like FrequencyShift anomalies are rendered into the gait itself
  // instead of injected by warping.
  bool phase_exact = false;

  void validate() const;
};

struct DatasetSplit {
  std::size_t K = 0;
  std::vector<Series> trn;
  std::vector<Series> test;
  std::vector<int> test_labels;
  std::vector<std::size_t> val_index;  // rows of test used (unlabeled) for alignment

  std::vector<Series> val() const;
  void validate() const;
};

DatasetSplit build_task(const TaskProfile& profile, std::size_t n_trn, std::size_t n_test,
                        std::size_t K, const GenConfig& gen, std::uint64_t seed);

// One series per row, no header, 17 significant digits.
void write_series_csv(const std::filesystem::path& path, const std::vector<Series>& rows);
std::vector<Series> read_series_csv(const std::filesystem::path& path);
void write_labels_csv(const std::filesystem::path& path, const std::vector<int>& labels);
std::vector<int> read_labels_csv(const std::filesystem::path& path);

struct DatasetManifest {
  std::size_t K = 0;
  std::size_t n_trn = 0, n_test = 0, n_val = 0, n_anomalies = 0;
  std::string family;
  std::uint64_t seed = 0;
  std::string profile_json;  // serialized TaskProfile, "{}" for external data
};

std::string profile_to_json(const TaskProfile& p);
TaskProfile profile_from_json(const std::string& s);

/// Writes trn.csv, test.csv, test_labels.csv, val_index.csv and manifest.json.
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split,
                   const DatasetManifest& manifest);
DatasetSplit read_dataset(const std::filesystem::path& dir, DatasetManifest* manifest = nullptr);

/// Rows (all, or the listed ones) as a [B, 1, K] batch.
Tensor stack_series(const std::vector<Series>& rows);
Tensor stack_series(const std::vector<Series>& rows, const std::vector<std::size_t>& index);

}  // namespace tsap

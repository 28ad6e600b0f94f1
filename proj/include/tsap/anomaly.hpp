#pragma once

// Parametric anomaly injection and hyperparameter domains.

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsap/rng.hpp"

namespace tsap {

enum class AnomalyType { Platform, MeanShift, Amplitude, Trend, Extremum, FrequencyShift };

inline constexpr std::array<AnomalyType, 6> kAllTypes{
    AnomalyType::Platform, AnomalyType::MeanShift, AnomalyType::Amplitude,
    AnomalyType::Trend,    AnomalyType::Extremum,  AnomalyType::FrequencyShift};

std::string to_string(AnomalyType t);
/// Accepts the snake_case names produced by to_string.
AnomalyType parse_anomaly_type(const std::string& s);

using Series = std::vector<double>;

/// location and length are fractions of K; level is in type-specific units.
struct AugParams {
  AnomalyType type = AnomalyType::Platform;
  double location = 0.0;
  double length = 0.1;
  double level = 0.0;
};

/// Sample window [begin, begin + size) of a length-K series.
struct Window {
  std::size_t begin = 0;
  std::size_t size = 1;
};

/// floor-based window arithmetic, clamped to the series end. Throws
/// InvalidParams for location outside [0,1), length outside (0,1] or
/// location + length > 1.
Window anomaly_window(std::size_t K, const AugParams& a);

Series inject(std::span<const double> x, const AugParams& a);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double v) const { return v >= lo && v <= hi; }
  double clamp(double v) const;
  /// (v - lo) / (hi - lo), or 0 for a degenerate interval.
  double normalize(double v) const;
};

struct TypeDomain {
  Interval location, length, level;
};

/// Per-type hyperparameter box A^P.
class HyperDomain {
 public:
  HyperDomain();

  const TypeDomain& operator[](AnomalyType t) const { return d_[static_cast<std::size_t>(t)]; }
  TypeDomain& operator[](AnomalyType t) { return d_[static_cast<std::size_t>(t)]; }

  /// Throws InvalidParams if an interval is empty or a window could overrun K.
  void validate() const;

  /// Appendix PhysioNet table normalized by K (level grids relaxed to their hulls).
  static HyperDomain paper_ecg(std::size_t K = 2700);
  /// Appendix MoCap table; FrequencyShift phases are converted with `period`
  /// samples per gait phase.
  static HyperDomain paper_mocap(std::size_t K = 1500, std::size_t period = 150);
  static HyperDomain desk_ecg(std::size_t K = 256);
  static HyperDomain desk_gait(std::size_t K = 256, std::size_t period = 32);

 private:
  std::array<TypeDomain, 6> d_;
};

/// Uniform draw of every continuous field from the type's box.
AugParams sample_params(const HyperDomain& domain, AnomalyType type, Rng& rng);

struct AugSample {
  Series x;
  AugParams a;
};

std::vector<AugSample> build_aug_dataset(const std::vector<Series>& trn, const HyperDomain& domain,
                                         AnomalyType type, Rng& rng);

}  // namespace tsap

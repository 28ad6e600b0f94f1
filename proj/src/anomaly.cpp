#include "tsap/anomaly.hpp"

#include <algorithm>
#include <cmath>

#include "tsap/error.hpp"

namespace tsap {

namespace {

constexpr const char* kNames[] = {"platform", "mean_shift", "amplitude",
                                  "trend",    "extremum",   "frequency_shift"};

// Guards floor() against location*K landing a hair below an integer.
constexpr double kIndexSlack = 1e-9;

}  // namespace

std::string to_string(AnomalyType t) { return kNames[static_cast<std::size_t>(t)]; }

AnomalyType parse_anomaly_type(const std::string& s) {
  for (std::size_t i = 0; i < kAllTypes.size(); ++i)
    if (s == kNames[i]) return kAllTypes[i];
  throw InvalidParams("unknown anomaly type '" + s + "'");
}

Window anomaly_window(std::size_t K, const AugParams& a) {
  if (K < 2) throw InvalidParams("series length must be at least 2");
  if (!(a.location >= 0.0 && a.location < 1.0))
    throw InvalidParams("location " + std::to_string(a.location) + " outside [0, 1)");
  const double kd = static_cast<double>(K);
  Window w;
  w.begin = static_cast<std::size_t>(std::floor(a.location * kd + kIndexSlack));
  if (w.begin >= K) throw InvalidParams("window start beyond series end");
  if (a.type == AnomalyType::Extremum) return w;
  if (!(a.length > 0.0 && a.length <= 1.0))
    throw InvalidParams("length " + std::to_string(a.length) + " outside (0, 1]");
  if (a.location + a.length > 1.0 + kIndexSlack)
    throw InvalidParams("window overruns the series: location + length = " +
                        std::to_string(a.location + a.length));
  const auto m = static_cast<std::size_t>(std::floor(a.length * kd + kIndexSlack));
  w.size = std::min(std::max<std::size_t>(1, m), K - w.begin);
  return w;
}

Series inject(std::span<const double> x, const AugParams& a) {
  const Window w = anomaly_window(x.size(), a);
  Series out(x.begin(), x.end());
  const std::size_t l = w.begin, m = w.size;
  switch (a.type) {
    case AnomalyType::Platform:
      for (std::size_t t = l; t < l + m; ++t) out[t] = a.level;
      break;
    case AnomalyType::MeanShift:
      for (std::size_t t = l; t < l + m; ++t) out[t] = x[t] + a.level;
      break;
    case AnomalyType::Amplitude:
      for (std::size_t t = l; t < l + m; ++t) out[t] = x[t] * a.level;
      break;
    case AnomalyType::Trend:
      for (std::size_t t = l; t < l + m; ++t) out[t] = x[t] + a.level * static_cast<double>(t - l);
      break;
    case AnomalyType::Extremum:
      out[l] = a.level;
      break;
    case AnomalyType::FrequencyShift: {
      // Time warp: sample the window at (t - l) * (1 + level), linearly
      // interpolated and held at the window's last sample.
      if (a.level == 0.0) break;
      const double last = static_cast<double>(m - 1);
      for (std::size_t t = l; t < l + m; ++t) {
        const double pos = std::clamp(static_cast<double>(t - l) * (1.0 + a.level), 0.0, last);
        const auto i0 = static_cast<std::size_t>(std::floor(pos));
        const std::size_t i1 = std::min(i0 + 1, m - 1);
        const double frac = pos - static_cast<double>(i0);
        out[t] = (1.0 - frac) * x[l + i0] + frac * x[l + i1];
      }
      break;
    }
    default:
      throw InvalidParams("unknown anomaly type");
  }
  return out;
}

double Interval::clamp(double v) const { return std::clamp(v, lo, hi); }

double Interval::normalize(double v) const { return hi > lo ? (v - lo) / (hi - lo) : 0.0; }

HyperDomain::HyperDomain() {
  for (auto& td : d_) td = {{0.0, 0.0}, {0.1, 0.1}, {0.0, 0.0}};
}

void HyperDomain::validate() const {
  for (AnomalyType t : kAllTypes) {
    const TypeDomain& td = (*this)[t];
    const std::string name = to_string(t);
    for (const Interval* iv : {&td.location, &td.length, &td.level})
      if (!(iv->lo <= iv->hi) || !std::isfinite(iv->lo) || !std::isfinite(iv->hi))
        throw InvalidParams("empty or non-finite interval in domain of " + name);
    if (td.location.lo < 0.0 || td.location.hi >= 1.0)
      throw InvalidParams("location interval of " + name + " must lie in [0, 1)");
    if (t == AnomalyType::Extremum) continue;
    if (td.length.lo <= 0.0 || td.length.hi > 1.0)
      throw InvalidParams("length interval of " + name + " must lie in (0, 1]");
    if (td.location.hi + td.length.hi > 1.0 + kIndexSlack)
      throw InvalidParams("domain of " + name + " admits windows beyond the series end");
  }
}

HyperDomain HyperDomain::paper_ecg(std::size_t K) {
  const double k = static_cast<double>(K);
  HyperDomain d;
  const Interval loc{100 / k, 2000 / k}, len{400 / k, 600 / k};
  d[AnomalyType::Platform] = {loc, len, {-1.0, 1.0}};
  d[AnomalyType::MeanShift] = {loc, len, {-1.0, 1.0}};
  d[AnomalyType::Amplitude] = {loc, len, {1.0, 6.0}};
  d[AnomalyType::Trend] = {loc, len, {-0.01, 0.01}};
  d[AnomalyType::Extremum] = {{100 / k, 2600 / k}, {1 / k, 1 / k}, {-15.0, 15.0}};
  d[AnomalyType::FrequencyShift] = {loc, len, {1.0, 3.0}};
  d.validate();
  return d;
}

HyperDomain HyperDomain::paper_mocap(std::size_t K, std::size_t period) {
  // Types absent from the MoCap table keep the PhysioNet fractions.
  HyperDomain d = paper_ecg();
  const double k = static_cast<double>(K), p = static_cast<double>(period);
  d[AnomalyType::Extremum].length = {1 / k, 1 / k};
  d[AnomalyType::Platform] = {{200 / k, 800 / k}, {100 / k, 200 / k}, {-1.0, 1.0}};
  d[AnomalyType::FrequencyShift] = {{p / k, 3 * p / k}, {p / k, 6 * p / k}, {1.0, 3.0}};
  d.validate();
  return d;
}

HyperDomain HyperDomain::desk_ecg(std::size_t K) {
  const double k = static_cast<double>(K);
  HyperDomain d;
  const Interval loc{0.05, 0.45}, len{0.1, 0.5};
  d[AnomalyType::Platform] = {loc, len, {-1.0, 1.0}};
  d[AnomalyType::MeanShift] = {loc, len, {-1.0, 1.0}};
  d[AnomalyType::Amplitude] = {loc, len, {1.0, 6.0}};
  d[AnomalyType::Trend] = {loc, len, {-0.2, 0.2}};
  d[AnomalyType::Extremum] = {{100 / 2700.0, 2600 / 2700.0}, {1 / k, 1 / k}, {-15.0, 15.0}};
  d[AnomalyType::FrequencyShift] = {loc, len, {1.0, 3.0}};
  d.validate();
  return d;
}

HyperDomain HyperDomain::desk_gait(std::size_t K, std::size_t period) {
  HyperDomain d = desk_ecg(K);
  const double k = static_cast<double>(K), p = static_cast<double>(period);
  d[AnomalyType::Platform] = {{200 / 1500.0, 800 / 1500.0}, {100 / 1500.0, 200 / 1500.0}, {-1.0, 1.0}};
  d[AnomalyType::FrequencyShift] = {{p / k, 3 * p / k}, {p / k, 4 * p / k}, {1.0, 3.0}};
  d.validate();
  return d;
}

AugParams sample_params(const HyperDomain& domain, AnomalyType type, Rng& rng) {
  const TypeDomain& td = domain[type];
  for (const Interval* iv : {&td.location, &td.length, &td.level})
    if (!(iv->lo <= iv->hi)) throw InvalidParams("empty domain interval for " + to_string(type));
  AugParams a;
  a.type = type;
  a.location = rng.uniform(td.location.lo, td.location.hi);
  a.length = rng.uniform(td.length.lo, td.length.hi);
  a.level = rng.uniform(td.level.lo, td.level.hi);
  return a;
}

std::vector<AugSample> build_aug_dataset(const std::vector<Series>& trn, const HyperDomain& domain,
                                         AnomalyType type, Rng& rng) {
  std::vector<AugSample> out;
  out.reserve(trn.size());
  for (const Series& x : trn) {
    AugParams a = sample_params(domain, type, rng);
    out.push_back({inject(x, a), a});
  }
  return out;
}

}  // namespace tsap

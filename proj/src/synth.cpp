#include "tsap/synth.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "tsap/error.hpp"

namespace tsap {

namespace {

using nlohmann::json;

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Stream keys; keep stable, they define the datasets.
enum : std::uint64_t { kTrnStream = 1, kTestStream = 2, kAnomalyPick = 3, kValPick = 4, kParams = 5 };

void standardize(Series& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  const double sd = std::sqrt(var);
  for (double& v : x) v = sd > 0 ? (v - mean) / sd : 0.0;
}

void rescale_unit(Series& x) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double a = *lo, b = *hi;
  for (double& v : x) v = b > a ? 2.0 * (v - a) / (b - a) - 1.0 : 0.0;
}

Series ecg_like(std::size_t K, double noise, Rng& rng) {
  const double k = static_cast<double>(K);
  const double beat = rng.uniform(k / 7.0, k / 4.5);
  const double phase = rng.uniform(0.0, beat);
  const double pulse = rng.uniform(2.5, 3.5);
  const int n_waves = 2 + static_cast<int>(rng.below(2));
  double freq[3], amp[3], ph[3];
  for (int w = 0; w < n_waves; ++w) {
    freq[w] = rng.uniform(0.5, 3.0) / k;
    amp[w] = rng.uniform(0.2, 0.5);
    ph[w] = rng.uniform(0.0, kTwoPi);
  }
  Series x(K);
  for (std::size_t t = 0; t < K; ++t) {
    const double td = static_cast<double>(t);
    double v = 0.0;
    for (int w = 0; w < n_waves; ++w) v += amp[w] * std::sin(kTwoPi * freq[w] * td + ph[w]);
    // Distance to the nearest beat, then a sharp R spike and a broad T wave.
    const double u = std::fmod(td - phase + 10 * beat, beat);
    v += pulse * std::exp(-0.5 * std::pow(u / 1.5, 2));
    v += pulse * std::exp(-0.5 * std::pow((beat - u) / 1.5, 2));
    v += 0.5 * std::exp(-0.5 * std::pow((u - 0.3 * beat) / (0.06 * beat), 2));
    v += noise * rng.normal();
    x[t] = v;
  }
  standardize(x);
  return x;
}

double gait_template(double u) {
  return std::sin(kTwoPi * u) + 0.45 * std::sin(2 * kTwoPi * u + 0.8) +
         0.2 * std::sin(3 * kTwoPi * u + 2.0);
}

Series gait_like(std::size_t K, const GenConfig& gen, Rng& rng, std::optional<Window> fast,
                 double level) {
  const double offset = rng.uniform(0.0, 1.0);
  Series x = render_gait(K, gen.period, offset, gen.noise, rng, fast, level);
  rescale_unit(x);
  return x;
}

Rng series_stream(std::uint64_t seed, std::uint64_t which, std::size_t i) {
  return Rng::stream(seed, {which, static_cast<std::uint64_t>(i)});
}

Series generate_one(std::size_t K, const GenConfig& gen, Rng rng, std::optional<Window> fast = {},
                    double level = 0.0) {
  return gen.family == Family::EcgLike ? ecg_like(K, gen.noise, rng)
                                       : gait_like(K, gen, rng, fast, level);
}

json interval_json(const Interval& iv) { return json::array({iv.lo, iv.hi}); }

json mode_json(const FieldMode& m) {
  if (m.fixed) return json{{"mode", "fixed"}, {"value", m.value}};
  return json{{"mode", "random"}, {"range", interval_json(m.range)}};
}

FieldMode mode_from_json(const json& j) {
  const std::string mode = j.at("mode").get<std::string>();
  if (mode == "fixed") return FieldMode::Fixed(j.at("value").get<double>());
  if (mode == "random") {
    const auto& r = j.at("range");
    return FieldMode::Random({r.at(0).get<double>(), r.at(1).get<double>()});
  }
  throw ParseError("field mode must be 'fixed' or 'random', got '" + mode + "'");
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  std::size_t b = s.find_first_not_of(" \t\r");
  std::size_t e = s.find_last_not_of(" \t\r");
  double v = 0.0;
  if (b != std::string::npos) {
    auto res = std::from_chars(s.data() + b, s.data() + e + 1, v);
    if (res.ec == std::errc() && res.ptr == s.data() + e + 1 && std::isfinite(v)) return v;
  }
  throw ParseError(path.string() + ":" + std::to_string(line) + ": not a finite number: '" + s + "'");
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

}  // namespace

std::string to_string(Family f) { return f == Family::EcgLike ? "ecg-like" : "gait-like"; }

Family parse_family(const std::string& s) {
  if (s == "ecg-like") return Family::EcgLike;
  if (s == "gait-like") return Family::GaitLike;
  throw InvalidParams("unknown series family '" + s + "'");
}

Series render_gait(std::size_t K, std::size_t period, double offset, double noise, Rng& rng,
                   std::optional<Window> fast, double level) {
  if (period < 2) throw InvalidParams("gait period must be at least 2 samples");
  const double step = 1.0 / static_cast<double>(period);
  // Amplitude per gait cycle; enough cycles for the fastest admissible pace.
  const double pace = 1.0 + std::max(0.0, level);
  std::vector<double> amp(static_cast<std::size_t>(std::ceil(pace * static_cast<double>(K) * step)) + 2);
  for (double& a : amp) a = 1.0 + 0.05 * rng.normal();
  Series x(K);
  double phase = offset;
  for (std::size_t t = 0; t < K; ++t) {
    const auto cycle = static_cast<std::size_t>(phase);
    x[t] = amp[std::min(cycle, amp.size() - 1)] * gait_template(phase - std::floor(phase)) +
           noise * rng.normal();
    const bool in_fast = fast && t >= fast->begin && t < fast->begin + fast->size;
    phase += in_fast ? step * (1.0 + level) : step;
  }
  return x;
}

std::vector<Series> generate_normal(std::size_t n, std::size_t K, const GenConfig& gen,
                                    std::uint64_t seed) {
  if (n == 0 || K < 2) throw InvalidParams("generate_normal needs n >= 1 and K >= 2");
  std::vector<Series> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_one(K, gen, series_stream(seed, 0, i)));
  return out;
}

void TaskProfile::validate() const {
  if (!(ratio > 0.0 && ratio < 1.0)) throw InvalidParams("anomaly ratio must lie in (0, 1)");
  for (const FieldMode* m : {&location, &length, &level})
    if (!m->fixed && !(m->range.lo <= m->range.hi))
      throw InvalidParams("empty random interval in task profile");
  if (type == AnomalyType::Extremum && !length.fixed)
    throw InvalidParams("extremum anomalies have no random length");
  if (phase_exact && type != AnomalyType::FrequencyShift)
    throw InvalidParams("phase_exact applies to frequency_shift only");
}

std::vector<Series> DatasetSplit::val() const {
  std::vector<Series> out;
  out.reserve(val_index.size());
  for (std::size_t i : val_index) out.push_back(test.at(i));
  return out;
}

void DatasetSplit::validate() const {
  if (trn.empty() || test.empty()) throw InvalidParams("dataset split has an empty part");
  if (test_labels.size() != test.size()) throw InvalidParams("labels and test rows differ in count");
  for (const auto* part : {&trn, &test})
    for (const Series& s : *part)
      if (s.size() != K) throw InvalidParams("series length differs from K");
  for (int y : test_labels)
    if (y != 0 && y != 1) throw InvalidParams("labels must be 0 or 1");
  for (std::size_t i : val_index)
    if (i >= test.size()) throw InvalidParams("validation index outside the test set");
}

DatasetSplit build_task(const TaskProfile& profile, std::size_t n_trn, std::size_t n_test,
                        std::size_t K, const GenConfig& gen, std::uint64_t seed) {
  profile.validate();
  if (n_trn == 0 || n_test < 2) throw InvalidParams("build_task needs n_trn >= 1 and n_test >= 2");
  if (profile.phase_exact && gen.family != Family::GaitLike)
    throw InvalidParams("phase_exact frequency shift needs the gait-like family");
  DatasetSplit split;
  split.K = K;
  for (std::size_t i = 0; i < n_trn; ++i)
    split.trn.push_back(generate_one(K, gen, series_stream(seed, kTrnStream, i)));

  const auto n_anom = static_cast<std::size_t>(std::llround(profile.ratio * static_cast<double>(n_test)));
  Rng pick = Rng::stream(seed, {kAnomalyPick});
  std::vector<std::size_t> order = pick.permutation(n_test);
  std::vector<int> labels(n_test, 0);
  for (std::size_t r = 0; r < n_anom; ++r) labels[order[r]] = 1;

  const double k = static_cast<double>(K);
  for (std::size_t i = 0; i < n_test; ++i) {
    Rng stream = series_stream(seed, kTestStream, i);
    if (!labels[i]) {
      split.test.push_back(generate_one(K, gen, stream));
      continue;
    }
    Rng prng = series_stream(seed, kParams, i);
    AugParams a;
    a.type = profile.type;
    a.length = profile.type == AnomalyType::Extremum ? 1.0 / k : profile.length.draw(prng);
    a.location = profile.location.draw(prng);
    a.level = profile.level.draw(prng);
    if (profile.type != AnomalyType::Extremum && a.location + a.length > 1.0)
      a.location = std::max(0.0, 1.0 - a.length);
    if (profile.phase_exact)
      split.test.push_back(generate_one(K, gen, stream, anomaly_window(K, a), a.level));
    else
      split.test.push_back(inject(generate_one(K, gen, stream), a));
  }
  split.test_labels = std::move(labels);

  Rng vpick = Rng::stream(seed, {kValPick});
  std::vector<std::size_t> vorder = vpick.permutation(n_test);
  split.val_index.assign(vorder.begin(), vorder.begin() + static_cast<std::ptrdiff_t>(n_test / 2));
  std::sort(split.val_index.begin(), split.val_index.end());
  return split;
}

void write_series_csv(const std::filesystem::path& path, const std::vector<Series>& rows) {
  std::ofstream out = open_out(path);
  char buf[32];
  for (const Series& s : rows) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", s[j]);
      if (j) out << ',';
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw Error("write failed for " + path.string());
}

std::vector<Series> read_series_csv(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<Series> rows;
  std::string line;
  std::size_t lineno = 0, width = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (rows.empty()) width = cells.size();
    if (cells.size() != width)
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": row has " +
                       std::to_string(cells.size()) + " values, expected " + std::to_string(width));
    Series s;
    s.reserve(width);
    for (const auto& c : cells) s.push_back(parse_double(c, path, lineno));
    rows.push_back(std::move(s));
  }
  if (rows.empty()) throw ParseError(path.string() + ": no series found");
  return rows;
}

void write_labels_csv(const std::filesystem::path& path, const std::vector<int>& labels) {
  std::ofstream out = open_out(path);
  for (int y : labels) out << y << '\n';
}

std::vector<int> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in = open_in(path);
  std::vector<int> labels;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line != "0" && line != "1")
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    labels.push_back(line == "1");
  }
  if (labels.empty()) throw ParseError(path.string() + ": no labels found");
  return labels;
}

std::string profile_to_json(const TaskProfile& p) {
  json j{{"type", to_string(p.type)},       {"location", mode_json(p.location)},
         {"length", mode_json(p.length)},   {"level", mode_json(p.level)},
         {"ratio", p.ratio},                {"phase_exact", p.phase_exact}};
  return j.dump();
}

TaskProfile profile_from_json(const std::string& s) {
  try {
    json j = json::parse(s);
    TaskProfile p;
    p.type = parse_anomaly_type(j.at("type").get<std::string>());
    p.location = mode_from_json(j.at("location"));
    p.length = mode_from_json(j.at("length"));
    p.level = mode_from_json(j.at("level"));
    p.ratio = j.value("ratio", 0.1);
    p.phase_exact = j.value("phase_exact", false);
    p.validate();
    return p;
  } catch (const json::exception& e) {
    throw ParseError(std::string("task profile: ") + e.what());
  }
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& split,
                   const DatasetManifest& manifest) {
  split.validate();
  std::filesystem::create_directories(dir);
  write_series_csv(dir / "trn.csv", split.trn);
  write_series_csv(dir / "test.csv", split.test);
  write_labels_csv(dir / "test_labels.csv", split.test_labels);
  {
    std::ofstream out = open_out(dir / "val_index.csv");
    for (std::size_t i : split.val_index) out << i << '\n';
  }
  std::size_t n_anom = 0;
  for (int y : split.test_labels) n_anom += static_cast<std::size_t>(y);
  json j{{"format", "tsap-dataset"},
         {"version", 1},
         {"K", split.K},
         {"n_trn", split.trn.size()},
         {"n_test", split.test.size()},
         {"n_val", split.val_index.size()},
         {"n_anomalies", n_anom},
         {"family", manifest.family},
         {"seed", manifest.seed},
         {"profile", json::parse(manifest.profile_json.empty() ? "{}" : manifest.profile_json)}};
  std::ofstream out = open_out(dir / "manifest.json");
  out << j.dump(2) << '\n';
}

DatasetSplit read_dataset(const std::filesystem::path& dir, DatasetManifest* manifest) {
  DatasetSplit split;
  split.trn = read_series_csv(dir / "trn.csv");
  split.test = read_series_csv(dir / "test.csv");
  split.test_labels = read_labels_csv(dir / "test_labels.csv");
  split.K = split.trn.front().size();
  {
    std::ifstream in = open_in(dir / "val_index.csv");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line == "\r") continue;
      std::size_t v = 0;
      auto res = std::from_chars(line.data(), line.data() + line.size(), v);
      if (res.ec != std::errc())
        throw ParseError((dir / "val_index.csv").string() + ":" + std::to_string(lineno) +
                         ": not an index");
      split.val_index.push_back(v);
    }
  }
  if (std::filesystem::exists(dir / "manifest.json")) {
    std::ifstream in = open_in(dir / "manifest.json");
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ParseError("manifest.json: " + std::string(e.what()));
    }
    if (j.value("K", split.K) != split.K) throw ParseError("manifest K disagrees with the data");
    if (manifest) {
      manifest->K = split.K;
      manifest->n_trn = split.trn.size();
      manifest->n_test = split.test.size();
      manifest->n_val = split.val_index.size();
      manifest->n_anomalies = j.value("n_anomalies", std::size_t{0});
      manifest->family = j.value("family", std::string());
      manifest->seed = j.value("seed", std::uint64_t{0});
      manifest->profile_json = j.contains("profile") ? j["profile"].dump() : "{}";
    }
  }
  try {
    split.validate();
  } catch (const InvalidParams& e) {
    throw ParseError(dir.string() + ": " + e.what());
  }
  return split;
}

Tensor stack_series(const std::vector<Series>& rows, const std::vector<std::size_t>& index) {
  if (index.empty()) throw ShapeError("cannot stack an empty batch");
  const std::size_t K = rows.at(index.front()).size();
  Tensor out({index.size(), 1, K});
  for (std::size_t b = 0; b < index.size(); ++b) {
    const Series& s = rows.at(index[b]);
    if (s.size() != K) throw ShapeError("series of unequal length in one batch");
    std::copy(s.begin(), s.end(), out.vec().begin() + static_cast<std::ptrdiff_t>(b * K));
  }
  return out;
}

Tensor stack_series(const std::vector<Series>& rows) {
  std::vector<std::size_t> all(rows.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack_series(rows, all);
}

}  // namespace tsap

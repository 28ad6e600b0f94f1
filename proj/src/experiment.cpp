#include "tsap/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"
#include "tsap/error.hpp"
#include "tsap/metrics.hpp"

namespace tsap {

namespace {

using nlohmann::json;

json sinkhorn_json(const SinkhornConfig& s) {
  return {{"p", s.p}, {"epsilon", s.epsilon}, {"max_iter", s.max_iter}, {"tol", s.tol}};
}

json to_json_value(const ExperimentConfig& c) {
  json inits = json::array();
  for (const auto& a : c.tune.inits) inits.push_back({{"level", a.level}, {"length", a.length}});
  json candidates = json::array();
  for (AnomalyType t : c.candidates) candidates.push_back(to_string(t));
  const auto& t = c.tune;
  return {
      {"scale", to_string(c.scale)},
      {"seed", c.seed},
      {"out", c.out.string()},
      {"data",
       {{"family", to_string(c.gen.family)},
        {"period", c.gen.period},
        {"noise", c.gen.noise},
        {"K", c.K},
        {"n_trn", c.n_trn},
        {"n_test", c.n_test}}},
      {"task", json::parse(profile_to_json(c.profile))},
      {"faug", {{"epochs", c.faug.epochs}, {"batch", c.faug.batch}, {"lr", c.faug.lr}}},
      {"self_tune",
       {{"T", t.T},
        {"L", t.L},
        {"lr_a", t.lr_a},
        {"lr_a_final", t.lr_a_final},
        {"lr_theta", t.lr_theta},
        {"batch", t.batch},
        {"warm_start", t.warm_start},
        {"mixing", t.mixing},
        {"second_order", t.second_order},
        {"normalize", t.normalize},
        {"loss", to_string(t.loss)},
        {"freeze_a", t.freeze_a},
        {"tune_length", t.tune_length},
        {"inits", inits},
        {"sinkhorn", sinkhorn_json(t.sinkhorn)},
        {"type", c.tune_type ? json(to_string(*c.tune_type)) : json(nullptr)}}},
      {"candidates", candidates},
      {"ablation_seeds", c.ablation_seeds},
  };
}

bool compatible(const json& base, const json& v) {
  if (base.is_null()) return v.is_null() || v.is_string();
  if (base.is_number()) return v.is_number();
  return base.type() == v.type();
}

// Task profile fields switch shape between fixed and random, so they are
// replaced whole rather than merged.
bool opaque(const std::string& path) { return path.rfind("task.", 0) == 0; }

void overlay(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ParseError("config: '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string full = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ParseError("config: unknown key '" + full + "'");
    json& slot = base[key];
    if (slot.is_object() && !opaque(full)) {
      overlay(slot, value, full);
    } else {
      if (!compatible(slot, value))
        throw ParseError("config: '" + full + "' has the wrong type (expected " +
                         std::string(slot.type_name()) + ")");
      slot = value;
    }
  }
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

template <class F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

json tune_summary(const ExperimentConfig& cfg, AnomalyType type, const TuneResult& r, const AInit& init,
                  std::uint64_t seed) {
  return {{"type", to_string(type)},
          {"a", {{"level", r.a.level}, {"length", r.a.length}}},
          {"init", {{"level", init.level}, {"length", init.length}}},
          {"score", r.trajectory.tail_l_val(10)},
          {"seed", seed},
          {"config_hash", cfg.hash()}};
}

void write_panels(const std::filesystem::path& dir, const std::vector<TuneResult>& runs) {
  struct Panel {
    const char* file;
    double EpochRecord::*field;
  };
  for (Panel p : {Panel{"a_vs_epoch.csv", &EpochRecord::level}, Panel{"lval_vs_epoch.csv", &EpochRecord::l_val},
                  Panel{"auroc_vs_epoch.csv", &EpochRecord::auroc_val}}) {
    std::ostringstream os;
    os << "epoch";
    for (std::size_t k = 0; k < runs.size(); ++k) os << ",run" << k;
    os << '\n' << std::setprecision(17);
    const std::size_t T = runs.empty() ? 0 : runs[0].trajectory.epochs.size();
    for (std::size_t t = 0; t < T; ++t) {
      os << runs[0].trajectory.epochs[t].epoch;
      for (const auto& r : runs) os << ',' << r.trajectory.epochs[t].*p.field;
      os << '\n';
    }
    write_text(dir / p.file, os.str());
  }
}

FaugModel load_phi(const ExperimentConfig& cfg, AnomalyType type) {
  const auto path = phi_path(cfg, type);
  if (!std::filesystem::exists(path))
    throw Error("missing f_aug parameters " + path.string() + " (run pretrain-faug first)");
  return FaugModel::load(path, cfg.faug_arch(), type);
}

}  // namespace

std::string to_string(Scale s) { return s == Scale::Desk ? "desk" : "paper"; }

Scale parse_scale(const std::string& s) {
  if (s == "desk") return Scale::Desk;
  if (s == "paper") return Scale::Paper;
  throw InvalidParams("unknown scale '" + s + "' (expected desk or paper)");
}

ExperimentConfig ExperimentConfig::defaults(Scale scale) {
  ExperimentConfig c;
  c.scale = scale;
  if (scale == Scale::Paper) {
    c.K = 2700;
    c.faug.epochs = 500;
  } else {
    // Desk runs have 100 alignment steps; the full-scale 0.001 cannot move a
    // across its domain in that budget. The rate decays so a settles.
    c.tune.lr_a = 0.05;
    c.tune.lr_a_final = 0.002;
  }
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text, std::optional<Scale> scale) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (!user.is_object()) throw ParseError("config: top level must be an object");
  try {
    if (!scale) scale = parse_scale(user.value("scale", std::string("desk")));
    if (user.contains("scale")) user.erase("scale");
    json j = to_json_value(defaults(*scale));
    overlay(j, user, "");

    ExperimentConfig c = defaults(*scale);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.out = j.at("out").get<std::string>();
    const json& d = j.at("data");
    c.gen.family = parse_family(d.at("family").get<std::string>());
    c.gen.period = d.at("period").get<std::size_t>();
    c.gen.noise = d.at("noise").get<double>();
    c.K = d.at("K").get<std::size_t>();
    c.n_trn = d.at("n_trn").get<std::size_t>();
    c.n_test = d.at("n_test").get<std::size_t>();
    c.profile = profile_from_json(j.at("task").dump());
    const json& f = j.at("faug");
    c.faug.epochs = f.at("epochs").get<int>();
    c.faug.batch = f.at("batch").get<std::size_t>();
    c.faug.lr = f.at("lr").get<double>();
    const json& t = j.at("self_tune");
    c.tune.T = t.at("T").get<int>();
    c.tune.L = t.at("L").get<int>();
    c.tune.lr_a = t.at("lr_a").get<double>();
    c.tune.lr_a_final = t.at("lr_a_final").get<double>();
    c.tune.lr_theta = t.at("lr_theta").get<double>();
    c.tune.batch = t.at("batch").get<std::size_t>();
    c.tune.warm_start = t.at("warm_start").get<int>();
    c.tune.mixing = t.at("mixing").get<double>();
    c.tune.second_order = t.at("second_order").get<bool>();
    c.tune.normalize = t.at("normalize").get<bool>();
    c.tune.loss = parse_align_loss(t.at("loss").get<std::string>());
    c.tune.freeze_a = t.at("freeze_a").get<bool>();
    c.tune.tune_length = t.at("tune_length").get<bool>();
    c.tune.inits.clear();
    for (const auto& a : t.at("inits")) {
      for (const auto& [k, v] : a.items())
        if (k != "level" && k != "length") throw ParseError("config: unknown key 'self_tune.inits." + k + "'");
      c.tune.inits.push_back({a.at("level").get<double>(), a.value("length", 0.3)});
    }
    const json& s = t.at("sinkhorn");
    c.tune.sinkhorn = {s.at("p").get<double>(), s.at("epsilon").get<double>(), s.at("max_iter").get<int>(),
                       s.at("tol").get<double>()};
    if (!t.at("type").is_null()) c.tune_type = parse_anomaly_type(t.at("type").get<std::string>());
    c.candidates.clear();
    for (const auto& n : j.at("candidates")) c.candidates.push_back(parse_anomaly_type(n.get<std::string>()));
    c.ablation_seeds = j.at("ablation_seeds").get<std::size_t>();
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, std::optional<Scale> scale) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str(), scale);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void ExperimentConfig::validate() const {
  profile.validate();
  tune.validate();
  if (n_trn < 2 || n_test < 2) throw InvalidParams("need at least two training and two test series");
  if (faug.epochs < 0 || faug.batch < 2 || !(faug.lr > 0)) throw InvalidParams("invalid f_aug training config");
  if (ablation_seeds == 0) throw InvalidParams("ablation needs at least one seed");
  (void)faug_arch();
  (void)detector_arch();
  domain().validate();
}

std::string ExperimentConfig::to_json() const { return to_json_value(*this).dump(2); }

std::string ExperimentConfig::hash() const {
  json j = to_json_value(*this);
  j.erase("out");
  return fnv1a_hex(j.dump());
}

std::vector<AnomalyType> ExperimentConfig::candidate_types() const {
  return candidates.empty() ? std::vector<AnomalyType>{profile.type} : candidates;
}

HyperDomain ExperimentConfig::domain() const {
  const bool gait = gen.family == Family::GaitLike;
  if (scale == Scale::Paper) return gait ? HyperDomain::paper_mocap(K, gen.period) : HyperDomain::paper_ecg(K);
  return gait ? HyperDomain::desk_gait(K, gen.period) : HyperDomain::desk_ecg(K);
}

FaugArch ExperimentConfig::faug_arch() const {
  return scale == Scale::Paper ? FaugArch::paper(K) : FaugArch::desk(K);
}

DetectorArch ExperimentConfig::detector_arch() const {
  return scale == Scale::Paper ? DetectorArch::paper(K) : DetectorArch::desk(K);
}

std::vector<AInit> ExperimentConfig::inits(AnomalyType type) const {
  if (!tune.inits.empty()) return tune.inits;
  const TypeDomain d = domain()[type];
  return {{0.5 * (d.level.lo + d.level.hi), 0.5 * (d.length.lo + d.length.hi)}};
}

TestMetrics evaluate_detector(const Detector& det, const DatasetSplit& data) {
  ScoredSet s{anomaly_logits(det.arch(), det.params(), data.test), data.test_labels};
  return {auroc(s), best_f1(s)};
}

void write_text(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << content;
  if (!out) throw Error("cannot write " + path.string());
}

std::filesystem::path phi_path(const ExperimentConfig& cfg, AnomalyType type) {
  return cfg.out / ("phi_" + to_string(type) + ".bin");
}

DatasetSplit stage_gen_data(const ExperimentConfig& cfg) {
  return staged("gen-data", [&] {
    DatasetSplit d = build_task(cfg.profile, cfg.n_trn, cfg.n_test, cfg.K, cfg.gen, cfg.seed);
    DatasetManifest m;
    m.K = cfg.K;
    m.n_trn = d.trn.size();
    m.n_test = d.test.size();
    m.n_val = d.val_index.size();
    m.n_anomalies = static_cast<std::size_t>(std::count(d.test_labels.begin(), d.test_labels.end(), 1));
    m.family = to_string(cfg.gen.family);
    m.seed = cfg.seed;
    m.profile_json = profile_to_json(cfg.profile);
    write_dataset(cfg.out / "data", d, m);
    return d;
  });
}

DatasetSplit stage_load_data(const ExperimentConfig& cfg) {
  if (!std::filesystem::exists(cfg.out / "data" / "manifest.json")) return stage_gen_data(cfg);
  return staged("gen-data", [&] {
    DatasetSplit d = read_dataset(cfg.out / "data");
    if (d.K != cfg.K)
      throw Error("dataset in " + (cfg.out / "data").string() + " has K = " + std::to_string(d.K) +
                  ", config says " + std::to_string(cfg.K));
    return d;
  });
}

FaugModel stage_pretrain(const ExperimentConfig& cfg, const DatasetSplit& data, AnomalyType type) {
  return staged("pretrain-faug", [&] {
    const auto key = static_cast<std::uint64_t>(type);
    FaugModel m(cfg.faug_arch(), type, cfg.domain()[type], mix_seed(cfg.seed, 0xfa00 + key));
    FaugTrainConfig fc = cfg.faug;
    fc.seed = mix_seed(cfg.seed, 0xfb00 + key);
    std::vector<double> hist = pretrain_faug(m, data.trn, fc);
    m.save(phi_path(cfg, type));
    std::ostringstream os;
    os << "epoch,loss\n" << std::setprecision(17);
    for (std::size_t e = 0; e < hist.size(); ++e) os << e + 1 << ',' << hist[e] << '\n';
    write_text(cfg.out / ("faug_loss_" + to_string(type) + ".csv"), os.str());
    return m;
  });
}

std::vector<TuneResult> stage_self_tune(const ExperimentConfig& cfg, const DatasetSplit& data) {
  return staged("self-tune", [&] {
    const AnomalyType type = cfg.tuned_type();
    FaugModel phi = load_phi(cfg, type);
    const std::vector<AInit> inits = cfg.inits(type);
    std::vector<TuneResult> runs;
    std::size_t best = 0;
    for (std::size_t k = 0; k < inits.size(); ++k) {
      const std::uint64_t seed = mix_seed(cfg.seed, 0x700 + k);
      TuneResult r = self_tune(data, phi, cfg.detector_arch(), inits[k], cfg.tune, seed);
      const auto dir = cfg.out / "self_tune" / ("run" + std::to_string(k));
      write_trajectory_csv(dir / "trajectory.csv", r.trajectory);
      const json summary = tune_summary(cfg, type, r, inits[k], seed);
      r.detector.save(dir / "theta.bin", summary.dump());
      write_text(dir / "summary.json", summary.dump(2) + "\n");
      runs.push_back(std::move(r));
      if (runs.back().trajectory.tail_l_val(10) < runs[best].trajectory.tail_l_val(10)) best = k;
    }
    const json summary = tune_summary(cfg, type, runs[best], inits[best], mix_seed(cfg.seed, 0x700 + best));
    runs[best].detector.save(cfg.out / "theta.bin", summary.dump());
    write_text(cfg.out / "summary.json", summary.dump(2) + "\n");
    write_panels(cfg.out, runs);
    return runs;
  });
}

Selection stage_select_type(const ExperimentConfig& cfg, const DatasetSplit& data) {
  return staged("select-type", [&] {
    std::vector<FaugModel> models;
    for (AnomalyType t : cfg.candidate_types()) models.push_back(load_phi(cfg, t));
    std::vector<const FaugModel*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    Selection sel = select_type(data, ptrs, cfg.detector_arch(), cfg.tune, cfg.seed);
    json runs = json::array();
    for (std::size_t i = 0; i < sel.runs.size(); ++i) {
      const TypeRun& r = sel.runs[i];
      const auto dir = cfg.out / "select_type" / (to_string(r.type) + "_run" + std::to_string(i));
      write_trajectory_csv(dir / "trajectory.csv", r.result.trajectory);
      runs.push_back({{"type", to_string(r.type)},
                      {"init", {{"level", r.init.level}, {"length", r.init.length}}},
                      {"a", {{"level", r.result.a.level}, {"length", r.result.a.length}}},
                      {"score", r.score}});
    }
    const TypeRun& w = sel.winner();
    json out{{"type", to_string(w.type)},
             {"a", {{"level", w.result.a.level}, {"length", w.result.a.length}}},
             {"score", w.score},
             {"seed", cfg.seed},
             {"config_hash", cfg.hash()},
             {"runs", runs}};
    write_text(cfg.out / "selection.json", out.dump(2) + "\n");
    w.result.detector.save(cfg.out / "theta_selected.bin", out.dump());
    return sel;
  });
}

TestMetrics stage_evaluate(const ExperimentConfig& cfg, const DatasetSplit& data) {
  return staged("evaluate", [&] {
    const auto path = cfg.out / "theta.bin";
    if (!std::filesystem::exists(path))
      throw Error("missing detector parameters " + path.string() + " (run self-tune first)");
    Detector det = Detector::load(path, cfg.detector_arch());
    TestMetrics m = evaluate_detector(det, data);
    json j{{"auroc", m.auroc}, {"best_f1", m.best_f1}, {"n_test", data.test.size()}, {"config_hash", cfg.hash()}};
    write_text(cfg.out / "metrics.json", j.dump(2) + "\n");
    return m;
  });
}

std::vector<AblationRow> stage_ablate(const ExperimentConfig& cfg, const DatasetSplit& data) {
  return staged("ablate", [&] {
    const AnomalyType type = cfg.tuned_type();
    FaugModel phi = load_phi(cfg, type);
    const TypeDomain dom = phi.domain();
    const AInit init = cfg.inits(type).front();
    std::vector<AblationRow> rows;
    for (std::size_t s = 0; s < cfg.ablation_seeds; ++s) {
      const std::uint64_t seed = mix_seed(cfg.seed, 0xab00 + s);
      Rng draw = Rng::stream(seed, {0xf0});
      const AInit random_a{draw.uniform(dom.level.lo, dom.level.hi), draw.uniform(dom.length.lo, dom.length.hi)};
      struct Variant {
        const char* name;
        SelfTuneConfig cfg;
        AInit init;
      };
      std::vector<Variant> variants;
      variants.push_back({"default", cfg.tune, init});
      variants.push_back({"frozen-random", cfg.tune, random_a});
      variants.back().cfg.freeze_a = true;
      variants.push_back({"pointwise", cfg.tune, init});
      variants.back().cfg.loss = AlignLoss::Pointwise;
      variants.push_back({"no-second-order", cfg.tune, init});
      variants.back().cfg.second_order = false;
      variants.push_back({"no-normalize", cfg.tune, init});
      variants.back().cfg.normalize = false;
      for (const Variant& v : variants) {
        TuneResult r = self_tune(data, phi, cfg.detector_arch(), v.init, v.cfg, seed);
        write_trajectory_csv(cfg.out / "ablate" / (std::string(v.name) + "_seed" + std::to_string(s)) / "trajectory.csv",
                             r.trajectory);
        rows.push_back({v.name, seed, r.a.level, r.a.length, r.trajectory.tail_l_val(10),
                        r.trajectory.tail_level_variance(50), evaluate_detector(r.detector, data)});
      }
    }
    std::ostringstream os;
    os << "variant,seed,a_level,a_length,tail_l_val,level_var_last50,test_auroc,test_best_f1\n"
       << std::setprecision(17);
    for (const auto& r : rows)
      os << r.variant << ',' << r.seed << ',' << r.level << ',' << r.length << ',' << r.tail_l_val << ','
         << r.level_variance << ',' << r.test.auroc << ',' << r.test.best_f1 << '\n';
    write_text(cfg.out / "ablation.csv", os.str());
    return rows;
  });
}

std::filesystem::path run_experiment(const ExperimentConfig& cfg) {
  json stages = json::array();
  auto manifest = [&] {
    json m{{"format", "tsap-run"}, {"version", 1}, {"config_hash", cfg.hash()},
           {"config", to_json_value(cfg)}, {"stages", stages}};
    write_text(cfg.out / "manifest.json", m.dump(2) + "\n");
  };
  auto step = [&](const char* name, const auto& f) {
    try {
      f();
      stages.push_back({{"name", name}, {"status", "ok"}});
    } catch (const std::exception& e) {
      stages.push_back({{"name", name}, {"status", "failed"}, {"error", e.what()}});
      manifest();
      throw;
    }
  };
  cfg.validate();
  DatasetSplit data;
  step("gen-data", [&] { data = stage_gen_data(cfg); });
  step("pretrain-faug", [&] { stage_pretrain(cfg, data, cfg.tuned_type()); });
  step("self-tune", [&] { stage_self_tune(cfg, data); });
  step("evaluate", [&] { stage_evaluate(cfg, data); });
  manifest();
  return cfg.out;
}

}  // namespace tsap

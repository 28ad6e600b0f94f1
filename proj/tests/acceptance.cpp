// Acceptance suite: one PASS/FAIL line per criterion. Criteria 1-4 are
// property checks against brute-force oracles; 5-11 run the desk-scale
// pipeline end to end through the experiment stages.
//
//   tsap_acceptance [--work DIR] [--report FILE] [criterion ...]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tiny_bilevel.hpp"
#include "tsap/detector.hpp"
#include "tsap/error.hpp"
#include "tsap/experiment.hpp"
#include "tsap/faug.hpp"
#include "tsap/metrics.hpp"
#include "tsap/nn.hpp"
#include "tsap/ot.hpp"

namespace fs = std::filesystem;
using namespace tsap;
using testing::gradcheck;
using testing::random_tensor;
using testing::weighted_sum;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? NAN : s / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// 1. Injection semantics.

Verdict injection() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  std::size_t mismatches = 0, neutral_fail = 0, pairs = 0;
  for (AnomalyType t : kAllTypes)
    for (int trial = 0; trial < 1000; ++trial) {
      const bool paper = trial % 2 == 1;
      const std::size_t K = paper ? 2700 : 256;
      const HyperDomain dom = paper ? HyperDomain::paper_ecg(K) : HyperDomain::desk_ecg(K);
      Series x = testing::random_series(K, rng);
      AugParams a = sample_params(dom, t, rng);
      Series y = inject(x, a);
      for (std::size_t i = 0; i < K; ++i) {
        bool inside = false;
        const double want = testing::injected_sample(x, a, i, inside);
        if (y[i] != want || (!inside && y[i] != x[i])) ++mismatches;
      }
      AugParams n = a;
      if (t == AnomalyType::MeanShift || t == AnomalyType::Trend || t == AnomalyType::FrequencyShift) {
        n.level = 0.0;
        neutral_fail += inject(x, n) != x;
      } else if (t == AnomalyType::Amplitude) {
        n.level = 1.0;
        neutral_fail += inject(x, n) != x;
      }
      ++pairs;
    }
  const double secs = seconds_since(t0);
  return {mismatches == 0 && neutral_fail == 0 && secs < 5.0,
          std::to_string(pairs) + " pairs, " + std::to_string(mismatches) + " sample mismatches, " +
              std::to_string(neutral_fail) + " neutral-element failures, " + fmt("%.2f s (< 5 s)", secs)};
}

// ---------------------------------------------------------------------------
// 2. Autodiff.

DetectorArch tiny_detector() {
  DetectorArch a;
  a.K = 40;
  a.encoder = {{1, 3, 3, 2, 1, 0, true, true}, {3, 2, 3, 2, 2, 0, true, false}};
  a.pool_kernel = 2;
  a.pool_stride = 2;
  a.embed_dim = 3;
  a.validate();
  return a;
}

Verdict autodiff() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  std::map<std::string, double> first;

  Tensor x = random_tensor({2, 3, 20}, rng);
  first["conv1d"] = gradcheck([](const auto& v) { return weighted_sum(conv1d(v[0], v[1], v[2], 2, 2)); },
                              {x, random_tensor({4, 3, 5}, rng, 0.5), random_tensor({4}, rng)});
  first["conv1d_transposed"] =
      gradcheck([](const auto& v) { return weighted_sum(conv1d_transposed(v[0], v[1], v[2], 3, 1)); },
                {random_tensor({2, 4, 6}, rng), random_tensor({4, 2, 5}, rng, 0.5), random_tensor({2}, rng)});
  first["batchnorm1d"] = gradcheck(
      [](const auto& v) {
        BatchNormState st{Var::constant(Tensor({3})), Var::constant(Tensor({3}, 1.0))};
        return weighted_sum(batchnorm1d(v[0], v[1], v[2], st, true));
      },
      {x, random_tensor({3}, rng), random_tensor({3}, rng)});
  first["linear"] = gradcheck([](const auto& v) { return weighted_sum(linear(v[0], v[1], v[2])); },
                              {random_tensor({5, 7}, rng), random_tensor({3, 7}, rng), random_tensor({3}, rng)});
  first["avgpool1d"] = gradcheck([](const auto& v) { return weighted_sum(avgpool1d(v[0], 4, 3)); }, {x});
  first["sigmoid"] = gradcheck([](const auto& v) { return weighted_sum(sigmoid(v[0])); }, {x});
  Tensor xr = x;
  for (double& v : xr.vec()) v += (v >= 0 ? 0.1 : -0.1);
  first["relu"] = gradcheck([](const auto& v) { return weighted_sum(relu(v[0])); }, {xr});
  first["dropout"] = gradcheck(
      [](const auto& v) {
        Rng r(3);
        return weighted_sum(dropout(v[0], 0.8, r));
      },
      {x});
  const Tensor labels = Tensor::from({0.0, 1.0, 1.0, 0.0, 1.0});
  first["bce_with_logits"] =
      gradcheck([&](const auto& v) { return bce_with_logits(v[0], labels); }, {random_tensor({5}, rng, 2.0)});

  {
    Detector d(tiny_detector(), 3);
    const std::vector<std::string> names = d.params().trainable_names();
    std::vector<Tensor> in;
    for (const auto& n : names) in.push_back(d.params()[n].value());
    in.push_back(random_tensor({3, 1, 40}, rng));
    in.push_back(random_tensor({3, 1, 40}, rng));
    first["f_det + cross-entropy"] = gradcheck(
        [&](const std::vector<Var>& v) {
          ParamSet theta = d.params();
          for (std::size_t i = 0; i < names.size(); ++i) theta[names[i]] = v[i];
          Rng drop(5);
          return detector_loss(d.arch(), theta, v[names.size()], v[names.size() + 1], &drop);
        },
        in);
  }
  {
    FaugModel m(FaugArch::mirrored(24, 3, 4, 2), AnomalyType::Platform,
                HyperDomain::desk_ecg()[AnomalyType::Platform], 11);
    Rng init(12);
    for (const char* n : {"mlp1.w", "mlp1.b"})
      m.params()[n].assign(random_tensor(m.params()[n].shape(), init, 0.3));
    const std::vector<std::string> names = m.params().trainable_names();
    std::vector<Tensor> in;
    for (const auto& n : names) in.push_back(m.params()[n].value());
    in.push_back(random_tensor({3, 3}, rng, 0.5));
    const Tensor xs = random_tensor({3, 1, 24}, rng), target = random_tensor({3, 1, 24}, rng);
    first["f_aug + reconstruction loss"] = gradcheck(
        [&](const std::vector<Var>& v) {
          FaugModel view = m;
          for (std::size_t i = 0; i < names.size(); ++i) view.params()[names[i]] = v[i];
          return faug_loss(view, Var::constant(xs), Var::constant(target), v.back(), true);
        },
        in);
  }

  // d/da [ d(a x^2)/dx at x = 2 ] = 4.
  Var a = Var::param(Tensor::from({1.3}));
  Var xv = Var::param(Tensor::from({2.0}));
  Var dx = grad(sum(mul(a, mul(xv, xv))), {xv}, true)[0];
  const double second = grad(sum(dx), {a})[0].value()[0];
  const double second_err = std::abs(second - 4.0) / 4.0;

  double hyper_err = 0.0;
  testing::Tiny tiny;
  for (int L : {1, 2, 3})
    for (double av : {-0.8, 0.3, 1.4}) {
      const double h = 1e-5;
      const double fd = (tiny.pipeline(av + h, L) - tiny.pipeline(av - h, L)) / (2 * h);
      const double g = tiny.unroll(av, L, true).hypergrad[0][0];
      hyper_err = std::max(hyper_err, std::abs(g - fd) / std::max(1e-12, std::abs(fd)));
    }

  double worst = 0.0;
  std::string worst_name;
  for (const auto& [n, e] : first)
    if (e >= worst) {
      worst = e;
      worst_name = n;
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && second_err < 1e-3 && hyper_err < 1e-3 && secs < 60.0,
          std::to_string(first.size()) + " gradchecks, worst " + fmt("%.1e", worst) + " (" + worst_name +
              ", < 1e-5); second-order " + fmt("%.1e", second_err) + ", hypergradient L=1..3 " +
              fmt("%.1e", hyper_err) + " (< 1e-3); " + fmt("%.1f s (< 60 s)", secs)};
}

// ---------------------------------------------------------------------------
// 3. Optimal transport.

Verdict optimal_transport() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(303);
  int bound_fail = 0, exact_fail = 0;
  double sym = 0.0, scale = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const std::size_t d = 1 + rng.below(4);
    Tensor A = random_tensor({n, d}, rng), B = random_tensor({n, d}, rng);
    const Tensor C = cost_matrix(Var::constant(A), Var::constant(B), 2.0).value();
    SinkhornConfig cfg;
    cfg.epsilon = std::max(1e-3, 0.01 * testing::median(C.vec()));
    cfg.max_iter = 20000;
    const double s = sinkhorn_distance(EmbeddingSet(Var::constant(A)), EmbeddingSet(Var::constant(B)), cfg).item();
    const double exact = exact_ot(A, B, 2.0);
    if (std::abs(exact - testing::brute_force_ot(A, B, 2.0)) > 1e-12) ++exact_fail;
    if (std::abs(s - exact) > cfg.epsilon * (std::log(static_cast<double>(n)) + 1.0) + 1e-6) ++bound_fail;

    const std::size_t m = 1 + rng.below(8);
    Tensor Bm = random_tensor({m, d}, rng);
    SinkhornConfig dc;
    const EmbeddingSet ea(Var::constant(A)), eb(Var::constant(Bm));
    sym = std::max(sym, std::abs(sinkhorn_distance(ea, eb, dc).item() - sinkhorn_distance(eb, ea, dc).item()));
    auto normalized = [&](double c) {
      Tensor a2 = A, b2 = Bm;
      for (double& v : a2.vec()) v *= c;
      for (double& v : b2.vec()) v *= c;
      return sinkhorn_distance(normalize_embeddings(EmbeddingSet(Var::constant(a2))),
                               normalize_embeddings(EmbeddingSet(Var::constant(b2))), dc)
          .item();
    };
    const double base = normalized(1.0);
    for (double c : {0.01, 7.0, 250.0}) scale = std::max(scale, std::abs(normalized(c) - base));
  }
  const double secs = seconds_since(t0);
  return {bound_fail == 0 && exact_fail == 0 && sym <= 1e-9 && scale <= 1e-9 && secs < 30.0,
          "200 pairs: " + std::to_string(bound_fail) + " bound violations, " + std::to_string(exact_fail) +
              " exact_ot/enumeration mismatches; symmetry " + fmt("%.1e", sym) + ", scale " + fmt("%.1e", scale) +
              " (<= 1e-9); " + fmt("%.1f s (< 30 s)", secs)};
}

// ---------------------------------------------------------------------------
// 4. Metrics.

Verdict metrics() {
  Rng rng(404);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    ScoredSet s = testing::random_scored_set(rng);
    worst = std::max(worst, std::abs(auroc(s) - testing::brute_auroc(s)));
    worst = std::max(worst, std::abs(best_f1(s) - testing::brute_f1(s)));
  }
  return {worst <= 1e-12, "500 sets, max deviation from brute force " + fmt("%.1e", worst) + " (<= 1e-12)"};
}

// ---------------------------------------------------------------------------
// Desk-scale tasks shared by criteria 5-11.

ExperimentConfig desk_task(const std::string& name, const fs::path& work) {
  ExperimentConfig c = ExperimentConfig::defaults(Scale::Desk);
  c.faug.epochs = 400;
  c.seed = 1;
  c.out = work / name;
  if (name == "platform" || name == "platform_length") {
    c.profile.type = AnomalyType::Platform;
    c.profile.level = FieldMode::Fixed(0.2);
    if (name == "platform_length") {
      c.profile.length = FieldMode::Fixed(0.3);
      c.tune.tune_length = true;
    }
  } else if (name == "trend") {
    c.profile.type = AnomalyType::Trend;
    c.profile.level = FieldMode::Fixed(0.1);
    c.tune.inits = {{0.18, 0.3}};
  } else if (name == "gait_platform" || name == "gait_frequency") {
    c.gen.family = Family::GaitLike;
    c.candidates = {AnomalyType::Platform, AnomalyType::FrequencyShift};
    const HyperDomain dom = c.domain();
    if (name == "gait_platform") {
      c.profile.type = AnomalyType::Platform;
      const TypeDomain& d = dom[AnomalyType::Platform];
      c.profile.location = FieldMode::Random(d.location);
      c.profile.length = FieldMode::Random(d.length);
      c.profile.level = FieldMode::Fixed(0.2);
    } else {
      c.profile.type = AnomalyType::FrequencyShift;
      const TypeDomain& d = dom[AnomalyType::FrequencyShift];
      c.profile.location = FieldMode::Random(d.location);
      c.profile.length = FieldMode::Random(d.length);
      c.profile.level = FieldMode::Fixed(2.0);
      c.profile.phase_exact = true;
    }
  }
  c.validate();
  return c;
}

// Data and f_aug parameters are produced once per task and reused.
DatasetSplit prepare(const ExperimentConfig& c, const std::vector<AnomalyType>& types) {
  DatasetSplit d = stage_gen_data(c);
  for (AnomalyType t : types) stage_pretrain(c, d, t);
  return d;
}

// ---------------------------------------------------------------------------
// 5. Continuous tuning of the Platform level.

Verdict continuous_tuning(const fs::path& work) {
  ExperimentConfig c = desk_task("platform", work);
  c.tune.inits = {{-0.4, 0.3}, {0.6, 0.3}, {0.8, 0.3}, {-0.8, 0.3}};
  DatasetSplit d = prepare(c, {AnomalyType::Platform});
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<TuneResult> runs = stage_self_tune(c, d);
  const double per_run = seconds_since(t0) / static_cast<double>(runs.size());
  std::vector<double> lv;
  for (const auto& r : runs) lv.push_back(r.trajectory.tail_l_val(10));
  bool ok = per_run < 600.0;
  std::ostringstream os;
  for (int k = 0; k < 2; ++k) {
    const TestMetrics m = evaluate_detector(runs[k].detector, d);
    const bool near = std::abs(runs[k].a.level - 0.2) <= 0.1;
    ok = ok && near && m.auroc >= 0.90;
    os << "init " << c.tune.inits[k].level << " -> " << fmt("%.3f", runs[k].a.level) << " (AUROC "
       << fmt("%.3f", m.auroc) << "); ";
  }
  const double conv = std::max(lv[0], lv[1]), adv = std::min(lv[2], lv[3]);
  ok = ok && conv < adv;
  os << "tail L_val converged " << fmt("%.4f", lv[0]) << "/" << fmt("%.4f", lv[1]) << " vs adversarial "
     << fmt("%.4f", lv[2]) << "/" << fmt("%.4f", lv[3]) << "; " << fmt("%.0f s/run", per_run);
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 6. Level and length together.

Verdict two_hyperparameters(const fs::path& work) {
  ExperimentConfig c = desk_task("platform_length", work);
  c.tune.inits = {{-0.4, 0.15}, {0.6, 0.45}, {0.6, 0.15}, {-0.4, 0.45}};
  DatasetSplit d = prepare(c, {AnomalyType::Platform});
  std::vector<TuneResult> runs = stage_self_tune(c, d);
  bool any = false;
  std::ostringstream os;
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const bool hit = std::abs(runs[k].a.level - 0.2) <= 0.1 && std::abs(runs[k].a.length - 0.3) <= 0.1;
    any = any || hit;
    os << "(" << fmt("%.3f", runs[k].a.level) << ", " << fmt("%.3f", runs[k].a.length) << ")" << (hit ? "*" : "")
       << (k + 1 < runs.size() ? " " : "");
  }
  return {any, "final (level, length) " + os.str() + "; target (0.2, 0.3) +- 0.1"};
}

// ---------------------------------------------------------------------------
// 7. Type selection.

Verdict type_selection(const fs::path& work) {
  std::ostringstream os;
  bool ok = true;
  for (const char* name : {"gait_platform", "gait_frequency"}) {
    ExperimentConfig c = desk_task(name, work);
    DatasetSplit d = prepare(c, c.candidate_types());
    Selection sel = stage_select_type(c, d);
    ok = ok && sel.winner().type == c.profile.type;
    os << to_string(c.profile.type) << " task -> " << to_string(sel.winner().type) << " (";
    for (std::size_t i = 0; i < sel.runs.size(); ++i)
      os << to_string(sel.runs[i].type) << " " << fmt("%.4f", sel.runs[i].score)
         << (i + 1 < sel.runs.size() ? ", " : ")");
    os << (std::string(name) == "gait_platform" ? "; " : "");
  }
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 8-10. Ablations on the Trend task, shared.

struct Ablation {
  std::map<std::string, std::vector<AblationRow>> by_variant;
  bool ran = false;
};

const Ablation& trend_ablation(const fs::path& work) {
  static Ablation a;
  if (!a.ran) {
    ExperimentConfig c = desk_task("trend", work);
    c.ablation_seeds = 3;
    DatasetSplit d = prepare(c, {AnomalyType::Trend});
    for (auto& r : stage_ablate(c, d)) a.by_variant[r.variant].push_back(r);
    a.ran = true;
  }
  return a;
}

template <class F>
double avg(const std::vector<AblationRow>& rows, F f) {
  std::vector<double> v;
  for (const auto& r : rows) v.push_back(f(r));
  return mean_of(v);
}

Verdict randomization_vs_tuning(const fs::path& work) {
  const Ablation& a = trend_ablation(work);
  const double tuned = avg(a.by_variant.at("default"), [](const AblationRow& r) { return r.test.auroc; });
  const double frozen = avg(a.by_variant.at("frozen-random"), [](const AblationRow& r) { return r.test.auroc; });
  return {frozen <= tuned - 0.05, "3-seed AUROC tuned " + fmt("%.4f", tuned) + " vs frozen random " +
                                      fmt("%.4f", frozen) + " (gap >= 0.05)"};
}

Verdict pointwise_loss(const fs::path& work) {
  const Ablation& a = trend_ablation(work);
  const double pw = avg(a.by_variant.at("pointwise"), [](const AblationRow& r) { return std::abs(r.level); });
  const double ws = avg(a.by_variant.at("default"), [](const AblationRow& r) { return r.level; });
  return {pw < 0.05 && ws >= 0.05 && ws <= 0.15,
          "3-seed mean |a| pointwise " + fmt("%.4f", pw) + " (< 0.05), mean a wasserstein " + fmt("%.4f", ws) +
              " (in [0.05, 0.15])"};
}

Verdict second_order_and_normalization(const fs::path& work) {
  const Ablation& a = trend_ablation(work);
  auto var = [](const AblationRow& r) { return r.level_variance; };
  auto auc = [](const AblationRow& r) { return r.test.auroc; };
  const double v0 = avg(a.by_variant.at("default"), var), u0 = avg(a.by_variant.at("default"), auc);
  bool ok = true;
  std::ostringstream os;
  os << "default var " << fmt("%.2e", v0) << " AUROC " << fmt("%.4f", u0);
  for (const char* name : {"no-second-order", "no-normalize"}) {
    const double v = avg(a.by_variant.at(name), var), u = avg(a.by_variant.at(name), auc);
    const bool hit = v >= 2.0 * v0 || u <= u0 - 0.05;
    ok = ok && hit;
    os << "; " << name << " var " << fmt("%.2e", v) << " AUROC " << fmt("%.4f", u) << (hit ? " (ok)" : " (no)");
  }
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 11. Determinism.

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism(const fs::path& work) {
  std::vector<fs::path> dirs;
  for (const char* name : {"rerun_a", "rerun_b"}) {
    ExperimentConfig c = desk_task("platform", work);
    c.out = work / name;
    fs::remove_all(c.out);
    c.faug.epochs = 20;
    c.tune.T = 15;
    c.tune.inits = {{-0.4, 0.3}, {0.6, 0.3}};
    run_experiment(c);
    dirs.push_back(c.out);
  }
  std::size_t compared = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file() || e.path().filename() == "manifest.json") continue;
    const fs::path rel = fs::relative(e.path(), dirs[0]);
    ++compared;
    differ += slurp(e.path()) != slurp(dirs[1] / rel);
  }
  return {compared > 0 && differ == 0,
          std::to_string(compared) + " artifacts compared (trajectories, parameters, metrics), " +
              std::to_string(differ) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = "acceptance_work";
  fs::path report;
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (arg == "--report" && i + 1 < argc) {
      report = argv[++i];
    } else {
      try {
        only.insert(std::stoi(arg));
      } catch (const std::exception&) {
        std::fprintf(stderr, "usage: %s [--work DIR] [--report FILE] [criterion ...]\n", argv[0]);
        return 2;
      }
    }
  }
  fs::create_directories(work);

  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria{
      {"injection semantics", injection},
      {"autodiff", autodiff},
      {"optimal transport", optimal_transport},
      {"metrics", metrics},
      {"continuous tuning", [&] { return continuous_tuning(work); }},
      {"two-hyperparameter tuning", [&] { return two_hyperparameters(work); }},
      {"type selection", [&] { return type_selection(work); }},
      {"randomization vs tuning", [&] { return randomization_vs_tuning(work); }},
      {"point-wise loss", [&] { return pointwise_loss(work); }},
      {"second order and normalization", [&] { return second_order_and_normalization(work); }},
      {"determinism", [&] { return determinism(work); }},
  };

  std::ofstream rep;
  if (!report.empty()) rep.open(report);
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failed += !v.pass;
    char head[96];
    std::snprintf(head, sizeof head, "criterion %2d %s  %-31s", id, v.pass ? "PASS" : "FAIL", criteria[i].first);
    const std::string line = std::string(head) + " " + v.detail + fmt("  [%.0f s]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    if (rep) rep << line << '\n' << std::flush;
  }
  return failed == 0 ? 0 : 1;
}

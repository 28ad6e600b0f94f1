#include "tsap/selftune.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "tsap/error.hpp"
#include "tsap/metrics.hpp"

namespace tsap {

std::string to_string(AlignLoss l) { return l == AlignLoss::Wasserstein ? "wasserstein" : "pointwise"; }

AlignLoss parse_align_loss(const std::string& s) {
  if (s == "wasserstein") return AlignLoss::Wasserstein;
  if (s == "pointwise") return AlignLoss::Pointwise;
  throw InvalidParams("unknown loss '" + s + "' (expected wasserstein or pointwise)");
}

void SelfTuneConfig::validate() const {
  if (T < 1 || L < 1) throw InvalidParams("self-tune needs T >= 1 and L >= 1");
  if (!(mixing > 0.0 && mixing < 1.0)) throw InvalidParams("mixing rate must lie in (0, 1)");
  if (!(lr_a > 0.0) || !(lr_theta > 0.0)) throw InvalidParams("learning rates must be positive");
  if (lr_a_final > lr_a) throw InvalidParams("lr_a_final must not exceed lr_a");
  if (batch < 2) throw InvalidParams("batch size must be at least 2");
  if (warm_start < 0) throw InvalidParams("warm-start epochs must be non-negative");
  if (!(sinkhorn.epsilon > 0.0) || sinkhorn.max_iter < 1)
    throw InvalidParams("sinkhorn needs epsilon > 0 and max_iter >= 1");
}

double SelfTuneConfig::lr_a_at(int t) const {
  if (lr_a_final < 0.0 || T < 2) return lr_a;
  const double u = static_cast<double>(t - 1) / static_cast<double>(T - 1);
  return lr_a_final + 0.5 * (lr_a - lr_a_final) * (1.0 + std::cos(std::numbers::pi * u));
}

double TuneTrajectory::tail_l_val(std::size_t n) const {
  if (epochs.empty()) throw ContractError("empty trajectory");
  const std::size_t k = std::min(n, epochs.size());
  double s = 0.0;
  for (std::size_t i = epochs.size() - k; i < epochs.size(); ++i) s += epochs[i].l_val;
  return s / static_cast<double>(k);
}

double TuneTrajectory::tail_level_variance(std::size_t n) const {
  if (epochs.empty()) throw ContractError("empty trajectory");
  const std::size_t k = std::min(n, epochs.size());
  double mu = 0.0, var = 0.0;
  for (std::size_t i = epochs.size() - k; i < epochs.size(); ++i) mu += epochs[i].level;
  mu /= static_cast<double>(k);
  for (std::size_t i = epochs.size() - k; i < epochs.size(); ++i)
    var += (epochs[i].level - mu) * (epochs[i].level - mu);
  return var / static_cast<double>(k);
}

void write_trajectory_csv(const std::filesystem::path& path, const TuneTrajectory& tr) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,a_level,a_length,l_trn,l_val,auroc_val\n" << std::setprecision(17);
  for (const auto& r : tr.epochs)
    out << r.epoch << ',' << r.level << ',' << r.length << ',' << r.l_trn << ',' << r.l_val << ','
        << r.auroc_val << '\n';
  if (!out) throw Error("write failed for " + path.string());
}

TuneTrajectory read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,a_level,a_length,l_trn,l_val,auroc_val")
    throw ParseError(path.string() + ":1: unexpected trajectory header");
  TuneTrajectory tr;
  for (std::size_t no = 2; std::getline(in, line); ++no) {
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    EpochRecord r;
    if (!(ss >> r.epoch >> r.level >> r.length >> r.l_trn >> r.l_val >> r.auroc_val))
      throw ParseError(path.string() + ":" + std::to_string(no) + ": malformed trajectory row");
    tr.epochs.push_back(r);
  }
  return tr;
}

Var validation_loss(const Var& z_trn, const Var& z_aug, const Var& z_val, const SelfTuneConfig& cfg,
                    Rng& rng) {
  const std::size_t n = z_val.shape()[0];
  const auto n_aug = static_cast<std::size_t>(std::ceil(cfg.mixing * static_cast<double>(n) - 1e-9));
  const std::size_t n_trn = n - n_aug;
  if (z_trn.shape()[0] < n_trn || (n_aug > 0 && z_aug.shape()[0] < n_aug))
    throw ContractError("validation loss: not enough reference rows (" + std::to_string(n_trn) +
                        " trn, " + std::to_string(n_aug) + " aug needed)");
  auto pick = [&rng](const Var& z, std::size_t k) {
    std::vector<std::size_t> p = rng.permutation(z.shape()[0]);
    p.resize(k);
    std::sort(p.begin(), p.end());
    return gather_rows(z, p);
  };
  std::vector<Var> parts;
  if (n_trn > 0) parts.push_back(pick(z_trn, n_trn));
  if (n_aug > 0) parts.push_back(pick(z_aug, n_aug));
  EmbeddingSet ref(parts.size() == 1 ? parts[0] : concat_rows(parts));
  EmbeddingSet val(z_val);
  if (cfg.normalize) {
    ref = normalize_embeddings(ref);
    val = normalize_embeddings(val);
  }
  return cfg.loss == AlignLoss::Wasserstein ? sinkhorn_distance(ref, val, cfg.sinkhorn)
                                            : pointwise_loss(ref, val);
}

UnrollResult unrolled_hypergradient(
    const std::vector<Var>& theta0, const std::vector<Var>& hyper,
    const std::function<Var(const std::vector<Var>& theta, int step)>& inner,
    const std::function<Var(const std::vector<Var>& theta)>& outer, const UnrollSpec& spec) {
  if (spec.steps < 0) throw InvalidParams("unroll: negative step count");
  if (spec.optimizer == InnerOptimizer::Adam && !spec.adam)
    throw ContractError("unroll: Adam inner optimizer needs a state");
  UnrollResult res;
  std::vector<Var> theta;
  for (const auto& t : theta0) theta.push_back(t.detach(true));
  for (int k = 0; k < spec.steps; ++k) {
    Var loss = inner(theta, k);
    if (!std::isfinite(loss.item()))
      throw NumericError("inner loss is not finite at step " + std::to_string(k));
    res.inner_losses.push_back(loss.item());
    std::vector<Var> g = grad(loss, theta, spec.second_order);
    std::vector<Var> next;
    if (spec.optimizer == InnerOptimizer::Adam) {
      next = adam_step_graph(theta, g, *spec.adam);
    } else {
      for (std::size_t i = 0; i < theta.size(); ++i) next.push_back(sub(theta[i], scale(g[i], spec.sgd_lr)));
    }
    if (!spec.second_order) {
      // First-order: the trajectory of theta carries no dependence on hyper.
      for (auto& v : next) v = v.detach(true);
      if (spec.adam) spec.adam->detach();
    }
    theta = std::move(next);
  }
  Var out = outer(theta);
  res.outer = out.item();
  if (!std::isfinite(res.outer)) throw NumericError("outer loss is not finite");
  if (!hyper.empty()) {
    for (const auto& g : grad(out, hyper)) res.hypergrad.push_back(g.value());
    for (const auto& g : res.hypergrad)
      if (!g.all_finite()) throw NumericError("hypergradient is not finite");
  }
  for (const auto& t : theta) res.theta.push_back(t.value());
  if (spec.adam) spec.adam->detach();
  return res;
}

// ---------------------------------------------------------------------------

namespace {

/// Pseudo-anomaly generator over a fixed training set with a frozen f_aug.
/// Pseudo anomalies are x + (Dec(z + z_a) - Dec(z)): the learned change
/// applied to the raw series, so reconstruction error does not itself mark
/// augmented rows.
class AugSource {
 public:
  AugSource(const FaugModel& faug, const std::vector<Series>& trn) : faug_(faug) {
    for (auto& e : faug_.params().entries()) e.var = Var::constant(e.var.value());
    NoGradGuard ng;
    x_ = stack_series(trn);
    z_ = faug_.encode(Var::constant(x_), false).value();
    rec_ = faug_.decode(Var::constant(z_), false).value();
  }

  const TypeDomain& domain() const { return faug_.domain(); }
  std::size_t rows() const { return x_.dim(0); }

  Tensor x(const std::vector<std::size_t>& idx) const { return gather(x_, idx); }

  /// Per-row locations and lengths (lengths ignored if `length` is given);
  /// shared level and optional shared length.
  Var aug(const std::vector<std::size_t>& idx, const std::vector<double>& locs,
          const std::vector<double>& lengths, const Var& level, const Var* length) const {
    const std::size_t B = idx.size();
    const TypeDomain& d = faug_.domain();
    Tensor loc_row({1, B}), len_row({1, B});
    for (std::size_t i = 0; i < B; ++i) {
      loc_row[i] = d.location.normalize(locs[i]);
      len_row[i] = d.length.normalize(lengths[i]);
    }
    Var len = length ? shared_row(*length, d.length, B) : Var::constant(len_row);
    Var a_enc = transpose(concat_rows({Var::constant(loc_row), len, shared_row(level, d.level, B)}));
    Var z = Var::constant(gather(z_, idx));
    Var dec = faug_.decode(add(z, faug_.shift(a_enc)), false);
    return add(Var::constant(gather(x_, idx)), sub(dec, Var::constant(gather(rec_, idx))));
  }

 private:
  static Tensor gather(const Tensor& t, const std::vector<std::size_t>& idx) {
    const std::size_t row = t.size() / t.dim(0);
    Shape s = t.shape();
    s[0] = idx.size();
    Tensor out(s);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy_n(t.vec().begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                  out.vec().begin() + static_cast<std::ptrdiff_t>(i * row));
    return out;
  }

  static Var shared_row(const Var& v, const Interval& iv, std::size_t B) {
    if (!(iv.hi > iv.lo)) return Var::constant(Tensor({1, B}));
    Var n = scale(add_scalar(reshape(v, {1, 1}), -iv.lo), 1.0 / (iv.hi - iv.lo));
    return broadcast_to(n, {1, B});
  }

  FaugModel faug_;
  Tensor x_, z_, rec_;
};

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> p = rng.permutation(n);
  p.resize(std::min(k, n));
  return p;
}

/// Continuous stream of minibatches over n rows, reshuffled every pass.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch, std::uint64_t seed) : n_(n), batch_(batch), seed_(seed) {}
  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < std::min(batch_, n_)) {
      if (pos_ >= order_.size()) {
        Rng r = Rng::stream(seed_, {0x5b, pass_++});
        order_ = r.permutation(n_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::uint64_t seed_;
  std::uint64_t pass_ = 0;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

TuneResult self_tune(const DatasetSplit& data, const FaugModel& faug, const DetectorArch& arch,
                     const AInit& init, const SelfTuneConfig& cfg, std::uint64_t seed,
                     const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (arch.K != data.K || faug.arch().K != data.K)
    throw ShapeError("series length " + std::to_string(data.K) + " does not match the models");
  const TypeDomain& dom = faug.domain();
  const std::vector<Series> val_rows = data.val();
  std::vector<int> val_labels;
  for (std::size_t i : data.val_index) val_labels.push_back(data.test_labels[i]);
  const bool val_has_both =
      std::count(val_labels.begin(), val_labels.end(), 1) > 0 &&
      std::count(val_labels.begin(), val_labels.end(), 0) > 0;

  AugSource src(faug, data.trn);
  Detector det(arch, mix_seed(seed, 0xd7));
  AdamState opt(AdamConfig{cfg.lr_theta});
  AdamState opt_a(AdamConfig{cfg.lr_a});
  const std::vector<std::string> names = det.params().trainable_names();

  Var level = Var::param(Tensor::from({dom.level.clamp(init.level)}));
  Var length = Var::param(Tensor::from({dom.length.clamp(init.length)}));
  std::vector<Var> hyper{level};
  if (cfg.tune_length) hyper.push_back(length);

  auto draw_fields = [&](std::size_t B, Rng& rng, std::vector<double>& locs, std::vector<double>& lens) {
    locs.resize(B);
    lens.resize(B);
    for (std::size_t i = 0; i < B; ++i) {
      locs[i] = rng.uniform(dom.location.lo, dom.location.hi);
      lens[i] = rng.uniform(dom.length.lo, dom.length.hi);
    }
  };
  auto make_aug = [&](const std::vector<std::size_t>& idx, Rng& rng) {
    std::vector<double> locs, lens;
    draw_fields(idx.size(), rng, locs, lens);
    return src.aug(idx, locs, lens, level, cfg.tune_length ? &length : nullptr);
  };
  auto view = [&](const std::vector<Var>& theta) {
    ParamSet p = det.params();
    p.set_trainable(theta);
    return p;
  };

  // Warm start: detector only, a held at its initial value.
  BatchStream warm(src.rows(), cfg.batch, mix_seed(seed, 0x3a));
  const std::size_t warm_steps = (src.rows() + cfg.batch - 1) / cfg.batch;
  for (int e = 0; e < cfg.warm_start; ++e)
    for (std::size_t s = 0; s < warm_steps; ++s) {
      Rng rng = Rng::stream(seed, {0x3b, static_cast<std::uint64_t>(e), s});
      std::vector<std::size_t> idx = warm.next();
      Var x_aug;
      {
        NoGradGuard ng;
        x_aug = make_aug(idx, rng);
      }
      Var loss = detector_loss(arch, det.params(), Var::constant(src.x(idx)), x_aug, &rng);
      if (!std::isfinite(loss.item())) throw NumericError("warm-start loss is not finite");
      std::vector<Var> p = det.params().trainable();
      adam_step(p, grad(loss, p), opt, names);
    }

  TuneResult out{det, init, {}};
  BatchStream stream(src.rows(), cfg.batch, mix_seed(seed, 0x5a));
  const std::size_t n_val = val_rows.size();
  const auto n_mix = static_cast<std::size_t>(std::ceil(cfg.mixing * static_cast<double>(n_val) - 1e-9));
  const Tensor x_val = stack_series(val_rows);

  for (int t = 1; t <= cfg.T; ++t) {
    const auto te = static_cast<std::uint64_t>(t);
    std::vector<std::vector<std::size_t>> batches;
    for (int k = 0; k < cfg.L; ++k) batches.push_back(stream.next());

    auto inner = [&](const std::vector<Var>& theta, int k) {
      Rng rng = Rng::stream(seed, {0x51, te, static_cast<std::uint64_t>(k)});
      const auto& idx = batches[static_cast<std::size_t>(k)];
      return detector_loss(arch, view(theta), Var::constant(src.x(idx)), make_aug(idx, rng), &rng);
    };
    auto outer = [&](const std::vector<Var>& theta) {
      Rng rng = Rng::stream(seed, {0x52, te});
      std::vector<std::size_t> ref = sample_rows(src.rows(), n_val - n_mix, rng);
      std::vector<std::size_t> aug_idx = sample_rows(src.rows(), n_mix, rng);
      Var x = concat_rows({Var::constant(src.x(ref)), make_aug(aug_idx, rng), Var::constant(x_val)});
      Var z = detector_embed(arch, view(theta), x, false);
      auto rows = [](std::size_t b, std::size_t e) {
        std::vector<std::size_t> r;
        for (std::size_t i = b; i < e; ++i) r.push_back(i);
        return r;
      };
      const std::size_t a0 = ref.size(), a1 = a0 + aug_idx.size();
      return validation_loss(gather_rows(z, rows(0, a0)), gather_rows(z, rows(a0, a1)),
                             gather_rows(z, rows(a1, a1 + n_val)), cfg, rng);
    };

    UnrollSpec spec;
    spec.steps = cfg.L;
    spec.second_order = cfg.second_order && !cfg.freeze_a;
    spec.optimizer = InnerOptimizer::Adam;
    spec.adam = &opt;
    UnrollResult r = unrolled_hypergradient(det.params().trainable(),
                                            cfg.freeze_a ? std::vector<Var>{} : hyper, inner, outer, spec);
    {
      std::vector<Var> theta;
      for (auto& v : r.theta) theta.push_back(Var::param(std::move(v)));
      det.params().set_trainable(theta);
    }
    if (!cfg.freeze_a) {
      std::vector<Var> g;
      for (const auto& h : r.hypergrad) g.push_back(Var::constant(h));
      opt_a.config.lr = cfg.lr_a_at(t);
      adam_step(hyper, g, opt_a, {"level", "length"});
      level.assign(Tensor::from({dom.level.clamp(level.item())}));
      length.assign(Tensor::from({dom.length.clamp(length.item())}));
    }

    EpochRecord rec;
    rec.epoch = t;
    rec.level = level.item();
    rec.length = length.item();
    for (double l : r.inner_losses) rec.l_trn += l / static_cast<double>(r.inner_losses.size());
    rec.l_val = r.outer;
    rec.auroc_val = val_has_both ? auroc({anomaly_logits(arch, det.params(), val_rows), val_labels})
                                 : std::nan("");
    out.trajectory.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  out.detector = det;
  out.a = {level.item(), length.item()};
  return out;
}

Selection select_type(const DatasetSplit& data, const std::vector<const FaugModel*>& models,
                      const DetectorArch& arch, const SelfTuneConfig& cfg, std::uint64_t seed) {
  if (models.empty()) throw InvalidParams("select_type needs at least one candidate type");
  Selection sel;
  std::string failures;
  for (std::size_t m = 0; m < models.size(); ++m) {
    const TypeDomain& d = models[m]->domain();
    const std::vector<AInit> inits =
        cfg.inits.empty() ? std::vector<AInit>{{0.5 * (d.level.lo + d.level.hi), 0.5 * (d.length.lo + d.length.hi)}}
                          : cfg.inits;
    for (std::size_t i = 0; i < inits.size(); ++i) {
      try {
        TuneResult r = self_tune(data, *models[m], arch, inits[i], cfg, mix_seed(seed, i));
        const double score = r.trajectory.tail_l_val(10);
        sel.runs.push_back({models[m]->type(), inits[i], score, std::move(r)});
      } catch (const Error& e) {
        failures += "\n  " + to_string(models[m]->type()) + ": " + e.what();
      }
    }
  }
  if (sel.runs.empty()) throw Error("select_type: every run failed:" + failures);
  for (std::size_t i = 1; i < sel.runs.size(); ++i)
    if (sel.runs[i].score < sel.runs[sel.best].score) sel.best = i;
  return sel;
}

}  // namespace tsap

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "tsap/error.hpp"
#include "tsap/experiment.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string scale;
  std::string loss;
  bool no_second_order = false;
  bool no_normalize = false;
  bool freeze_a = false;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON experiment config")->check(CLI::ExistingFile);
  sub->add_option("--seed", o.seed, "master seed");
  sub->add_option("--out", o.out, "output directory");
  sub->add_option("--scale", o.scale, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--loss", o.loss, "alignment loss")->check(CLI::IsMember({"wasserstein", "pointwise"}));
  sub->add_flag("--no-second-order", o.no_second_order, "drop the indirect hypergradient path");
  sub->add_flag("--no-normalize", o.no_normalize, "align unnormalized embeddings");
  sub->add_flag("--freeze-a", o.freeze_a, "keep the augmentation hyperparameters at their init");
}

tsap::ExperimentConfig resolve(const Overrides& o) {
  try {
    std::optional<tsap::Scale> scale;
    if (!o.scale.empty()) scale = tsap::parse_scale(o.scale);
    tsap::ExperimentConfig c = o.config.empty() ? tsap::ExperimentConfig::defaults(scale.value_or(tsap::Scale::Desk))
                                                : tsap::ExperimentConfig::load(o.config, scale);
    if (o.seed) c.seed = *o.seed;
    if (!o.out.empty()) c.out = o.out;
    if (!o.loss.empty()) c.tune.loss = tsap::parse_align_loss(o.loss);
    if (o.no_second_order) c.tune.second_order = false;
    if (o.no_normalize) c.tune.normalize = false;
    if (o.freeze_a) c.tune.freeze_a = true;
    c.validate();
    return c;
  } catch (const tsap::StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw tsap::StageError("config", e.what());
  }
}

void pretrain_all(const tsap::ExperimentConfig& c, const tsap::DatasetSplit& d) {
  std::set<tsap::AnomalyType> types;
  for (auto t : c.candidate_types()) types.insert(t);
  types.insert(c.tuned_type());
  for (auto t : types) {
    tsap::stage_pretrain(c, d, t);
    std::cout << "pretrain-faug: " << tsap::phi_path(c, t).string() << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-tuning self-supervised time-series anomaly detection"};
  app.require_subcommand(1);
  Overrides o;
  std::string which;
  for (const char* name : {"gen-data", "pretrain-faug", "self-tune", "select-type", "evaluate", "ablate", "run"}) {
    static const std::map<std::string, std::string> help{
        {"gen-data", "generate the synthetic dataset"},
        {"pretrain-faug", "train f_aug for the tuned type and every candidate"},
        {"self-tune", "tune the augmentation level and train the detector"},
        {"select-type", "grid search over candidate anomaly types"},
        {"evaluate", "score the tuned detector on the test split"},
        {"ablate", "run the ablation variants"},
        {"run", "gen-data, pretrain-faug, self-tune and evaluate"}};
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    add_common(sub, o);
    sub->callback([&which, name] { which = name; });
  }
  CLI11_PARSE(app, argc, argv);

  try {
    const tsap::ExperimentConfig c = resolve(o);
    if (which == "gen-data") {
      tsap::stage_gen_data(c);
      std::cout << "gen-data: " << (c.out / "data").string() << '\n';
    } else if (which == "pretrain-faug") {
      pretrain_all(c, tsap::stage_load_data(c));
    } else if (which == "self-tune") {
      auto runs = tsap::stage_self_tune(c, tsap::stage_load_data(c));
      for (std::size_t k = 0; k < runs.size(); ++k)
        std::printf("self-tune: run%zu level=%.6f length=%.6f score=%.6g\n", k, runs[k].a.level, runs[k].a.length,
                    runs[k].trajectory.tail_l_val(10));
    } else if (which == "select-type") {
      auto sel = tsap::stage_select_type(c, tsap::stage_load_data(c));
      std::printf("select-type: %s level=%.6f score=%.6g\n", tsap::to_string(sel.winner().type).c_str(),
                  sel.winner().result.a.level, sel.winner().score);
    } else if (which == "evaluate") {
      auto m = tsap::stage_evaluate(c, tsap::stage_load_data(c));
      std::printf("evaluate: auroc=%.6f best_f1=%.6f\n", m.auroc, m.best_f1);
    } else if (which == "ablate") {
      auto rows = tsap::stage_ablate(c, tsap::stage_load_data(c));
      for (const auto& r : rows)
        std::printf("ablate: %-16s seed=%llu level=%.4f var50=%.3g auroc=%.4f\n", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), r.level, r.level_variance, r.test.auroc);
    } else {
      std::cout << "run: " << tsap::run_experiment(c).string() << '\n';
    }
  } catch (const tsap::StageError& e) {
    std::cerr << "tsap: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "tsap: [" << which << "] " << e.what() << '\n';
    return 2;
  }
  return 0;
}

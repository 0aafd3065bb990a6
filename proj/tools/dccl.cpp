#include <cstdio>
#include <deque>
#include <string>
#include <tuple>
#include <vector>

#include "CLI11.hpp"
#include "dccl/pipeline.hpp"

namespace {

// Every override flag is collected as raw text and pushed through the same
// key=value path as the config file, so validation and precedence live in
// one place.
class FlagSet {
 public:
  void add(CLI::App* cmd, const std::string& flag, const std::string& key,
           const std::string& help) {
    values_.emplace_back();
    entries_.push_back({key, &values_.back(), cmd->add_option(flag, values_.back(), help)});
  }

  void apply(dccl::RunConfig& cfg) const {
    for (const auto& [key, value, opt] : entries_)
      if (opt->count() > 0) dccl::apply_key(cfg, key, *value);
  }

 private:
  std::deque<std::string> values_;
  std::vector<std::tuple<std::string, const std::string*, CLI::Option*>> entries_;
};

void add_train_flags(CLI::App* cmd, FlagSet& flags) {
  flags.add(cmd, "--dim", "dim", "embedding dimension");
  flags.add(cmd, "--batch-size", "batch_size", "training batch size");
  flags.add(cmd, "--learning-rate", "learning_rate", "Adam learning rate");
  flags.add(cmd, "--alpha", "alpha", "interest contrastive weight");
  flags.add(cmd, "--beta", "beta", "conformity contrastive weight");
  flags.add(cmd, "--epochs", "epochs", "maximum training epochs");
  flags.add(cmd, "--backbone", "backbone", "mf or lightgcn");
  flags.add(cmd, "--layers", "layers", "LightGCN propagation layers");
  flags.add(cmd, "--loss-mode", "loss_mode", "weighted or literal popularity factor");
  flags.add(cmd, "--false-negative-filter", "false_negative_filter",
            "mask in-batch negatives the user interacted with");
  flags.add(cmd, "--init-scale", "init_scale", "embedding init stddev");
  flags.add(cmd, "--val-fraction", "val_fraction", "validation holdout fraction (0 disables)");
  flags.add(cmd, "--patience", "patience", "early-stop patience in epochs");
}

void print_report_line(const char* label, const dccl::MetricsReport& r) {
  std::printf("%s HR@%u %.4f NDCG@%u %.4f (x100, %zu users, %zu pairs)\n", label, r.k,
              r.hr * 100.0, r.k, r.ndcg * 100.0, r.num_users_evaluated, r.num_pairs);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled interest/conformity embeddings for implicit-feedback recommendation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  app.add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
  FlagSet global;
  global.add(&app, "--seed", "seed", "base RNG seed");
  global.add(&app, "--out", "out", "output root directory");
  global.add(&app, "--run-dir", "run_dir", "exact output directory (skips the timestamped one)");

  auto* prepare = app.add_subcommand(
      "prepare", "ingest a raw log: binarize, k-core filter, split, popularity stats");
  FlagSet prep_flags;
  prep_flags.add(prepare, "--input", "input", "raw interaction log (csv/tsv)");
  prep_flags.add(prepare, "--format", "format", "csv or tsv");
  prep_flags.add(prepare, "--k-core", "k_core", "k-core threshold (default 10)");
  prep_flags.add(prepare, "--test-fraction", "test_fraction", "per-user test holdout fraction");

  auto* train_cmd = app.add_subcommand("train", "train on a prepared dataset directory");
  FlagSet train_flags;
  train_flags.add(train_cmd, "--dataset-dir", "dataset_dir",
                  "directory containing train.tsv and test.tsv");
  add_train_flags(train_cmd, train_flags);

  auto* eval_cmd = app.add_subcommand("eval", "full-ranking evaluation of a checkpoint");
  FlagSet eval_flags;
  eval_flags.add(eval_cmd, "--checkpoint", "checkpoint", "model checkpoint file");
  eval_flags.add(eval_cmd, "--dataset-dir", "dataset_dir",
                 "directory containing train.tsv and test.tsv");
  eval_flags.add(eval_cmd, "--k", "k", "ranking cutoff (default 20)");

  auto* ood_cmd =
      app.add_subcommand("ood", "evaluate a checkpoint on intervened popularity test sets");
  FlagSet ood_flags;
  ood_flags.add(ood_cmd, "--checkpoint", "checkpoint", "model checkpoint file");
  ood_flags.add(ood_cmd, "--dataset-dir", "dataset_dir",
                "directory containing train.tsv and test.tsv");
  ood_flags.add(ood_cmd, "--k", "k", "ranking cutoff (default 20)");
  ood_flags.add(ood_cmd, "--proportions", "proportions",
                "comma list of target popular proportions");
  ood_flags.add(ood_cmd, "--ood-seeds", "ood_seeds", "comma list of downsampling seeds");

  auto* synth_cmd =
      app.add_subcommand("synth", "generate a synthetic interest+conformity world");
  FlagSet synth_flags;
  synth_flags.add(synth_cmd, "--synth-users", "synth_users", "number of users");
  synth_flags.add(synth_cmd, "--synth-items", "synth_items", "number of items");
  synth_flags.add(synth_cmd, "--synth-latent-dim", "synth_latent_dim", "latent dimension");
  synth_flags.add(synth_cmd, "--synth-density", "synth_density", "target train density");
  synth_flags.add(synth_cmd, "--synth-pop-exponent", "synth_pop_exponent",
                  "power-law exponent (> 1)");
  synth_flags.add(synth_cmd, "--synth-conformity-mix", "synth_conformity_mix",
                  "conformity share of the mechanism [0, 1]");
  synth_flags.add(synth_cmd, "--synth-test-density-scale", "synth_test_density_scale",
                  "test density relative to train");
  synth_flags.add(synth_cmd, "--synth-train-probe", "synth_train_probe",
                  "train a probe model and report disentanglement (0/1)");
  add_train_flags(synth_cmd, synth_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    dccl::RunConfig cfg;
    if (!config_path.empty()) cfg = dccl::parse_config_file(config_path);
    global.apply(cfg);

    if (app.got_subcommand(prepare)) {
      prep_flags.apply(cfg);
      const auto res = dccl::run_prepare(cfg);
      std::printf("run_dir=%s\n", res.run_dir.c_str());
      std::printf("raw_records=%zu\n", res.raw_records);
      std::printf("users=%u items=%u pairs=%zu\n", res.full.num_users, res.full.num_items,
                  res.full.num_pairs());
      if (res.empty) {
        std::fprintf(stderr, "warning: k-core filtering removed every interaction\n");
        return 3;
      }
      return 0;
    }
    if (app.got_subcommand(train_cmd)) {
      train_flags.apply(cfg);
      const auto res = dccl::run_train(cfg);
      std::printf("run_dir=%s\n", res.run_dir.c_str());
      const auto& log = res.result.log;
      std::printf("epochs_run=%u early_stopped=%d\n", res.result.epochs_run,
                  res.result.early_stopped ? 1 : 0);
      if (!log.empty())
        std::printf("final main=%.6f int=%.6f conf=%.6f total=%.6f val_HR@20=%.6f\n",
                    log.back().main_loss, log.back().int_loss, log.back().conf_loss,
                    log.back().total, log.back().val_hr20);
      return 0;
    }
    if (app.got_subcommand(eval_cmd)) {
      eval_flags.apply(cfg);
      const auto res = dccl::run_eval(cfg);
      std::printf("run_dir=%s\n", res.run_dir.c_str());
      print_report_line("test:", res.report);
      return 0;
    }
    if (app.got_subcommand(ood_cmd)) {
      ood_flags.apply(cfg);
      const auto res = dccl::run_ood(cfg);
      std::printf("run_dir=%s\n", res.run_dir.c_str());
      print_report_line("base:", res.sweep.base);
      for (const auto& p : res.sweep.points)
        std::printf("prop=%.3f seed=%llu HR@%u %.4f (x100) degradation=%.4f\n",
                    p.target_proportion, static_cast<unsigned long long>(p.seed), p.report.k,
                    p.report.hr * 100.0, p.rel_hr_degradation);
      return 0;
    }
    if (app.got_subcommand(synth_cmd)) {
      synth_flags.apply(cfg);
      const auto res = dccl::run_synth(cfg);
      std::printf("run_dir=%s\n", res.run_dir.c_str());
      std::printf("train_pairs=%zu test_iid_pairs=%zu test_ood_pairs=%zu\n",
                  res.data.train.num_pairs(), res.data.test_iid.num_pairs(),
                  res.data.test_ood.num_pairs());
      std::printf("count_pop_spearman=%.4f popular_share_iid=%.4f popular_share_ood=%.4f\n",
                  res.count_pop_spearman, res.popular_share_iid, res.popular_share_ood);
      if (res.probe_trained)
        std::printf("conf_pop_corr=%.4f int_pop_corr=%.4f\n", res.conf_pop_corr,
                    res.int_pop_corr);
      return 0;
    }
  } catch (const dccl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dccl/data.hpp"
#include "dccl/eval.hpp"
#include "dccl/synth.hpp"
#include "dccl/trainer.hpp"

namespace dccl {

/// Everything a command can be told, from defaults, a key=value config file,
/// then flag overrides, in that precedence order.
struct RunConfig {
  std::uint64_t seed = 42;  // fans out to train, synth, split, ood seeds

  TrainConfig train;
  SynthConfig synth;
  bool synth_train_probe = true;  // synth command: train a probe model and
                                  // report disentanglement correlations

  std::string input;          // prepare: raw interaction log
  std::string format = "csv";
  std::uint32_t k_core = 10;
  double test_fraction = 0.2;

  std::string dataset_dir;  // train/eval/ood: directory holding train.tsv/test.tsv
  std::string checkpoint;   // eval/ood
  std::string out = "runs";  // output root; runs get timestamped subdirectories
  std::string run_dir;       // when set, outputs go exactly here (no timestamp)

  std::uint32_t k = 20;
  std::vector<double> proportions = {0.5, 0.4, 0.3};
  std::vector<std::uint64_t> ood_seeds = {1, 2, 3};
};

/// Applies one config entry. Unknown keys and unparseable values throw
/// ConfigError.
void apply_key(RunConfig& cfg, const std::string& key, const std::string& value);

/// Parses a flat key=value file ('#' comments, blank lines allowed;
/// duplicate keys rejected) on top of defaults.
RunConfig parse_config_file(const std::string& path);

/// Canonical serialization of every key in a fixed order; runs write this
/// next to their outputs so they can be reproduced exactly.
std::string serialize_config(const RunConfig& cfg);

/// FNV-1a over the canonical serialization.
std::uint64_t config_hash(const RunConfig& cfg);

/// Creates (and returns) the directory this run writes into:
/// cfg.run_dir verbatim when set, else out/<UTC timestamp>-<hash> with a
/// numeric suffix on collision.
std::string make_run_dir(const RunConfig& cfg);

struct PrepareResult {
  std::string run_dir;
  std::size_t raw_records = 0;
  std::size_t users_binarized = 0;
  std::size_t items_binarized = 0;
  InteractionDataset full;  // post k-core
  bool empty = false;       // k-core pruned everything
};

/// load -> binarize -> k-core -> split -> popularity; writes dataset.tsv,
/// train.tsv, test.tsv, popularity.tsv and the resolved config.
PrepareResult run_prepare(const RunConfig& cfg);

struct TrainRunResult {
  std::string run_dir;
  TrainResult result;
};

/// Reads train.tsv/test.tsv from dataset_dir, recomputes popularity from
/// train, and runs the training loop; writes checkpoint.bin,
/// training_log.tsv and the resolved config.
TrainRunResult run_train(const RunConfig& cfg);

struct EvalRunResult {
  std::string run_dir;
  MetricsReport report;
};

/// Loads a checkpoint (propagating first for a LightGCN one) and evaluates
/// on dataset_dir's test set; writes report.txt and metrics.tsv.
EvalRunResult run_eval(const RunConfig& cfg);

struct OodRunResult {
  std::string run_dir;
  OodSweep sweep;
};

/// run_eval plus intervened test sets at each proportion x seed; writes
/// ood_summary.tsv alongside the base report.
OodRunResult run_ood(const RunConfig& cfg);

struct SynthRunResult {
  std::string run_dir;
  SyntheticData data;
  double count_pop_spearman = 0.0;
  double popular_share_iid = 0.0;
  double popular_share_ood = 0.0;
  // Probe model results (when synth_train_probe is on)
  bool probe_trained = false;
  double conf_pop_corr = 0.0;
  double int_pop_corr = 0.0;
};

/// Generates the synthetic world and datasets, writes them in canonical
/// form with the ground-truth sidecar, and (optionally) trains a probe
/// model to report disentanglement correlations.
SynthRunResult run_synth(const RunConfig& cfg);

}  // namespace dccl

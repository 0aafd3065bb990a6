#include "dccl/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "dccl/rng.hpp"

namespace fs = std::filesystem;

namespace dccl {

namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
}

std::uint32_t parse_u32(const std::string& key, const std::string& value) {
  const std::uint64_t v = parse_u64(key, value);
  if (v > 0xffffffffULL) throw ConfigError(key + ": value out of range");
  return static_cast<std::uint32_t>(v);
}

double parse_real(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "1" || value == "true" || value == "on") return true;
  if (value == "0" || value == "false" || value == "off") return false;
  throw ConfigError(key + ": expected a boolean (0/1/true/false), got '" + value + "'");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::stringstream ss(value);
  while (std::getline(ss, item, ',')) parts.push_back(item);
  return parts;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += ",";
    out += parts[i];
  }
  return out;
}

LogFormat parse_format(const std::string& value) {
  if (value == "csv") return LogFormat::kCsv;
  if (value == "tsv") return LogFormat::kTsv;
  throw ConfigError("format: expected csv or tsv, got '" + value + "'");
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

InteractionDataset read_dataset(const std::string& dir, const char* name) {
  if (dir.empty()) throw ConfigError("dataset_dir is required for this command");
  return read_canonical(fs::path(dir) / name);
}

void write_resolved_config(const std::string& run_dir, const RunConfig& cfg) {
  write_text(fs::path(run_dir) / "resolved_config.txt", serialize_config(cfg));
}

}  // namespace

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") {
    cfg.seed = parse_u64(key, value);
    cfg.train.seed = cfg.seed;
    cfg.synth.seed = cfg.seed;
  } else if (key == "dim") {
    cfg.train.dim = parse_u32(key, value);
  } else if (key == "batch_size") {
    cfg.train.batch_size = parse_u32(key, value);
  } else if (key == "learning_rate") {
    cfg.train.learning_rate = parse_real(key, value);
  } else if (key == "alpha") {
    cfg.train.alpha = parse_real(key, value);
  } else if (key == "beta") {
    cfg.train.beta = parse_real(key, value);
  } else if (key == "epochs") {
    cfg.train.epochs = parse_u32(key, value);
  } else if (key == "backbone") {
    if (value == "mf")
      cfg.train.backbone = Backbone::kMf;
    else if (value == "lightgcn")
      cfg.train.backbone = Backbone::kLightGcn;
    else
      throw ConfigError("backbone: expected mf or lightgcn, got '" + value + "'");
  } else if (key == "layers") {
    cfg.train.layers = parse_u32(key, value);
  } else if (key == "loss_mode") {
    if (value == "weighted")
      cfg.train.loss_mode = LossMode::kWeighted;
    else if (value == "literal")
      cfg.train.loss_mode = LossMode::kLiteral;
    else
      throw ConfigError("loss_mode: expected weighted or literal, got '" + value + "'");
  } else if (key == "false_negative_filter") {
    cfg.train.false_negative_filter = parse_bool(key, value);
  } else if (key == "init_scale") {
    cfg.train.init_scale = parse_real(key, value);
  } else if (key == "val_fraction") {
    cfg.train.val_fraction = parse_real(key, value);
  } else if (key == "patience") {
    cfg.train.patience = parse_u32(key, value);
  } else if (key == "input") {
    cfg.input = value;
  } else if (key == "format") {
    parse_format(value);  // validate
    cfg.format = value;
  } else if (key == "k_core") {
    cfg.k_core = parse_u32(key, value);
  } else if (key == "test_fraction") {
    cfg.test_fraction = parse_real(key, value);
  } else if (key == "dataset_dir") {
    cfg.dataset_dir = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "out") {
    cfg.out = value;
  } else if (key == "run_dir") {
    cfg.run_dir = value;
  } else if (key == "k") {
    cfg.k = parse_u32(key, value);
  } else if (key == "proportions") {
    cfg.proportions.clear();
    for (const auto& p : split_list(value)) cfg.proportions.push_back(parse_real(key, p));
    if (cfg.proportions.empty()) throw ConfigError("proportions: empty list");
  } else if (key == "ood_seeds") {
    cfg.ood_seeds.clear();
    for (const auto& s : split_list(value)) cfg.ood_seeds.push_back(parse_u64(key, s));
    if (cfg.ood_seeds.empty()) throw ConfigError("ood_seeds: empty list");
  } else if (key == "synth_users") {
    cfg.synth.num_users = parse_u32(key, value);
  } else if (key == "synth_items") {
    cfg.synth.num_items = parse_u32(key, value);
  } else if (key == "synth_latent_dim") {
    cfg.synth.latent_dim = parse_u32(key, value);
  } else if (key == "synth_density") {
    cfg.synth.density = parse_real(key, value);
  } else if (key == "synth_pop_exponent") {
    cfg.synth.pop_exponent = parse_real(key, value);
  } else if (key == "synth_conformity_mix") {
    cfg.synth.conformity_mix = parse_real(key, value);
  } else if (key == "synth_test_density_scale") {
    cfg.synth.test_density_scale = parse_real(key, value);
  } else if (key == "synth_train_probe") {
    cfg.synth_train_probe = parse_bool(key, value);
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    const auto vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    if (std::find(seen.begin(), seen.end(), key) != seen.end())
      throw ConfigError(path + ":" + std::to_string(lineno) + ": duplicate key " + key);
    seen.push_back(key);
    try {
      apply_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::ostringstream out;
  out << "seed=" << cfg.seed << "\n";
  out << "dim=" << cfg.train.dim << "\n";
  out << "batch_size=" << cfg.train.batch_size << "\n";
  out << "learning_rate=" << format_g17(cfg.train.learning_rate) << "\n";
  out << "alpha=" << format_g17(cfg.train.alpha) << "\n";
  out << "beta=" << format_g17(cfg.train.beta) << "\n";
  out << "epochs=" << cfg.train.epochs << "\n";
  out << "backbone=" << (cfg.train.backbone == Backbone::kMf ? "mf" : "lightgcn") << "\n";
  out << "layers=" << cfg.train.layers << "\n";
  out << "loss_mode=" << (cfg.train.loss_mode == LossMode::kWeighted ? "weighted" : "literal")
      << "\n";
  out << "false_negative_filter=" << (cfg.train.false_negative_filter ? 1 : 0) << "\n";
  out << "init_scale=" << format_g17(cfg.train.init_scale) << "\n";
  out << "val_fraction=" << format_g17(cfg.train.val_fraction) << "\n";
  out << "patience=" << cfg.train.patience << "\n";
  out << "input=" << cfg.input << "\n";
  out << "format=" << cfg.format << "\n";
  out << "k_core=" << cfg.k_core << "\n";
  out << "test_fraction=" << format_g17(cfg.test_fraction) << "\n";
  out << "dataset_dir=" << cfg.dataset_dir << "\n";
  out << "checkpoint=" << cfg.checkpoint << "\n";
  out << "out=" << cfg.out << "\n";
  out << "k=" << cfg.k << "\n";
  {
    std::vector<std::string> parts;
    for (double p : cfg.proportions) parts.push_back(format_g17(p));
    out << "proportions=" << join(parts) << "\n";
  }
  {
    std::vector<std::string> parts;
    for (std::uint64_t s : cfg.ood_seeds) parts.push_back(std::to_string(s));
    out << "ood_seeds=" << join(parts) << "\n";
  }
  out << "synth_users=" << cfg.synth.num_users << "\n";
  out << "synth_items=" << cfg.synth.num_items << "\n";
  out << "synth_latent_dim=" << cfg.synth.latent_dim << "\n";
  out << "synth_density=" << format_g17(cfg.synth.density) << "\n";
  out << "synth_pop_exponent=" << format_g17(cfg.synth.pop_exponent) << "\n";
  out << "synth_conformity_mix=" << format_g17(cfg.synth.conformity_mix) << "\n";
  out << "synth_test_density_scale=" << format_g17(cfg.synth.test_density_scale) << "\n";
  out << "synth_train_probe=" << (cfg.synth_train_probe ? 1 : 0) << "\n";
  return out.str();
}

std::uint64_t config_hash(const RunConfig& cfg) { return rng::fnv1a64(serialize_config(cfg)); }

std::string make_run_dir(const RunConfig& cfg) {
  if (!cfg.run_dir.empty()) {
    fs::create_directories(cfg.run_dir);
    return cfg.run_dir;
  }
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  char hash[24];
  std::snprintf(hash, sizeof(hash), "%016llx",
                static_cast<unsigned long long>(config_hash(cfg)));
  std::string base = (fs::path(cfg.out) / (std::string(stamp) + "-" + hash)).string();
  std::string dir = base;
  for (int suffix = 2; fs::exists(dir); ++suffix) dir = base + "-" + std::to_string(suffix);
  fs::create_directories(dir);
  return dir;
}

PrepareResult run_prepare(const RunConfig& cfg) {
  if (cfg.input.empty()) throw ConfigError("prepare: input is required");
  if (!(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0))
    throw ConfigError("prepare: test_fraction must be in (0, 1)");
  if (cfg.k_core < 1) throw ConfigError("prepare: k_core must be >= 1");

  PrepareResult res;
  const RawInteractions raw = load_interactions(cfg.input, parse_format(cfg.format));
  res.raw_records = raw.records.size();
  const InteractionDataset binarized = binarize(raw);
  res.users_binarized = binarized.num_users;
  res.items_binarized = binarized.num_items;
  res.full = k_core_filter(binarized, cfg.k_core);

  res.run_dir = make_run_dir(cfg);
  write_resolved_config(res.run_dir, cfg);
  write_canonical(fs::path(res.run_dir) / "dataset.tsv", res.full);
  if (res.full.empty()) {
    res.empty = true;
    return res;
  }

  const SplitDataset split_ds = split(res.full, cfg.test_fraction, cfg.seed);
  const PopularityStats stats = compute_popularity(split_ds.train);
  write_canonical(fs::path(res.run_dir) / "train.tsv", split_ds.train);
  write_canonical(fs::path(res.run_dir) / "test.tsv", split_ds.test);
  write_popularity(fs::path(res.run_dir) / "popularity.tsv", stats);

  std::ostringstream summary;
  summary << "users=" << res.full.num_users << "\n";
  summary << "items=" << res.full.num_items << "\n";
  summary << "pairs=" << res.full.num_pairs() << "\n";
  const double denom =
      static_cast<double>(res.full.num_users) * static_cast<double>(res.full.num_items);
  summary << "sparsity=" << format_g17(static_cast<double>(res.full.num_pairs()) / denom) << "\n";
  summary << "train_pairs=" << split_ds.train.num_pairs() << "\n";
  summary << "test_pairs=" << split_ds.test.num_pairs() << "\n";
  write_text(fs::path(res.run_dir) / "prepare_summary.txt", summary.str());
  return res;
}

TrainRunResult run_train(const RunConfig& cfg) {
  SplitDataset split_ds;
  split_ds.train = read_dataset(cfg.dataset_dir, "train.tsv");
  split_ds.test = read_dataset(cfg.dataset_dir, "test.tsv");
  split_ds.seed = cfg.seed;
  const PopularityStats stats = compute_popularity(split_ds.train);

  TrainRunResult res;
  res.run_dir = make_run_dir(cfg);
  write_resolved_config(res.run_dir, cfg);
  res.result = train(cfg.train, split_ds, stats, res.run_dir);
  return res;
}

namespace {

struct LoadedModel {
  DisentangledEmbeddings tables;  // propagated when the checkpoint is LightGCN
  InteractionDataset train;
  InteractionDataset test;
  PopularityStats stats;
};

LoadedModel load_for_eval(const RunConfig& cfg, const char* test_name) {
  if (cfg.checkpoint.empty()) throw ConfigError("checkpoint is required for this command");
  LoadedModel m;
  auto [emb, meta] = load_checkpoint(cfg.checkpoint);
  m.train = read_dataset(cfg.dataset_dir, "train.tsv");
  m.test = read_dataset(cfg.dataset_dir, test_name);
  m.stats = compute_popularity(m.train);
  if (meta.backbone == Backbone::kLightGcn) {
    const NormAdjacency adj = build_norm_adjacency(m.train);
    m.tables = lightgcn_propagate(emb, adj, meta.layers);
  } else {
    m.tables = std::move(emb);
  }
  return m;
}

}  // namespace

EvalRunResult run_eval(const RunConfig& cfg) {
  const LoadedModel m = load_for_eval(cfg, "test.tsv");
  EvalRunResult res;
  res.report = evaluate(m.tables, m.test, m.train, m.stats, cfg.k);
  res.report.config_hash = config_hash(cfg);
  res.report.seed = cfg.seed;
  res.run_dir = make_run_dir(cfg);
  write_resolved_config(res.run_dir, cfg);
  write_report((fs::path(res.run_dir) / "report.txt").string(), res.report);
  write_flat_metrics((fs::path(res.run_dir) / "metrics.tsv").string(), res.report);
  return res;
}

OodRunResult run_ood(const RunConfig& cfg) {
  const LoadedModel m = load_for_eval(cfg, "test.tsv");
  SplitDataset split_ds;
  split_ds.train = m.train;
  split_ds.test = m.test;
  split_ds.seed = cfg.seed;

  OodRunResult res;
  res.sweep = ood_sweep(m.tables, split_ds, m.stats, cfg.proportions, cfg.ood_seeds, cfg.k);
  res.sweep.base.config_hash = config_hash(cfg);
  res.sweep.base.seed = cfg.seed;
  res.run_dir = make_run_dir(cfg);
  write_resolved_config(res.run_dir, cfg);
  write_report((fs::path(res.run_dir) / "report.txt").string(), res.sweep.base);
  write_flat_metrics((fs::path(res.run_dir) / "metrics.tsv").string(), res.sweep.base);
  write_ood_summary((fs::path(res.run_dir) / "ood_summary.tsv").string(), res.sweep);
  return res;
}

SynthRunResult run_synth(const RunConfig& cfg) {
  SynthRunResult res;
  res.data = generate_synthetic(cfg.synth);
  res.run_dir = make_run_dir(cfg);
  write_resolved_config(res.run_dir, cfg);
  write_canonical(fs::path(res.run_dir) / "train.tsv", res.data.train);
  write_canonical(fs::path(res.run_dir) / "test_iid.tsv", res.data.test_iid);
  write_canonical(fs::path(res.run_dir) / "test_ood.tsv", res.data.test_ood);
  write_ground_truth((fs::path(res.run_dir) / "ground_truth.tsv").string(), res.data.world);

  const PopularityStats stats = compute_popularity(res.data.train);
  write_popularity(fs::path(res.run_dir) / "popularity.tsv", stats);

  std::vector<double> counts(stats.counts.begin(), stats.counts.end());
  res.count_pop_spearman = spearman(counts, res.data.world.item_pop);
  const auto popular_share = [&stats](const InteractionDataset& ds) {
    if (ds.pairs.empty()) return 0.0;
    std::size_t pop = 0;
    for (const auto& [u, i] : ds.pairs) pop += stats.is_popular[i] ? 1 : 0;
    return static_cast<double>(pop) / static_cast<double>(ds.pairs.size());
  };
  res.popular_share_iid = popular_share(res.data.test_iid);
  res.popular_share_ood = popular_share(res.data.test_ood);

  if (cfg.synth_train_probe) {
    SplitDataset split_ds;
    split_ds.train = res.data.train;
    split_ds.test = res.data.test_iid;
    split_ds.seed = cfg.seed;
    const TrainResult tr = train(cfg.train, split_ds, stats, res.run_dir);
    const auto [conf_corr, int_corr] = disentanglement_score(tr.emb, res.data.world);
    res.probe_trained = true;
    res.conf_pop_corr = conf_corr;
    res.int_pop_corr = int_corr;
  }

  std::ostringstream report;
  report << "users=" << cfg.synth.num_users << "\n";
  report << "items=" << cfg.synth.num_items << "\n";
  report << "train_pairs=" << res.data.train.num_pairs() << "\n";
  report << "test_iid_pairs=" << res.data.test_iid.num_pairs() << "\n";
  report << "test_ood_pairs=" << res.data.test_ood.num_pairs() << "\n";
  report << "count_pop_spearman=" << format_g17(res.count_pop_spearman) << "\n";
  report << "popular_share_iid=" << format_g17(res.popular_share_iid) << "\n";
  report << "popular_share_ood=" << format_g17(res.popular_share_ood) << "\n";
  if (res.probe_trained) {
    report << "conf_pop_corr=" << format_g17(res.conf_pop_corr) << "\n";
    report << "int_pop_corr=" << format_g17(res.int_pop_corr) << "\n";
  }
  write_text(fs::path(res.run_dir) / "oracle_report.txt", report.str());
  return res;
}

}  // namespace dccl

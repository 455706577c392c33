#pragma once

#include "autoadapt/evaluate.hpp"
#include "autoadapt/evolution.hpp"
#include "autoadapt/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

namespace autoadapt {

namespace fs = std::filesystem;

/// Bad invocation, invalid configuration, or missing inputs (exit code 2).
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t global_seed = 1;
  std::size_t workers = 1;
  std::string out = "autoadapt_out";
  DatasetConfig dataset;
  bool dataset_seed_explicit = false;
  TrainConfig proxy = TrainConfig::proxy();
  TrainConfig pretrain = TrainConfig::pretrain();
  TrainConfig retrain = TrainConfig::retrain();
  EvolutionConfig evolution;
  MetricConfig metrics;
  std::string dataset_dir; // empty: <out>/dataset
  std::string seed_dir;    // empty: <out>/pretrain
  std::string search_dir;  // empty: <out>/search
  std::vector<Genome> probe_genomes; // empty: default Table-5-style list
  std::size_t correlate_min = 30;
  bool retrain_seed_baseline = true;

  fs::path out_path() const { return fs::path(out); }
  fs::path dataset_path() const { return dataset_dir.empty() ? out_path() / "dataset" : fs::path(dataset_dir); }
  fs::path seed_path() const { return seed_dir.empty() ? out_path() / "pretrain" : fs::path(seed_dir); }
  fs::path search_path() const { return search_dir.empty() ? out_path() / "search" : fs::path(search_dir); }

  void set_seed(std::uint64_t s) {
    global_seed = s;
    if (!dataset_seed_explicit)
      dataset.seed = s;
  }

  void validate() const {
    dataset.validate();
    proxy.validate("train.proxy");
    pretrain.validate("train.pretrain");
    retrain.validate("train.retrain");
    evolution.validate();
    metrics.validate();
    if (workers < 1)
      throw ConfigError("workers must be >= 1");
    if (correlate_min < 3)
      throw ConfigError("correlate.min_candidates must be >= 3");
  }
};

inline nlohmann::ordered_json to_json(const RunConfig &c) {
  nlohmann::ordered_json probe = nlohmann::ordered_json::array();
  for (const auto &g : c.probe_genomes)
    probe.push_back(to_json(g));
  return {{"global_seed", c.global_seed},
          {"workers", c.workers},
          {"out", c.out},
          {"dataset", to_json(c.dataset)},
          {"train", {{"proxy", to_json(c.proxy)}, {"pretrain", to_json(c.pretrain)}, {"retrain", to_json(c.retrain)}}},
          {"evolution", to_json(c.evolution)},
          {"metrics", to_json(c.metrics)},
          {"paths", {{"dataset", c.dataset_path().string()}, {"seed", c.seed_path().string()}, {"search", c.search_path().string()}}},
          {"probe", {{"genomes", probe}}},
          {"correlate", {{"min_candidates", c.correlate_min}}},
          {"retrain_options", {{"seed_baseline", c.retrain_seed_baseline}}}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json &j, std::initializer_list<const char *> known,
                           const std::string &section) {
  if (!j.is_object())
    throw ConfigError((section.empty() ? std::string("config") : section) + " must be a JSON object");
  std::set<std::string> k(known.begin(), known.end());
  for (const auto &[key, _] : j.items())
    if (!k.count(key))
      throw ConfigError("unknown config field '" + (section.empty() ? key : section + "." + key) + "'");
}

} // namespace detail

inline RunConfig run_config_from_json(const nlohmann::json &j) {
  RunConfig c;
  detail::reject_unknown(j, {"global_seed", "workers", "out", "dataset", "train", "evolution", "metrics",
                             "paths", "probe", "correlate", "retrain_options"}, "");
  auto get = [](const nlohmann::json &o, const char *key, auto &dst, const std::string &name) {
    if (o.contains(key)) {
      try {
        o.at(key).get_to(dst);
      } catch (const nlohmann::json::exception &) {
        throw ConfigError(name + " has the wrong type");
      }
    }
  };
  get(j, "global_seed", c.global_seed, "global_seed");
  get(j, "workers", c.workers, "workers");
  get(j, "out", c.out, "out");
  c.dataset.seed = c.global_seed;
  if (j.contains("dataset")) {
    const auto &d = j.at("dataset");
    detail::reject_unknown(d, {"image_size", "num_classes", "n_source", "n_target", "shift", "seed", "adapt_fraction"},
                           "dataset");
    c.dataset_seed_explicit = d.contains("seed");
    c.dataset = dataset_config_from_json(d, c.dataset);
  }
  if (j.contains("train")) {
    const auto &t = j.at("train");
    detail::reject_unknown(t, {"proxy", "pretrain", "retrain"}, "train");
    const std::initializer_list<const char *> keys{"iterations", "lr_gen",     "lr_disc",        "poly_power",
                                                   "momentum",   "weight_decay", "lambda_adv",   "lambda_aux",
                                                   "aux_seg_weight", "adversarial_input", "crop_ratio"};
    if (t.contains("proxy")) {
      detail::reject_unknown(t.at("proxy"), keys, "train.proxy");
      c.proxy = train_config_from_json(t.at("proxy"), c.proxy, "train.proxy");
    }
    if (t.contains("pretrain")) {
      detail::reject_unknown(t.at("pretrain"), keys, "train.pretrain");
      c.pretrain = train_config_from_json(t.at("pretrain"), c.pretrain, "train.pretrain");
    }
    if (t.contains("retrain")) {
      detail::reject_unknown(t.at("retrain"), keys, "train.retrain");
      c.retrain = train_config_from_json(t.at("retrain"), c.retrain, "train.retrain");
    }
  }
  if (j.contains("evolution")) {
    detail::reject_unknown(j.at("evolution"), {"n_sample", "keep", "capacity", "fraction", "patience", "max_cycles",
                                               "selection", "remap_from"}, "evolution");
    c.evolution = evolution_config_from_json(j.at("evolution"), c.evolution);
  }
  if (j.contains("metrics")) {
    detail::reject_unknown(j.at("metrics"), {"lambda", "min_region", "bins", "blur_radius", "mmd_cap"}, "metrics");
    c.metrics = metric_config_from_json(j.at("metrics"), c.metrics);
  }
  if (j.contains("paths")) {
    const auto &p = j.at("paths");
    detail::reject_unknown(p, {"dataset", "seed", "search"}, "paths");
    get(p, "dataset", c.dataset_dir, "paths.dataset");
    get(p, "seed", c.seed_dir, "paths.seed");
    get(p, "search", c.search_dir, "paths.search");
  }
  if (j.contains("probe")) {
    const auto &p = j.at("probe");
    detail::reject_unknown(p, {"genomes"}, "probe");
    if (p.contains("genomes")) {
      const auto &list = p.at("genomes");
      if (!list.is_array())
        throw ConfigError("probe.genomes must be an array");
      for (std::size_t i = 0; i < list.size(); ++i) {
        try {
          c.probe_genomes.push_back(genome_from_json(list[i]));
        } catch (const std::exception &e) {
          throw ConfigError("probe.genomes[" + std::to_string(i) + "]: " + e.what());
        }
      }
    }
  }
  if (j.contains("correlate")) {
    detail::reject_unknown(j.at("correlate"), {"min_candidates"}, "correlate");
    get(j.at("correlate"), "min_candidates", c.correlate_min, "correlate.min_candidates");
  }
  if (j.contains("retrain_options")) {
    detail::reject_unknown(j.at("retrain_options"), {"seed_baseline"}, "retrain_options");
    get(j.at("retrain_options"), "seed_baseline", c.retrain_seed_baseline, "retrain_options.seed_baseline");
  }
  c.validate();
  return c;
}

inline RunConfig load_run_config(const fs::path &path) {
  if (!fs::exists(path))
    throw UsageError("config file '" + path.string() + "' does not exist");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::read_file_bytes(path.string()));
  } catch (const nlohmann::json::parse_error &e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

inline std::size_t resolve_workers(std::size_t configured) {
  if (const char *env = std::getenv("AUTOADAPT_WORKERS")) {
    char *end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1)
      throw ConfigError("AUTOADAPT_WORKERS must be a positive integer, got '" + std::string(env) + "'");
    return static_cast<std::size_t>(v);
  }
  return configured;
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text(const fs::path &p, const std::string &s) {
  fs::create_directories(p.parent_path());
  write_file_bytes(p.string(), s);
}

inline void write_json(const fs::path &p, const nlohmann::ordered_json &j) { write_text(p, j.dump(2) + "\n"); }

inline void echo_config(const fs::path &dir, const RunConfig &c) { write_json(dir / "config.json", to_json(c)); }

inline std::string jsonl(const std::vector<StepLog> &log) {
  std::string s;
  for (const auto &r : log)
    s += to_json(r).dump() + "\n";
  return s;
}

inline std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(17) << v;
  return o.str();
}

inline Dataset open_dataset(const RunConfig &c) {
  const fs::path p = c.dataset_path();
  if (!fs::exists(p / "manifest.json"))
    throw UsageError("dataset not found at '" + p.string() + "' (run `autoadapt dataset` first)");
  return Dataset::load(p, true);
}

inline ModelState open_seed(const RunConfig &c) {
  const fs::path p = c.seed_path() / "checkpoint";
  if (!fs::exists(p / "manifest.json"))
    throw UsageError("seed checkpoint not found at '" + p.string() + "' (run `autoadapt pretrain` first)");
  return load_checkpoint(p);
}

inline std::uint64_t remap_seed(std::uint64_t candidate) { return derive_seed(candidate, 0x72656d6170ULL); }
inline std::uint64_t retrain_seed(std::uint64_t candidate) { return derive_seed(candidate, 0x726574726eULL); }
inline constexpr std::uint64_t kSeedInitTag = 0x696e6974ULL;
inline constexpr std::uint64_t kEvolutionTag = 0x65766f6cULL;

} // namespace detail

/// Builds a child from a checkpoint, adapts it at the given budget, and returns the model.
inline AdaptedModel adapt_candidate(const ModelState &from, const Genome &g, const Dataset &data,
                                    const TrainConfig &cfg, std::uint64_t global_seed, bool retrain = false) {
  const std::uint64_t cs = candidate_seed(global_seed, g);
  Model parent = restore(from);
  Rng rng(detail::remap_seed(cs));
  Model child = remap_parameters(parent, g, rng);
  try {
    return adapt(std::move(child), data, cfg, retrain ? detail::retrain_seed(cs) : cs);
  } catch (const std::exception &e) {
    throw NumericError("candidate " + hex64(genome_hash(g)) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json cmd_dataset(const RunConfig &c) {
  const fs::path dir = c.dataset_path();
  GeneratedDataset g = generate_in_memory(c.dataset);
  auto manifest = write_dataset(g, dir);
  detail::echo_config(dir, c);
  return manifest;
}

struct PretrainOutcome {
  AdaptedModel model;
  double source_miou = 0.0;
  std::uint64_t target_label_reads = 0;
};

inline PretrainOutcome run_pretrain(const RunConfig &c, const Dataset &data) {
  Rng init(derive_seed(c.global_seed, detail::kSeedInitTag));
  Model m = Model::build(seed_genome(), data.num_classes(), init);
  PretrainOutcome o{pretrain_seed(std::move(m), data, c.pretrain, candidate_seed(c.global_seed, seed_genome())), 0.0, 0};
  o.source_miou = evaluate_source_miou(o.model.model, data, data.source_size()).mean;
  o.target_label_reads = data.target_label_reads();
  return o;
}

inline PretrainOutcome cmd_pretrain(const RunConfig &c) {
  Dataset data = detail::open_dataset(c);
  PretrainOutcome o = run_pretrain(c, data);
  const fs::path dir = c.seed_path();
  save_checkpoint(snapshot(o.model.model, o.model.log.size()), dir / "checkpoint");
  detail::write_text(dir / "train_log.jsonl", detail::jsonl(o.model.log));
  nlohmann::ordered_json s{{"iterations", o.model.log.size()},
                           {"final_loss", o.model.log.empty() ? nlohmann::ordered_json(nullptr)
                                                              : nlohmann::ordered_json(o.model.log.back().loss_seg)},
                           {"source_miou", o.source_miou},
                           {"target_label_reads", o.target_label_reads}};
  detail::write_json(dir / "summary.json", s);
  detail::echo_config(dir, c);
  return o;
}

struct SearchOutcome {
  SearchResult result;
  MetricReport seed_reference;
  std::uint64_t target_label_reads = 0;
};

inline std::string metrics_csv_header() { return "genome_hash,mmd,mean_ent,reent,macs,joint,miou\n"; }

inline std::string metrics_csv_row(const Genome &g, const MetricReport &r) {
  return hex64(genome_hash(g)) + "," + detail::fmt(r.mmd) + "," + detail::fmt(r.mean_ent) + "," +
         detail::fmt(r.reent) + "," + std::to_string(r.macs) + "," + detail::fmt(r.joint) + "," +
         (r.miou ? detail::fmt(*r.miou) : std::string()) + "\n";
}

/// Runs the search against an already-open dataset and seed state, writing all outputs
/// under `dir`. Checkpoints and logs are written by the calling thread only.
inline SearchOutcome run_search_in(const RunConfig &c, const Dataset &data, const ModelState &seed,
                                   const fs::path &dir, std::size_t workers) {
  fs::create_directories(dir);
  const EvalContext ctx(data, c.metrics);
  std::mutex mu;
  std::map<std::string, std::pair<ModelState, std::vector<StepLog>>> pending;

  auto evaluate_one = [&](const Genome &g, const ModelState &from, const std::string &name) {
    AdaptedModel a = adapt_candidate(from, g, data, c.proxy, c.global_seed);
    MetricReport r = evaluate_label_free(a.model, ctx);
    std::lock_guard<std::mutex> lock(mu);
    pending[name] = {snapshot(a.model, a.log.size()), std::move(a.log)};
    return r;
  };
  auto flush = [&](const std::string &name) {
    std::lock_guard<std::mutex> lock(mu);
    auto it = pending.find(name);
    if (it == pending.end())
      return;
    save_checkpoint(it->second.first, dir / name);
    detail::write_text(dir / name / "train_log.jsonl", detail::jsonl(it->second.second));
    pending.erase(it);
  };

  Evaluator eval = [&](const EvalRequest &req) -> EvalResult {
    char name[96];
    std::snprintf(name, sizeof name, "candidates/c%04zu_s%03zu_%s", req.cycle, req.slot,
                  hex64(genome_hash(req.genome)).c_str());
    if (req.parent && c.evolution.remap_from == RemapFrom::parent) {
      const ModelState from = load_checkpoint(dir / req.parent->checkpoint);
      return {evaluate_one(req.genome, from, name), name};
    }
    return {evaluate_one(req.genome, seed, name), name};
  };

  std::ofstream hist(dir / "history.jsonl", std::ios::binary | std::ios::trunc);
  std::string csv = metrics_csv_header();
  SearchState st(c.evolution, SearchSpace{}, derive_seed(c.global_seed, detail::kEvolutionTag), workers);
  SearchOutcome out;
  out.result = run_search(st, eval, [&](const HistoryRecord &h) {
    if (!h.checkpoint.empty())
      flush(h.checkpoint);
    hist << to_json(h).dump() << "\n";
    hist.flush();
    if (h.report)
      csv += metrics_csv_row(h.genome, *h.report);
  });
  hist.close();
  detail::write_text(dir / "metrics.csv", csv);

  out.seed_reference = evaluate_one(seed_genome(), seed, "reference/seed");
  flush("reference/seed");
  out.target_label_reads = data.target_label_reads();

  const Individual &b = out.result.best;
  detail::write_json(dir / "best.json", {{"genome", to_json(b.genome)},
                                         {"genome_hash", hex64(genome_hash(b.genome))},
                                         {"checkpoint", b.checkpoint},
                                         {"cycle", b.birth_cycle},
                                         {"report", to_json(b.report)}});
  detail::write_json(dir / "summary.json",
                     {{"evaluated", out.result.history.size()},
                      {"cycles_run", out.result.cycles_run},
                      {"early_stopped", out.result.early_stopped},
                      {"best_joint", b.report.joint},
                      {"seed_reference", to_json(out.seed_reference)},
                      {"target_label_reads", out.target_label_reads}});
  detail::echo_config(dir, c);
  return out;
}

inline SearchOutcome cmd_search(const RunConfig &c) {
  Dataset data = detail::open_dataset(c);
  ModelState seed = detail::open_seed(c);
  return run_search_in(c, data, seed, c.search_path(), resolve_workers(c.workers));
}

struct RetrainEntry {
  Genome genome;
  MetricReport report;
  double pre_retrain_miou = 0.0;
  double miou = 0.0;
};

struct RetrainOutcome {
  RetrainEntry best;
  std::optional<RetrainEntry> seed;
};

inline Genome read_best_genome(const fs::path &search_dir) {
  const fs::path p = search_dir / "best.json";
  if (!fs::exists(p))
    throw UsageError("best.json not found at '" + p.string() + "' (run `autoadapt search` first)");
  const auto j = nlohmann::json::parse(detail::read_file_bytes(p.string()));
  try {
    Genome g = genome_from_json(j.at("genome"));
    validate(g);
    return g;
  } catch (const std::exception &e) {
    throw UsageError("best.json holds an invalid genome: " + std::string(e.what()));
  }
}

/// Adapts `g` from the seed checkpoint at the retrain budget and reports target mIoU.
/// This is one of the two places where target evaluation labels are unlocked.
inline RetrainEntry retrain_one(const RunConfig &c, const Dataset &data, const ModelState &seed, const Genome &g,
                                const fs::path &dir) {
  const EvalContext ctx(data, c.metrics);
  RetrainEntry e{g, {}, 0.0, 0.0};
  {
    Model parent = restore(seed);
    Rng rng(detail::remap_seed(candidate_seed(c.global_seed, g)));
    Model before = remap_parameters(parent, g, rng);
    e.pre_retrain_miou = evaluate_target_miou(before, data, data.unlock_eval_labels()).mean;
  }
  AdaptedModel a = adapt_candidate(seed, g, data, c.retrain, c.global_seed, true);
  e.report = evaluate_label_free(a.model, ctx);
  e.miou = evaluate_target_miou(a.model, data, data.unlock_eval_labels()).mean;
  e.report.miou = e.miou;
  save_checkpoint(snapshot(a.model, a.log.size()), dir / "checkpoint");
  detail::write_text(dir / "train_log.jsonl", detail::jsonl(a.log));
  return e;
}

inline nlohmann::ordered_json to_json(const RetrainEntry &e) {
  return {{"genome", to_json(e.genome)},
          {"genome_hash", hex64(genome_hash(e.genome))},
          {"pre_retrain_miou", e.pre_retrain_miou},
          {"miou", e.miou},
          {"report", to_json(e.report)}};
}

inline RetrainOutcome run_retrain(const RunConfig &c, const Dataset &data, const ModelState &seed,
                                  const Genome &best, const fs::path &dir) {
  RetrainOutcome o;
  o.best = retrain_one(c, data, seed, best, dir / "best");
  if (c.retrain_seed_baseline)
    o.seed = retrain_one(c, data, seed, seed_genome(), dir / "seed");
  nlohmann::ordered_json s{{"best", to_json(o.best)}};
  if (o.seed) {
    s["seed"] = to_json(*o.seed);
    s["miou_gain"] = o.best.miou - o.seed->miou;
  }
  detail::write_json(dir / "summary.json", s);
  detail::echo_config(dir, c);
  return o;
}

inline RetrainOutcome cmd_retrain(const RunConfig &c) {
  const Genome best = read_best_genome(c.search_path());
  Dataset data = detail::open_dataset(c);
  ModelState seed = detail::open_seed(c);
  return run_retrain(c, data, seed, best, c.out_path() / "retrain");
}

// ---------------------------------------------------------------------------
// Correlation study
// ---------------------------------------------------------------------------

struct ScoredCandidate {
  std::string genome_hash;
  MetricReport report; // miou filled
};

struct CorrelationReport {
  std::size_t n = 0;
  double rho_mmd = 0.0, rho_mean_ent = 0.0, rho_reent = 0.0, rho_joint = 0.0;
};

inline CorrelationReport correlate(const std::vector<ScoredCandidate> &cands) {
  std::vector<double> mmd, ent, re, joint, miou;
  for (const auto &s : cands) {
    if (!s.report.miou)
      throw std::invalid_argument("correlate: candidate " + s.genome_hash + " has no mIoU");
    mmd.push_back(s.report.mmd);
    ent.push_back(s.report.mean_ent);
    re.push_back(s.report.reent);
    joint.push_back(s.report.joint);
    miou.push_back(*s.report.miou);
  }
  auto rho = [&](const std::vector<double> &x, const char *name) {
    try {
      return spearman(x, miou);
    } catch (const ConstantInputError &e) {
      throw ConstantInputError(std::string("correlation with ") + name + " is undefined: " + e.what() +
                               " (candidates need distinct scores; train longer or evaluate more candidates)");
    }
  };
  return {cands.size(), rho(mmd, "mmd"), rho(ent, "mean_ent"), rho(re, "reent"), rho(joint, "joint")};
}

inline nlohmann::ordered_json to_json(const CorrelationReport &r) {
  return {{"n", r.n},
          {"spearman", {{"mmd", r.rho_mmd}, {"mean_ent", r.rho_mean_ent}, {"reent", r.rho_reent}, {"joint", r.rho_joint}}}};
}

/// Reads history.jsonl, computes target-eval mIoU for every trained candidate, and
/// correlates each label-free score with it. Target labels are unlocked here.
inline std::pair<CorrelationReport, std::vector<ScoredCandidate>>
run_correlate(const RunConfig &c, const Dataset &data, const fs::path &search_dir, const fs::path &dir) {
  const fs::path hp = search_dir / "history.jsonl";
  if (!fs::exists(hp))
    throw UsageError("history.jsonl not found at '" + hp.string() + "' (run `autoadapt search` first)");
  std::ifstream in(hp);
  std::vector<std::pair<std::string, MetricReport>> rows;
  std::vector<std::string> ckpts;
  for (std::string line; std::getline(in, line);) {
    if (line.empty())
      continue;
    const auto j = nlohmann::json::parse(line);
    if (j.at("status") != "ok" || j.at("checkpoint").get<std::string>().empty())
      continue;
    MetricReport r;
    r.mmd = j.at("mmd").get<double>();
    r.mean_ent = j.at("mean_ent").get<double>();
    r.reent = j.at("reent").get<double>();
    r.macs = j.at("macs").get<std::uint64_t>();
    r.macs_norm = j.at("macs_norm").get<double>();
    r.joint = j.at("joint").get<double>();
    rows.emplace_back(j.at("genome_hash").get<std::string>(), r);
    ckpts.push_back(j.at("checkpoint").get<std::string>());
  }
  if (rows.size() < c.correlate_min)
    throw UsageError("correlate needs at least " + std::to_string(c.correlate_min) + " trained candidates, history has " +
                     std::to_string(rows.size()));
  const auto labels = data.unlock_eval_labels();
  std::vector<ScoredCandidate> cands;
  std::string csv = metrics_csv_header();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    Model m = restore(load_checkpoint(search_dir / ckpts[i]));
    rows[i].second.miou = evaluate_target_miou(m, data, labels).mean;
    cands.push_back({rows[i].first, rows[i].second});
    csv += metrics_csv_row(m.genome(), rows[i].second);
  }
  detail::write_text(dir / "candidates.csv", csv);
  CorrelationReport rep = correlate(cands);
  detail::write_json(dir / "summary.json", to_json(rep));
  detail::echo_config(dir, c);
  return {rep, cands};
}

inline CorrelationReport cmd_correlate(const RunConfig &c) {
  Dataset data = detail::open_dataset(c);
  return run_correlate(c, data, c.search_path(), c.out_path() / "correlate").first;
}

// ---------------------------------------------------------------------------
// Architecture probes
// ---------------------------------------------------------------------------

struct ProbeRow {
  std::string name;
  Genome genome;
  MetricReport report;
  std::uint64_t params = 0;
  int edit_distance = 0;
};

/// Seed plus the single-change variants of the architecture comparison table.
inline std::vector<std::pair<std::string, Genome>> default_probe_genomes() {
  std::vector<std::pair<std::string, Genome>> out;
  const Genome s = seed_genome();
  out.emplace_back("seed", s);
  Genome a1 = s;
  a1.head = HeadType::spatial_attention;
  out.emplace_back("attention_head", a1);
  Genome a2 = s;
  a2.head = HeadType::low_level;
  out.emplace_back("low_level_head", a2);
  Genome a3 = s;
  a3.stages[2].se_enabled = true;
  out.emplace_back("se_stage3", a3);
  Genome a4 = s;
  a4.aspp_variant = 1;
  out.emplace_back("aspp_6_18_24_36", a4);
  Genome a5 = s;
  a5.stages[0].num_blocks = 3;
  out.emplace_back("stage1_3_blocks", a5);
  return out;
}

inline std::vector<ProbeRow> run_probe(const RunConfig &c, const Dataset &data, const ModelState &seed,
                                       const std::vector<std::pair<std::string, Genome>> &genomes,
                                       std::size_t workers) {
  const EvalContext ctx(data, c.metrics);
  std::vector<ProbeRow> rows(genomes.size());
  auto errors = parallel_for(genomes.size(), workers, [&](std::size_t i) {
    const Genome &g = genomes[i].second;
    AdaptedModel a = adapt_candidate(seed, g, data, c.proxy, c.global_seed);
    rows[i] = {genomes[i].first, g, evaluate_label_free(a.model, ctx), parameter_count(g, data.num_classes()),
               edit_distance(seed_genome(), g)};
  });
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (errors[i])
      throw std::runtime_error("probe " + std::to_string(i) + " (" + genomes[i].first + "): " + describe(errors[i]));
  return rows;
}

inline std::string probe_csv(const std::vector<ProbeRow> &rows) {
  std::string s = "name,genome_hash,edit_distance,head,aspp_rates,se,num_blocks,mmd,reent,mean_ent,params,macs,joint\n";
  for (const auto &r : rows) {
    const Genome &g = r.genome;
    const auto &rates = aspp_rate_sets()[static_cast<std::size_t>(g.aspp_variant)];
    std::string se, blocks, rs;
    for (std::size_t i = 0; i < 3; ++i) {
      se += std::string(i ? ";" : "") + (g.stages[i].se_enabled ? "1" : "0");
      blocks += (i ? ";" : "") + std::to_string(g.stages[i].num_blocks);
    }
    for (std::size_t i = 0; i < rates.size(); ++i)
      rs += (i ? ";" : "") + std::to_string(rates[i]);
    s += r.name + "," + hex64(genome_hash(g)) + "," + std::to_string(r.edit_distance) + "," + to_string(g.head) +
         "," + rs + "," + se + "," + blocks + "," + detail::fmt(r.report.mmd) + "," + detail::fmt(r.report.reent) +
         "," + detail::fmt(r.report.mean_ent) + "," + std::to_string(r.params) + "," + std::to_string(r.report.macs) +
         "," + detail::fmt(r.report.joint) + "\n";
  }
  return s;
}

inline std::vector<ProbeRow> cmd_probe(const RunConfig &c) {
  std::vector<std::pair<std::string, Genome>> genomes;
  if (c.probe_genomes.empty()) {
    genomes = default_probe_genomes();
  } else {
    for (std::size_t i = 0; i < c.probe_genomes.size(); ++i)
      genomes.emplace_back("genome" + std::to_string(i), c.probe_genomes[i]);
  }
  Dataset data = detail::open_dataset(c);
  ModelState seed = detail::open_seed(c);
  auto rows = run_probe(c, data, seed, genomes, resolve_workers(c.workers));
  const fs::path dir = c.out_path() / "probe";
  detail::write_text(dir / "probe.csv", probe_csv(rows));
  detail::echo_config(dir, c);
  return rows;
}

} // namespace autoadapt

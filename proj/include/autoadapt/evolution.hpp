#pragma once

#include "autoadapt/genome.hpp"
#include "autoadapt/metrics.hpp"
#include "autoadapt/parallel.hpp"
#include "autoadapt/dataset.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace autoadapt {

enum class SelectionKey { joint, reent };
enum class RemapFrom { parent, seed };

struct EvolutionConfig {
  std::size_t n_sample = 30;
  std::size_t keep = 8;
  std::size_t capacity = 8;
  double fraction = 0.25;
  std::size_t patience = 25;
  std::size_t max_cycles = 100;
  SelectionKey selection = SelectionKey::joint;
  RemapFrom remap_from = RemapFrom::parent;

  void validate(const std::string &section = "evolution") const {
    if (keep < 2)
      throw ConfigError(section + ".keep must be >= 2");
    if (n_sample < keep)
      throw ConfigError(section + ".n_sample must be >= keep");
    if (capacity < keep)
      throw ConfigError(section + ".capacity must be >= keep");
    if (!(fraction > 0.0 && fraction <= 1.0))
      throw ConfigError(section + ".fraction must be in (0,1]");
  }
};

inline nlohmann::ordered_json to_json(const EvolutionConfig &c) {
  return {{"n_sample", c.n_sample},
          {"keep", c.keep},
          {"capacity", c.capacity},
          {"fraction", c.fraction},
          {"patience", c.patience},
          {"max_cycles", c.max_cycles},
          {"selection", c.selection == SelectionKey::joint ? "joint" : "reent"},
          {"remap_from", c.remap_from == RemapFrom::parent ? "parent" : "seed"}};
}

template <class Json> EvolutionConfig evolution_config_from_json(const Json &j, EvolutionConfig c = {}) {
  auto field = [&](const char *key, auto &dst) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception &) {
        throw ConfigError(std::string("evolution.") + key + " has the wrong type");
      }
    }
  };
  field("n_sample", c.n_sample);
  field("keep", c.keep);
  field("capacity", c.capacity);
  field("fraction", c.fraction);
  field("patience", c.patience);
  field("max_cycles", c.max_cycles);
  if (j.contains("selection")) {
    const auto v = j.at("selection").template get<std::string>();
    if (v != "joint" && v != "reent")
      throw ConfigError("evolution.selection must be joint or reent");
    c.selection = v == "joint" ? SelectionKey::joint : SelectionKey::reent;
  }
  if (j.contains("remap_from")) {
    const auto v = j.at("remap_from").template get<std::string>();
    if (v != "parent" && v != "seed")
      throw ConfigError("evolution.remap_from must be parent or seed");
    c.remap_from = v == "parent" ? RemapFrom::parent : RemapFrom::seed;
  }
  c.validate();
  return c;
}

struct Individual {
  Genome genome;
  MetricReport report;
  std::size_t birth_cycle = 0;
  std::string checkpoint;
};

struct HistoryRecord {
  std::size_t cycle = 0;
  Genome genome;
  std::optional<std::uint64_t> parent_hash;
  std::optional<MetricReport> report;
  std::string status = "ok";
  std::string error;
  std::string checkpoint;
};

inline nlohmann::ordered_json to_json(const HistoryRecord &h) {
  nlohmann::ordered_json j;
  j["cycle"] = h.cycle;
  j["genome"] = to_json(h.genome);
  j["genome_hash"] = hex64(genome_hash(h.genome));
  if (h.parent_hash)
    j["parent_hash"] = hex64(*h.parent_hash);
  else
    j["parent_hash"] = nullptr;
  if (h.report) {
    j["mmd"] = h.report->mmd;
    j["mean_ent"] = h.report->mean_ent;
    j["reent"] = h.report->reent;
    j["macs"] = h.report->macs;
    j["macs_norm"] = h.report->macs_norm;
    j["joint"] = h.report->joint;
  } else {
    for (const char *k : {"mmd", "mean_ent", "reent", "macs", "macs_norm", "joint"})
      j[k] = nullptr;
  }
  j["status"] = h.status;
  if (!h.error.empty())
    j["error"] = h.error;
  j["checkpoint"] = h.checkpoint;
  return j;
}

/// What the controller asks of a candidate evaluation.
struct EvalRequest {
  Genome genome;
  const Individual *parent = nullptr; // null: initialization (remap from the seed)
  std::size_t cycle = 0;
  std::size_t slot = 0; // index within the cycle (init sample index, 0 for children)
};

struct EvalResult {
  MetricReport report;
  std::string checkpoint;
};

/// Trains and scores one candidate. Throws on failure. Must be safe to call
/// concurrently for different requests.
using Evaluator = std::function<EvalResult(const EvalRequest &)>;

class Population {
public:
  explicit Population(std::size_t capacity = 8) : capacity_(capacity) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return members_.size(); }
  bool empty() const { return members_.empty(); }
  const Individual &operator[](std::size_t i) const { return members_.at(i); }
  const std::vector<Individual> &members() const { return members_; }

  void add(Individual ind) { members_.push_back(std::move(ind)); }

  /// Drops the oldest members until the capacity holds.
  void enforce_capacity() {
    while (members_.size() > capacity_) {
      std::size_t oldest = 0;
      for (std::size_t i = 1; i < members_.size(); ++i)
        if (members_[i].birth_cycle < members_[oldest].birth_cycle)
          oldest = i;
      members_.erase(members_.begin() + static_cast<std::ptrdiff_t>(oldest));
    }
  }

private:
  std::size_t capacity_;
  std::vector<Individual> members_;
};

inline double selection_value(const Individual &ind, SelectionKey key) {
  return key == SelectionKey::joint ? ind.report.joint : ind.report.reent;
}

inline std::size_t tournament_size(std::size_t population, double fraction) {
  const auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(population) - 1e-12));
  return std::clamp<std::size_t>(k, 1, population);
}

/// Samples ceil(fraction * size) distinct members and returns the index of the best one.
inline std::size_t tournament_select(const Population &pop, double fraction, Rng &rng,
                                     SelectionKey key = SelectionKey::joint) {
  if (pop.empty())
    throw std::invalid_argument("tournament_select: empty population");
  const std::size_t n = pop.size();
  const std::size_t k = tournament_size(n, fraction);
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i)
    idx[i] = i;
  for (std::size_t i = 0; i < k; ++i)
    std::swap(idx[i], idx[i + rng.index(n - i)]);
  std::size_t best = idx[0];
  for (std::size_t i = 1; i < k; ++i) {
    const double a = selection_value(pop[idx[i]], key), b = selection_value(pop[best], key);
    if (a < b || (a == b && idx[i] < best))
      best = idx[i];
  }
  return best;
}

struct SearchState {
  EvolutionConfig config;
  SearchSpace space;
  Population population;
  std::vector<HistoryRecord> history;
  Rng rng;
  std::size_t workers = 1;

  SearchState(EvolutionConfig cfg, SearchSpace sp, std::uint64_t seed, std::size_t w = 1)
      : config(cfg), space(std::move(sp)), population(cfg.capacity), rng(seed), workers(w) {
    config.validate();
  }
};

/// Samples n_sample genomes, evaluates them (concurrently when workers > 1), records every
/// outcome in sample order, and keeps the `keep` lowest joint scores.
inline void init_population(SearchState &st, const Evaluator &eval) {
  const std::size_t n = st.config.n_sample;
  std::vector<Genome> genomes;
  for (std::size_t i = 0; i < n; ++i)
    genomes.push_back(st.space.random_genome(st.rng));
  std::vector<std::optional<EvalResult>> results(n);
  auto errors = parallel_for(n, st.workers, [&](std::size_t i) {
    results[i] = eval(EvalRequest{genomes[i], nullptr, 0, i});
  });
  std::vector<Individual> ok;
  for (std::size_t i = 0; i < n; ++i) {
    HistoryRecord h{0, genomes[i], std::nullopt, std::nullopt, "ok", {}, {}};
    if (errors[i]) {
      h.status = "failed";
      h.error = describe(errors[i]);
    } else {
      h.report = results[i]->report;
      h.checkpoint = results[i]->checkpoint;
      ok.push_back({genomes[i], results[i]->report, 0, results[i]->checkpoint});
    }
    st.history.push_back(std::move(h));
  }
  if (ok.size() < st.config.keep)
    throw std::runtime_error("initialization: only " + std::to_string(ok.size()) + " of " +
                             std::to_string(n) + " candidates trained, need " +
                             std::to_string(st.config.keep));
  std::stable_sort(ok.begin(), ok.end(), [](const Individual &a, const Individual &b) {
    return a.report.joint < b.report.joint;
  });
  ok.resize(st.config.keep);
  for (auto &ind : ok)
    st.population.add(std::move(ind));
}

/// One regularized-evolution cycle. Returns the child record (also appended to history).
inline const HistoryRecord &evolve_cycle(SearchState &st, std::size_t cycle, const Evaluator &eval) {
  const std::size_t pi = tournament_select(st.population, st.config.fraction, st.rng, st.config.selection);
  const Individual parent = st.population[pi];
  const Genome child = st.space.mutate(parent.genome, st.rng);
  HistoryRecord h{cycle, child, genome_hash(parent.genome), std::nullopt, "ok", {}, {}};
  try {
    EvalResult r = eval(EvalRequest{child, &parent, cycle, 0});
    h.report = r.report;
    h.checkpoint = r.checkpoint;
    st.population.add({child, r.report, cycle, r.checkpoint});
    st.population.enforce_capacity();
  } catch (const std::exception &e) {
    h.status = "failed";
    h.error = e.what();
  }
  st.history.push_back(std::move(h));
  return st.history.back();
}

struct SearchResult {
  Individual best;
  std::vector<HistoryRecord> history;
  std::size_t cycles_run = 0;
  bool early_stopped = false;
};

inline std::optional<std::size_t> best_in_history(const std::vector<HistoryRecord> &history) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < history.size(); ++i)
    if (history[i].report && (!best || history[i].report->joint < history[*best].report->joint))
      best = i;
  return best;
}

/// Init, then cycles until max_cycles or until the best joint score has not improved
/// for `patience` consecutive cycles. Returns the argmin over the full history.
/// `on_record` (optional) sees every history record as soon as it is final.
inline SearchResult run_search(SearchState &st, const Evaluator &eval,
                               const std::function<void(const HistoryRecord &)> &on_record = {}) {
  init_population(st, eval);
  if (on_record)
    for (const auto &h : st.history)
      on_record(h);
  SearchResult out;
  double best = st.history[*best_in_history(st.history)].report->joint;
  std::size_t unchanged = 0;
  for (std::size_t cycle = 1; cycle <= st.config.max_cycles; ++cycle) {
    if (unchanged >= st.config.patience) {
      out.early_stopped = true;
      break;
    }
    const HistoryRecord &h = evolve_cycle(st, cycle, eval);
    if (on_record)
      on_record(h);
    out.cycles_run = cycle;
    if (h.report && h.report->joint < best) {
      best = h.report->joint;
      unchanged = 0;
    } else {
      ++unchanged;
    }
  }
  const HistoryRecord &b = st.history[*best_in_history(st.history)];
  out.best = {b.genome, *b.report, b.cycle, b.checkpoint};
  out.history = st.history;
  return out;
}

} // namespace autoadapt

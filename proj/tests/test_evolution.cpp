#include "autoadapt/evolution.hpp"
#include "surrogate.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <limits>
#include <set>

using namespace autoadapt;

namespace {

Individual member(double joint, std::size_t birth = 0, double reent = 0.0) {
  Individual ind;
  ind.report.joint = joint;
  ind.report.reent = reent;
  ind.birth_cycle = birth;
  return ind;
}

EvolutionConfig small(std::size_t n_sample, std::size_t keep, std::size_t capacity = 0) {
  EvolutionConfig c;
  c.n_sample = n_sample;
  c.keep = keep;
  c.capacity = capacity ? capacity : keep;
  return c;
}

std::vector<std::uint64_t> hashes(const std::vector<HistoryRecord> &h) {
  std::vector<std::uint64_t> out;
  for (const auto &r : h)
    out.push_back(genome_hash(r.genome));
  return out;
}

} // namespace

TEST(Tournament, SizeFromFraction) {
  EXPECT_EQ(tournament_size(20, 0.25), 5u);
  EXPECT_EQ(tournament_size(8, 0.25), 2u);
  EXPECT_EQ(tournament_size(9, 0.25), 3u);
  EXPECT_EQ(tournament_size(1, 0.25), 1u);
  EXPECT_EQ(tournament_size(3, 1.0), 3u);
}

TEST(Tournament, SingletonAndEmpty) {
  Population pop(4);
  Rng rng(1);
  EXPECT_THROW(tournament_select(pop, 0.25, rng), std::invalid_argument);
  pop.add(member(3.0));
  EXPECT_EQ(tournament_select(pop, 0.25, rng), 0u);
}

TEST(Tournament, StrictlyBestWinsExactlyWhenSampled) {
  Population pop(20);
  for (int i = 0; i < 20; ++i)
    pop.add(member(i == 13 ? -std::numeric_limits<double>::infinity() : static_cast<double>(i)));
  Rng rng(2);
  int wins = 0;
  for (int t = 0; t < 1000; ++t)
    wins += tournament_select(pop, 0.25, rng) == 13;
  EXPECT_NEAR(wins / 1000.0, 5.0 / 20.0, 0.03);
}

TEST(Tournament, FullTournamentReturnsArgminForEitherKey) {
  Population pop(5);
  pop.add(member(0.5, 0, -1.0));
  pop.add(member(-0.2, 0, -0.1));
  pop.add(member(0.1, 0, -3.0));
  Rng rng(3);
  EXPECT_EQ(tournament_select(pop, 1.0, rng, SelectionKey::joint), 1u);
  EXPECT_EQ(tournament_select(pop, 1.0, rng, SelectionKey::reent), 2u);
}

TEST(Tournament, TiesGoToLowestIndex) {
  Population pop(4);
  for (int i = 0; i < 4; ++i)
    pop.add(member(1.0));
  Rng rng(4);
  EXPECT_EQ(tournament_select(pop, 1.0, rng), 0u);
}

TEST(PopulationCapacity, OldestIsRemoved) {
  Population pop(3);
  pop.add(member(0.0, 5));
  pop.add(member(9.0, 2)); // oldest, worst
  pop.add(member(-9.0, 3));
  pop.add(member(1.0, 7));
  pop.enforce_capacity();
  ASSERT_EQ(pop.size(), 3u);
  for (const auto &m : pop.members())
    EXPECT_NE(m.birth_cycle, 2u);
  pop.add(member(2.0, 8));
  pop.enforce_capacity();
  for (const auto &m : pop.members())
    EXPECT_NE(m.birth_cycle, 3u) << "the best member is still removed once it is the oldest";
}

TEST(EvolutionConfig, Validation) {
  EXPECT_NO_THROW(small(30, 8).validate());
  EXPECT_THROW(small(5, 8).validate(), ConfigError);
  EXPECT_THROW(small(30, 1).validate(), ConfigError);
  EXPECT_THROW(small(30, 8, 4).validate(), ConfigError);
  EvolutionConfig c = small(30, 8);
  c.fraction = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  const EvolutionConfig back = evolution_config_from_json(nlohmann::json::parse(to_json(c = small(12, 4)).dump()));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
}

TEST(InitPopulation, KeepEqualsSampleKeepsEverything) {
  SearchState st(small(6, 6), SearchSpace{}, 5);
  init_population(st, surrogate::evaluate);
  ASSERT_EQ(st.population.size(), 6u);
  std::multiset<std::uint64_t> sampled, kept;
  for (const auto &h : st.history)
    sampled.insert(genome_hash(h.genome));
  for (const auto &m : st.population.members())
    kept.insert(genome_hash(m.genome));
  EXPECT_EQ(sampled, kept);
}

TEST(InitPopulation, KeepsTheLowestJointScores) {
  SearchState st(small(30, 8), surrogate::space144(), 6);
  init_population(st, surrogate::evaluate);
  ASSERT_EQ(st.history.size(), 30u);
  double max_kept = -1e300;
  for (const auto &m : st.population.members())
    max_kept = std::max(max_kept, m.report.joint);
  std::multiset<double> all;
  for (const auto &h : st.history)
    all.insert(h.report->joint);
  std::vector<double> sorted(all.begin(), all.end());
  EXPECT_LE(max_kept, sorted[8]);
  EXPECT_EQ(max_kept, sorted[7]);
  for (const auto &m : st.population.members())
    EXPECT_EQ(m.birth_cycle, 0u);
}

TEST(InitPopulation, DeterministicIncludingWorkers) {
  SearchState a(small(20, 5), SearchSpace{}, 7, 1), b(small(20, 5), SearchSpace{}, 7, 4);
  init_population(a, surrogate::evaluate);
  init_population(b, surrogate::evaluate);
  EXPECT_EQ(hashes(a.history), hashes(b.history));
  for (std::size_t i = 0; i < a.population.size(); ++i)
    EXPECT_EQ(genome_hash(a.population[i].genome), genome_hash(b.population[i].genome));
}

TEST(InitPopulation, FailuresAreLoggedAndDiscarded) {
  auto flaky = [](const EvalRequest &r) {
    if (r.slot % 3 == 0)
      throw NumericError("diverged");
    return surrogate::evaluate(r);
  };
  SearchState st(small(12, 4), SearchSpace{}, 8);
  init_population(st, flaky);
  ASSERT_EQ(st.history.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(st.history[i].status, i % 3 == 0 ? "failed" : "ok");
    EXPECT_EQ(st.history[i].report.has_value(), i % 3 != 0);
  }
  EXPECT_NE(st.history[0].error.find("diverged"), std::string::npos);
  EXPECT_EQ(st.population.size(), 4u);

  SearchState too_few(small(12, 9), SearchSpace{}, 8);
  EXPECT_THROW(init_population(too_few, flaky), std::runtime_error);
}

TEST(EvolveCycle, CapacityAndEditDistanceOverHundredCycles) {
  SearchState st(small(10, 6, 6), SearchSpace{}, 9);
  init_population(st, surrogate::evaluate);
  std::map<std::uint64_t, Genome> seen;
  for (const auto &h : st.history)
    seen.emplace(genome_hash(h.genome), h.genome);
  for (std::size_t c = 1; c <= 100; ++c) {
    const HistoryRecord &h = evolve_cycle(st, c, surrogate::evaluate);
    EXPECT_LE(st.population.size(), 6u);
    ASSERT_TRUE(h.parent_hash.has_value());
    const auto parent = seen.find(*h.parent_hash);
    ASSERT_NE(parent, seen.end());
    EXPECT_EQ(edit_distance(parent->second, h.genome), 1);
    EXPECT_EQ(h.cycle, c);
    seen.emplace(genome_hash(h.genome), h.genome);
  }
  EXPECT_EQ(st.history.size(), 110u);
}

TEST(EvolveCycle, ChildReplacesTheOldestMember) {
  SearchState st(small(4, 4), SearchSpace{}, 10);
  init_population(st, surrogate::evaluate);
  evolve_cycle(st, 1, surrogate::evaluate);
  evolve_cycle(st, 2, surrogate::evaluate);
  std::vector<std::size_t> births;
  for (const auto &m : st.population.members())
    births.push_back(m.birth_cycle);
  std::sort(births.begin(), births.end());
  EXPECT_EQ(births, (std::vector<std::size_t>{0, 0, 1, 2}));
}

TEST(EvolveCycle, FailedChildLeavesPopulationUnchanged) {
  SearchState st(small(5, 5), SearchSpace{}, 11);
  init_population(st, surrogate::evaluate);
  std::vector<std::uint64_t> before;
  for (const auto &m : st.population.members())
    before.push_back(genome_hash(m.genome));
  const HistoryRecord &h =
      evolve_cycle(st, 1, [](const EvalRequest &) -> EvalResult { throw NumericError("nan at step 3"); });
  EXPECT_EQ(h.status, "failed");
  EXPECT_FALSE(h.report.has_value());
  std::vector<std::uint64_t> after;
  for (const auto &m : st.population.members())
    after.push_back(genome_hash(m.genome));
  EXPECT_EQ(after, before);
  const auto j = to_json(h);
  EXPECT_TRUE(j["joint"].is_null());
  EXPECT_EQ(j["status"], "failed");
}

TEST(EvolveCycle, ChildrenAreEvaluatedAgainstTheirParent) {
  SearchState st(small(4, 4), SearchSpace{}, 12);
  init_population(st, surrogate::evaluate);
  bool checked = false;
  evolve_cycle(st, 1, [&](const EvalRequest &r) {
    EXPECT_NE(r.parent, nullptr);
    EXPECT_EQ(edit_distance(r.parent->genome, r.genome), 1);
    EXPECT_EQ(r.cycle, 1u);
    checked = true;
    return surrogate::evaluate(r);
  });
  EXPECT_TRUE(checked);
}

TEST(RunSearch, PatienceZeroStopsAfterInit) {
  EvolutionConfig c = small(10, 4);
  c.patience = 0;
  SearchState st(c, SearchSpace{}, 13);
  const SearchResult r = run_search(st, surrogate::evaluate);
  EXPECT_EQ(r.cycles_run, 0u);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.history.size(), 10u);
  double best = 1e300;
  for (const auto &h : r.history)
    best = std::min(best, h.report->joint);
  EXPECT_EQ(r.best.report.joint, best);
}

TEST(RunSearch, SteadyImprovementNeverStopsEarly) {
  EvolutionConfig c = small(4, 4);
  c.patience = 2;
  c.max_cycles = 30;
  SearchState st(c, SearchSpace{}, 14);
  auto improving = [](const EvalRequest &r) {
    EvalResult out;
    out.report.mmd = 100.0 - static_cast<double>(r.cycle);
    out.report.recompute_joint();
    return out;
  };
  const SearchResult r = run_search(st, improving);
  EXPECT_FALSE(r.early_stopped);
  EXPECT_EQ(r.cycles_run, 30u);
  EXPECT_EQ(r.best.birth_cycle, 30u);
}

TEST(RunSearch, StopsAfterPatienceWithoutImprovement) {
  EvolutionConfig c = small(4, 4);
  c.patience = 5;
  c.max_cycles = 50;
  SearchState st(c, SearchSpace{}, 15);
  auto flat = [](const EvalRequest &r) {
    EvalResult out;
    out.report.mmd = r.cycle == 0 ? 1.0 : 2.0;
    out.report.recompute_joint();
    return out;
  };
  const SearchResult r = run_search(st, flat);
  EXPECT_TRUE(r.early_stopped);
  EXPECT_EQ(r.cycles_run, 5u);
}

TEST(RunSearch, BestSoFarIsMonotoneAndHistoryCoversPopulation) {
  EvolutionConfig c = surrogate::config(60);
  SearchState st(c, surrogate::space144(), 16);
  std::vector<double> best_so_far;
  double best = 1e300;
  std::size_t streamed = 0;
  const SearchResult r = run_search(st, surrogate::evaluate, [&](const HistoryRecord &h) {
    ++streamed;
    best = std::min(best, h.report->joint);
    best_so_far.push_back(best);
  });
  EXPECT_EQ(streamed, r.history.size());
  EXPECT_TRUE(std::is_sorted(best_so_far.rbegin(), best_so_far.rend()));
  std::set<std::uint64_t> hist;
  for (const auto &h : r.history)
    hist.insert(genome_hash(h.genome));
  for (const auto &m : st.population.members())
    EXPECT_TRUE(hist.count(genome_hash(m.genome)));
  EXPECT_EQ(r.best.report.joint, best);
}

TEST(RunSearch, DeterministicHistory) {
  SearchState a(surrogate::config(40), SearchSpace{}, 17, 1), b(surrogate::config(40), SearchSpace{}, 17, 3);
  EXPECT_EQ(hashes(run_search(a, surrogate::evaluate).history), hashes(run_search(b, surrogate::evaluate).history));
}

TEST(Surrogate, BruteForceOptimumIsUnique) {
  const auto all = surrogate::space144().enumerate();
  ASSERT_EQ(all.size(), 144u);
  int zeros = 0;
  for (const Genome &g : all)
    zeros += surrogate::fitness(g) == 0.0;
  EXPECT_EQ(zeros, 1);
}

TEST(Surrogate, FoundWithin200CyclesInNineOfTenSeeds) {
  int found = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SearchState st(surrogate::config(200), surrogate::space144(), 1000 + seed);
    found += surrogate::cycle_found(run_search(st, surrogate::evaluate).history).has_value();
  }
  EXPECT_GE(found, 9);
}

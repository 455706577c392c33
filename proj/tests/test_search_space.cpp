#include "autoadapt/macs.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <set>

using namespace autoadapt;

namespace {

Genome with(Genome g, Field f, int choice) {
  g.set(f, choice);
  return g;
}

} // namespace

TEST(SeedGenome, MatchesBaselineAndValidates) {
  const Genome g = seed_genome();
  EXPECT_EQ(g.crop_ratio, CropRatio::half);
  for (std::size_t s = 0; s < 3; ++s) {
    EXPECT_EQ(g.stages[s].num_blocks, 2);
    EXPECT_EQ(g.stages[s].kernel_size, 3);
    EXPECT_FALSE(g.stages[s].se_enabled);
  }
  EXPECT_EQ(g.stages[0].dilation, 1);
  EXPECT_EQ(g.stages[1].dilation, 2);
  EXPECT_EQ(g.stages[2].dilation, 4);
  EXPECT_EQ(g.head, HeadType::aspp);
  EXPECT_EQ(g.aspp_rates(), (std::array<int, 4>{6, 12, 18, 24}));
  EXPECT_EQ(g.aux_tap, AuxTap::none);
  EXPECT_TRUE(is_valid(g));
  EXPECT_EQ(edit_distance(g, g), 0);
}

TEST(SearchSpaceShape, CardinalityMatchesClosedForm) {
  const std::uint64_t per_stage = 3 * 3 * 3 * 2;
  EXPECT_EQ(SearchSpace{}.cardinality(), 4 * per_stage * per_stage * per_stage * 3 * 2 * 3);
  EXPECT_EQ(SearchSpace::all_fields().size(), 16u);
}

TEST(RandomGenome, EveryDrawValidates) {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i)
    ASSERT_TRUE(is_valid(random_genome(rng)));
}

TEST(RandomGenome, HeadFrequenciesAreUniform) {
  Rng rng(2);
  std::map<HeadType, int> counts;
  for (int i = 0; i < 10000; ++i)
    counts[random_genome(rng).head]++;
  ASSERT_EQ(counts.size(), 3u);
  for (auto [h, c] : counts)
    EXPECT_NEAR(c / 10000.0, 1.0 / 3.0, 0.03) << static_cast<int>(h);
}

TEST(RandomGenome, EveryFieldValueIsReached) {
  Rng rng(3);
  std::vector<std::set<int>> seen(kNumFields);
  for (int i = 0; i < 2000; ++i) {
    const Genome g = random_genome(rng);
    for (int f = 0; f < kNumFields; ++f)
      seen[f].insert(g.get(static_cast<Field>(f)));
  }
  for (int f = 0; f < kNumFields; ++f)
    EXPECT_EQ(seen[f].size(), static_cast<std::size_t>(field_domain_size(static_cast<Field>(f))))
        << field_name(static_cast<Field>(f));
}

TEST(RandomGenome, FixedSeedIsDeterministic) {
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i)
    EXPECT_EQ(random_genome(a), random_genome(b));
}

TEST(Mutate, ChildIsAtEditDistanceOne) {
  Rng rng(4);
  Genome g = seed_genome();
  for (int i = 0; i < 1000; ++i) {
    const Genome child = mutate(g, rng);
    ASSERT_EQ(edit_distance(g, child), 1);
    ASSERT_NE(child, g);
    g = child;
  }
}

TEST(Mutate, ClosureOverManyDraws) {
  Rng rng(5);
  Genome g = random_genome(rng);
  for (int i = 0; i < 100000; ++i) {
    g = mutate(g, rng);
    ASSERT_TRUE(is_valid(g)) << "draw " << i;
  }
}

TEST(Mutate, FieldFrequenciesAreUniformFromSeed) {
  Rng rng(6);
  const SearchSpace space;
  std::vector<int> counts(kNumFields, 0);
  const Genome seed = seed_genome();
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    Field f{};
    const Genome child = space.mutate(seed, rng, &f);
    const auto diff = differing_fields(seed, child);
    ASSERT_EQ(diff.size(), 1u);
    ASSERT_EQ(diff[0], f);
    counts[static_cast<int>(f)]++;
  }
  for (int f = 0; f < kNumFields; ++f) {
    const double freq = counts[f] / static_cast<double>(draws);
    EXPECT_NEAR(freq, 1.0 / kNumFields, 0.01) << field_name(static_cast<Field>(f));
    EXPECT_NEAR(freq, 1.0 / 15.0, 0.01) << field_name(static_cast<Field>(f));
  }
}

TEST(Mutate, NewValueIsUniformOverTheOtherChoices) {
  Rng rng(7);
  SearchSpace space;
  space.mutable_fields = {Field::crop_ratio};
  std::map<CropRatio, int> counts;
  for (int i = 0; i < 9000; ++i)
    counts[space.mutate(seed_genome(), rng).crop_ratio]++;
  EXPECT_EQ(counts.count(CropRatio::half), 0u);
  ASSERT_EQ(counts.size(), 3u);
  for (auto [r, c] : counts)
    EXPECT_NEAR(c / 9000.0, 1.0 / 3.0, 0.03);
}

TEST(RestrictedSpace, OnlyListedFieldsMove) {
  SearchSpace space;
  space.mutable_fields = {Field::stage3_se, Field::head, Field::aux_tap};
  EXPECT_EQ(space.cardinality(), 2u * 3u * 3u);
  const auto all = space.enumerate();
  EXPECT_EQ(all.size(), 18u);
  std::set<std::uint64_t> hashes;
  for (const Genome &g : all) {
    hashes.insert(genome_hash(g));
    for (Field f : differing_fields(seed_genome(), g))
      EXPECT_TRUE(f == Field::stage3_se || f == Field::head || f == Field::aux_tap);
  }
  EXPECT_EQ(hashes.size(), 18u);
  Rng rng(8);
  for (int i = 0; i < 200; ++i)
    for (Field f : differing_fields(seed_genome(), space.random_genome(rng)))
      EXPECT_TRUE(f == Field::stage3_se || f == Field::head || f == Field::aux_tap);
}

TEST(Macs, SingleConvClosedForm) {
  EXPECT_EQ(detail::conv_macs(3, 8, 16, 24, 24), 663552u);
}

TEST(Macs, SeedAtFortyEightMatchesHandCount) {
  // Hand count at 48x48 input, 4 classes:
  //   stem      3x3  3->8   at 24x24 : 9*3*8*576    =  124416
  //   stage1.0  3x3  8->16  at 12x12 : 9*8*16*144   =  165888
  //   stage1.1  3x3 16->16  at 12x12 : 9*16*16*144  =  331776
  //   stage2.0  3x3 16->32  at 6x6   : 9*16*32*36   =  165888
  //   stage2.1  3x3 32->32  at 6x6   : 9*32*32*36   =  331776
  //   stage3.0  3x3 32->32  at 6x6   :                 331776
  //   stage3.1  3x3 32->32  at 6x6   :                 331776
  //   aspp x4   3x3 32->16  at 6x6   : 4*9*32*16*36 =  663552
  //   classifier 1x1 16->4  at 6x6   : 16*4*36      =    2304
  const std::uint64_t hand = 124416 + 165888 + 331776 + 165888 + 331776 + 331776 + 331776 + 663552 + 2304;
  const MacsReport r = macs(seed_genome(), 48, 48);
  EXPECT_EQ(r.total, hand);
  EXPECT_EQ(r.total, 2449152u);
  EXPECT_EQ(r.breakdown.size(), 12u);
}

TEST(Macs, TotalIsSumOfBreakdownAndDeterministic) {
  Rng rng(9);
  for (int i = 0; i < 300; ++i) {
    const Genome g = random_genome(rng);
    const MacsReport r = macs(g, 96, 96);
    std::uint64_t sum = 0;
    for (const auto &[name, v] : r.breakdown)
      sum += v;
    EXPECT_EQ(sum, r.total);
    EXPECT_EQ(macs(g, 96, 96).total, r.total);
  }
}

TEST(Macs, SeChangesTotalByLessThanOnePercent) {
  const std::uint64_t base = macs(seed_genome(), 96, 96).total;
  for (Field f : {Field::stage1_se, Field::stage2_se, Field::stage3_se}) {
    const std::uint64_t with_se = macs(with(seed_genome(), f, 1), 96, 96).total;
    EXPECT_GT(with_se, base);
    EXPECT_LT(static_cast<double>(with_se - base) / static_cast<double>(base), 0.01) << field_name(f);
  }
  // Stage 3 SE at 96x96: 32 channels, hidden 8, 12x12 positions.
  EXPECT_EQ(macs(with(seed_genome(), Field::stage3_se, 1), 96, 96).total - base, 32u * 8 * 2 + 32u * 144);
}

TEST(Macs, AddingABlockStrictlyIncreasesTotal) {
  Rng rng(10);
  for (int i = 0; i < 500; ++i) {
    const Genome g = random_genome(rng);
    for (Field f : {Field::stage1_blocks, Field::stage2_blocks, Field::stage3_blocks}) {
      const int c = g.get(f);
      if (c + 1 < 3) {
        EXPECT_GT(macs(with(g, f, c + 1), 64, 64).total, macs(g, 64, 64).total);
      }
    }
  }
}

TEST(Macs, DilationAndAuxTapAreFree) {
  const Genome s = seed_genome();
  EXPECT_EQ(macs(with(s, Field::stage2_dilation, 0), 96, 96).total, macs(s, 96, 96).total);
  EXPECT_EQ(macs(with(s, Field::aux_tap, 2), 96, 96).total, macs(s, 96, 96).total);
  EXPECT_EQ(macs(with(s, Field::aspp_rates, 1), 96, 96).total, macs(s, 96, 96).total);
}

TEST(EditDistance, PaperExamples) {
  const Genome s = seed_genome();
  EXPECT_EQ(edit_distance(s, with(s, Field::stage3_se, 1)), 1);
  Genome two = with(with(s, Field::head, 1), Field::aspp_rates, 1);
  EXPECT_EQ(edit_distance(s, two), 2);
}

TEST(EditDistance, IsAMetric) {
  Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Genome a = random_genome(rng), b = random_genome(rng), c = random_genome(rng);
    EXPECT_EQ(edit_distance(a, b), edit_distance(b, a));
    EXPECT_LE(edit_distance(a, c), edit_distance(a, b) + edit_distance(b, c));
    EXPECT_EQ(edit_distance(a, b) == 0, a == b);
    EXPECT_LE(edit_distance(a, b), kNumFields);
  }
}

TEST(GenomeJson, CanonicalLayoutAndRoundTrip) {
  const Genome s = seed_genome();
  EXPECT_EQ(canonical_string(s),
            R"({"crop_ratio":"1/2","stages":[{"num_blocks":2,"kernel_size":3,"dilation":1,"se":false},)"
            R"({"num_blocks":2,"kernel_size":3,"dilation":2,"se":false},)"
            R"({"num_blocks":2,"kernel_size":3,"dilation":4,"se":false}],)"
            R"("head":"aspp","aspp_rates":[6,12,18,24],"aux_tap":"none"})");
  Rng rng(12);
  for (int i = 0; i < 500; ++i) {
    const Genome g = random_genome(rng);
    const Genome back = genome_from_json(nlohmann::json::parse(canonical_string(g)));
    EXPECT_EQ(back, g);
    EXPECT_EQ(genome_hash(back), genome_hash(g));
  }
}

TEST(GenomeJson, HashIsFnv1aOfCanonicalString) {
  // Reference FNV-1a 64 written out independently.
  auto fnv = [](const std::string &s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  };
  EXPECT_EQ(fnv(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv("a"), 0xaf63dc4c8601ec8cull);
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const Genome g = random_genome(rng);
    EXPECT_EQ(genome_hash(g), fnv(canonical_string(g)));
  }
}

TEST(GenomeJson, DistinctGenomesHashDistinctly) {
  Rng rng(14);
  std::map<std::uint64_t, Genome> seen;
  for (int i = 0; i < 5000; ++i) {
    const Genome g = random_genome(rng);
    auto [it, fresh] = seen.emplace(genome_hash(g), g);
    if (!fresh) {
      EXPECT_EQ(it->second, g);
    }
  }
}

TEST(GenomeJson, RejectsOutOfDomainValues) {
  auto j = nlohmann::json::parse(canonical_string(seed_genome()));
  auto bad = j;
  bad["stages"][1]["kernel_size"] = 4;
  EXPECT_THROW(genome_from_json(bad), std::invalid_argument);
  bad = j;
  bad["head"] = "transformer";
  EXPECT_THROW(genome_from_json(bad), std::invalid_argument);
  bad = j;
  bad["aspp_rates"] = {1, 2, 3, 4};
  EXPECT_THROW(genome_from_json(bad), std::invalid_argument);
  bad = j;
  bad.erase("aux_tap");
  EXPECT_THROW(genome_from_json(bad), std::invalid_argument);
  Genome g = seed_genome();
  EXPECT_THROW(g.set(Field::head, 3), std::out_of_range);
}

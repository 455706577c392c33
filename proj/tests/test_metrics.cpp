#include "autoadapt/evaluate.hpp"
#include "autoadapt/metrics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numeric>

using namespace autoadapt;

namespace {

FeatureSet gaussian(Rng &rng, std::size_t n, std::size_t d, double shift = 0.0) {
  FeatureSet out(n, std::vector<double>(d));
  for (auto &v : out)
    for (double &x : v)
      x = rng.normal() + shift;
  return out;
}

ProbMap uniform_map(std::size_t C, std::size_t h, std::size_t w) {
  return ProbMap{C, h, w, std::vector<double>(C * h * w, 1.0 / static_cast<double>(C))};
}

ProbMap one_hot_map(Rng &rng, std::size_t C, std::size_t h, std::size_t w) {
  ProbMap m{C, h, w, std::vector<double>(C * h * w, 0.0)};
  for (std::size_t i = 0; i < h * w; ++i)
    m.p[rng.index(C) * h * w + i] = 1.0;
  return m;
}

ProbMap permute_classes(const ProbMap &m, const std::vector<std::size_t> &perm) {
  ProbMap out = m;
  const std::size_t plane = m.h * m.w;
  for (std::size_t c = 0; c < m.c; ++c)
    std::copy_n(m.p.begin() + static_cast<long>(c * plane), plane, out.p.begin() + static_cast<long>(perm[c] * plane));
  return out;
}

RegionPartition single_region(std::size_t h, std::size_t w) {
  return RegionPartition{h, w, std::vector<int>(h * w, 0), {h * w}};
}

} // namespace

// ---- mmd ----

TEST(Mmd, IdenticalSamplesGiveExactlyZero) {
  Rng rng(1);
  const FeatureSet xs = gaussian(rng, 20, 5);
  EXPECT_EQ(mmd(xs, xs), 0.0);
}

TEST(Mmd, SameDistributionWithinPermutationNull) {
  Rng rng(2);
  const FeatureSet xs = gaussian(rng, 200, 8), ys = gaussian(rng, 200, 8);
  const double bw = median_heuristic_bandwidth(xs, ys);
  const auto K = pooled_gram(xs, ys, bw);
  std::vector<char> first(400, 0);
  std::fill(first.begin(), first.begin() + 200, 1);
  const double est = mmd2_unbiased_from_gram(K, first);
  EXPECT_DOUBLE_EQ(est, mmd2_unbiased(xs, ys));
  std::vector<double> null;
  for (int k = 0; k < 200; ++k) {
    for (std::size_t i = first.size() - 1; i > 0; --i)
      std::swap(first[i], first[rng.index(i + 1)]);
    null.push_back(mmd2_unbiased_from_gram(K, first));
  }
  const double mean = std::accumulate(null.begin(), null.end(), 0.0) / 200.0;
  double var = 0.0;
  for (double v : null)
    var += (v - mean) * (v - mean);
  const double sigma = std::sqrt(var / 199.0);
  EXPECT_LE(std::abs(est), 3.0 * sigma) << "estimate " << est << " sigma " << sigma;
}

TEST(Mmd, IncreasesWithMeanShift) {
  for (std::uint64_t trial = 0; trial < 10; ++trial) {
    Rng rng(100 + trial);
    const FeatureSet xs = gaussian(rng, 200, 8);
    double prev = -1.0;
    for (double delta : {0.5, 1.0, 2.0}) {
      const double v = mmd(xs, gaussian(rng, 200, 8, delta));
      EXPECT_GT(v, prev) << "trial " << trial << " delta " << delta;
      prev = v;
    }
  }
}

TEST(Mmd, SymmetricAndOrderInvariant) {
  Rng rng(3);
  FeatureSet xs = gaussian(rng, 30, 4), ys = gaussian(rng, 25, 4, 0.3);
  const double a = mmd2_unbiased(xs, ys);
  EXPECT_NEAR(mmd2_unbiased(ys, xs), a, 1e-12);
  std::reverse(xs.begin(), xs.end());
  std::rotate(ys.begin(), ys.begin() + 7, ys.end());
  EXPECT_NEAR(mmd2_unbiased(xs, ys), a, 1e-12);
  EXPECT_GE(mmd(xs, ys), 0.0);
}

TEST(Mmd, MedianBandwidthMatchesSortedPairs) {
  const FeatureSet xs{{0.0}, {1.0}}, ys{{3.0}, {7.0}};
  // pairwise distances 1 3 7 2 6 4 -> sorted 1 2 3 4 6 7 -> median 3.5
  EXPECT_DOUBLE_EQ(median_heuristic_bandwidth(xs, ys), 3.5);
  const FeatureSet same{{2.0}, {2.0}};
  EXPECT_DOUBLE_EQ(median_heuristic_bandwidth(same, same), 1.0);
}

TEST(Mmd, RejectsBadInputs) {
  EXPECT_THROW(mmd({{1.0, 2.0}, {3.0, 4.0}}, {{1.0}, {2.0}}), std::invalid_argument);
  EXPECT_THROW(mmd({{1.0}}, {{1.0}, {2.0}}), std::invalid_argument);
}

// ---- entropy ----

TEST(PixelEntropy, ClosedForms) {
  for (double e : pixel_entropy(uniform_map(5, 3, 4)))
    EXPECT_NEAR(e, 1.0, 1e-12);
  Rng rng(4);
  for (double e : pixel_entropy(one_hot_map(rng, 4, 3, 3)))
    EXPECT_EQ(e, 0.0);
  const ProbMap half{4, 1, 1, {0.5, 0.5, 0.0, 0.0}};
  EXPECT_NEAR(pixel_entropy(half)[0], 0.5, 1e-15);
}

TEST(PixelEntropy, BoundedAndClassPermutationInvariant) {
  Rng rng(5);
  const ProbMap m = oracle::random_probs(rng, 6, 8, 8);
  const auto e = pixel_entropy(m);
  const auto ep = pixel_entropy(permute_classes(m, {3, 0, 5, 1, 4, 2}));
  for (std::size_t i = 0; i < e.size(); ++i) {
    EXPECT_GE(e[i], 0.0);
    EXPECT_LE(e[i], 1.0 + 1e-12);
    EXPECT_NEAR(e[i], ep[i], 1e-15);
  }
}

TEST(PixelEntropy, RejectsInvalidMaps) {
  EXPECT_THROW(pixel_entropy(ProbMap{2, 1, 1, {0.6, 0.6}}), std::invalid_argument);
  EXPECT_THROW(pixel_entropy(ProbMap{2, 1, 1, {1.2, -0.2}}), std::invalid_argument);
  EXPECT_NO_THROW(pixel_entropy(ProbMap{2, 1, 1, {0.5, 0.5 + 5e-7}}));
}

TEST(MeanEntropy, MatchesDirectSummation) {
  const std::vector<double> c(10, 0.3);
  EXPECT_NEAR(mean_entropy(c), 0.3, 1e-15);
  std::vector<double> half(10, 0.0);
  std::fill(half.begin() + 5, half.end(), 1.0);
  EXPECT_EQ(mean_entropy(half), 0.5);
  Rng rng(6);
  std::vector<double> r(1000);
  double s = 0.0;
  for (double &v : r)
    s += v = rng.uniform();
  EXPECT_NEAR(mean_entropy(r), s / 1000.0, 1e-12);
  EXPECT_THROW(mean_entropy(std::vector<double>{}), std::invalid_argument);
}

// ---- region partition ----

TEST(RegionPartition, ConstantImageIsOneRegion) {
  Tensor img(1, 3, 12, 10, 0.4);
  const RegionPartition p = region_partition(img);
  EXPECT_EQ(p.num_regions(), 1u);
  EXPECT_EQ(p.counts[0], 120u);
}

TEST(RegionPartition, TwoConstantHalves) {
  // values either side of the 0.25 bin edge so the blurred seam stays in its own bin
  Tensor img(1, 3, 16, 16, 0.24);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 8; x < 16; ++x)
        img.at(0, c, y, x) = 0.26;
  const RegionPartition p = region_partition(img);
  ASSERT_EQ(p.num_regions(), 2u);
  EXPECT_EQ(p.counts[0], 128u);
  EXPECT_EQ(p.counts[1], 128u);
  EXPECT_EQ(p.region[7], 0);
  EXPECT_EQ(p.region[8], 1);

  // a wide contrast makes the blurred seam columns their own 16-pixel regions
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x)
        img.at(0, c, y, x) = x < 8 ? 0.1 : 0.9;
  EXPECT_EQ(region_partition(img).counts, (std::vector<std::size_t>{112, 16, 16, 112}));
}

TEST(RegionPartition, MatchesFloodFillOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const Tensor img = oracle::structured_image(rng, 20 + rng.index(12), 20 + rng.index(12));
    const RegionPartition p = region_partition(img);
    EXPECT_EQ(p.region, oracle::partition(img)) << "trial " << trial;
  }
}

TEST(RegionPartition, Invariants) {
  Rng rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const Tensor img = oracle::structured_image(rng, 24, 24);
    const RegionPartition p = region_partition(img);
    ASSERT_GE(p.num_regions(), 1u);
    EXPECT_EQ(std::accumulate(p.counts.begin(), p.counts.end(), std::size_t{0}), 576u);
    std::vector<std::size_t> seen(p.num_regions(), 0);
    for (int v : p.region)
      ++seen[static_cast<std::size_t>(v)];
    EXPECT_EQ(seen, p.counts);
    for (std::size_t r = 0; r < p.num_regions(); ++r) {
      if (p.num_regions() > 1)
        EXPECT_GE(p.counts[r], 16u);
      // 4-connectivity: flood from the first pixel of r reaches all of r
      std::vector<char> hit(576, 0);
      std::vector<std::size_t> stack{static_cast<std::size_t>(
          std::find(p.region.begin(), p.region.end(), static_cast<int>(r)) - p.region.begin())};
      hit[stack[0]] = 1;
      std::size_t reached = 0;
      while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        ++reached;
        const std::size_t y = i / 24, x = i % 24;
        for (std::size_t j : {y > 0 ? i - 24 : i, y < 23 ? i + 24 : i, x > 0 ? i - 1 : i, x < 23 ? i + 1 : i})
          if (!hit[j] && p.region[j] == static_cast<int>(r)) {
            hit[j] = 1;
            stack.push_back(j);
          }
      }
      EXPECT_EQ(reached, p.counts[r]) << "region " << r << " is not connected";
    }
  }
}

TEST(RegionPartition, Deterministic) {
  Rng a(9), b(9);
  EXPECT_EQ(region_partition(oracle::structured_image(a, 30, 30)).region,
            region_partition(oracle::structured_image(b, 30, 30)).region);
}

// ---- reent ----

TEST(Reent, WorkedUniformExample) {
  EXPECT_NEAR(reent(uniform_map(4, 8, 8), single_region(8, 8)), -16.0 / 3.0, 1e-9);
  EXPECT_NEAR(reent(uniform_map(4, 8, 8), single_region(8, 8)), -16.0 * std::log(4.0) / std::log(64.0), 1e-12);
}

TEST(Reent, OneHotIsExactlyZero) {
  Rng rng(10);
  const ProbMap m = one_hot_map(rng, 5, 8, 8);
  EXPECT_EQ(reent(m, single_region(8, 8)), 0.0);
  EXPECT_EQ(reent(m, oracle::random_partition(rng, 8, 8, 4)), 0.0);
}

TEST(Reent, MatchesBruteForceOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const ProbMap m = oracle::random_probs(rng, 2 + rng.index(5), 8, 8);
    const RegionPartition p = oracle::random_partition(rng, 8, 8, 4);
    const double got = reent(m, p);
    EXPECT_NEAR(got, oracle::reent(m, p.region), 1e-12) << "trial " << trial;
    EXPECT_LE(got, 0.0);
  }
}

TEST(Reent, InvariantToRegionIdsAndClassOrder) {
  Rng rng(12);
  const ProbMap m = oracle::random_probs(rng, 4, 8, 8);
  const RegionPartition p = oracle::random_partition(rng, 8, 8, 4);
  const double base = reent(m, p);
  RegionPartition q = p;
  const int R = static_cast<int>(p.num_regions());
  for (int &v : q.region)
    v = R - 1 - v;
  std::reverse(q.counts.begin(), q.counts.end());
  EXPECT_NEAR(reent(m, q), base, 1e-12);
  EXPECT_NEAR(reent(permute_classes(m, {2, 3, 1, 0}), p), base, 1e-12);
}

TEST(Reent, CertainRegionMovesTowardZero) {
  Rng rng(13);
  ProbMap m = oracle::random_probs(rng, 4, 8, 8);
  RegionPartition p{8, 8, std::vector<int>(64), {32, 32}};
  for (std::size_t i = 0; i < 64; ++i)
    p.region[i] = i < 32 ? 0 : 1;
  const double before = reent(m, p);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t c = 0; c < 4; ++c)
      m.p[c * 64 + i] = c == 0 ? 1.0 : 0.0;
  const double after = reent(m, p);
  EXPECT_GT(after, before);
  EXPECT_LE(after, 0.0);
  // what remains is exactly region 1's contribution
  ProbMap rest = m;
  EXPECT_NEAR(after, oracle::reent(rest, p.region), 1e-12);
}

TEST(Reent, RejectsMismatchAndSingletonRegions) {
  EXPECT_THROW(reent(uniform_map(2, 4, 4), single_region(4, 5)), std::invalid_argument);
  RegionPartition p{1, 3, {0, 0, 1}, {2, 1}};
  EXPECT_THROW(reent(uniform_map(2, 1, 3), p), std::invalid_argument);
}

// ---- joint ----

TEST(JointScore, Examples) {
  EXPECT_EQ(joint_score(0.3, -0.4, 2.0, 0.0), 0.3 + -0.4);
  EXPECT_NEAR(joint_score(0.78, -0.53, 1.0, 0.01), 0.26, 1e-12);
  EXPECT_LT(joint_score(0.5, -0.5, 1.0, 0.01), joint_score(0.5, -0.5, 1.1, 0.01));
  EXPECT_THROW(joint_score(0.0, 0.0, 1.0, -0.1), std::invalid_argument);
}

TEST(JointScore, RecomputableAndShiftInvariantArgmin) {
  MetricReport r;
  r.mmd = 0.4;
  r.reent = -3.2;
  r.macs_norm = 1.3;
  r.lambda = 0.05;
  r.recompute_joint();
  EXPECT_EQ(r.joint, r.mmd + r.reent + r.lambda * r.macs_norm);
  const std::vector<double> js{0.3, -0.2, 0.1, -0.19};
  auto argmin = [](std::vector<double> v) { return std::min_element(v.begin(), v.end()) - v.begin(); };
  std::vector<double> shifted = js;
  for (double &v : shifted)
    v += 7.25;
  EXPECT_EQ(argmin(js), argmin(shifted));
}

// ---- miou ----

TEST(Miou, Examples) {
  const std::vector<int> a{0, 1, 2, 3, 1, 1};
  EXPECT_EQ(miou(a, a, 4).mean, 1.0);
  const std::vector<int> zeros(16, 0), ones(16, 1);
  EXPECT_EQ(miou(zeros, ones, 4).mean, 0.0);
  const auto r = miou(zeros, ones, 4);
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_THROW(miou(zeros, a, 4), std::invalid_argument);
  EXPECT_THROW(miou(std::vector<int>{4}, std::vector<int>{0}, 4), std::invalid_argument);
}

TEST(Miou, MatchesSetArithmeticOracleExactly) {
  Rng rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> pred(256), gt(256);
    const int used = 2 + static_cast<int>(rng.index(3)); // some classes absent
    for (std::size_t i = 0; i < 256; ++i) {
      gt[i] = static_cast<int>(rng.index(static_cast<std::uint64_t>(used)));
      pred[i] = rng.uniform() < 0.6 ? gt[i] : static_cast<int>(rng.index(4));
    }
    EXPECT_EQ(miou(pred, gt, 4).mean, oracle::miou(pred, gt, 4)) << "trial " << trial;
  }
}

TEST(Miou, ArgmaxPicksFirstMaximum) {
  Tensor t(1, 3, 1, 3, 0.0);
  t.at(0, 1, 0, 0) = 2.0;
  t.at(0, 2, 0, 1) = -1.0;
  t.at(0, 0, 0, 1) = -1.0;
  t.at(0, 1, 0, 1) = -1.0;
  t.at(0, 2, 0, 2) = 5.0;
  EXPECT_EQ(argmax_channels(t), (std::vector<int>{1, 0, 2}));
}

// ---- spearman ----

TEST(Spearman, Examples) {
  const std::vector<double> xs{1, 2, 3, 4, 5}, neg{-1, -2, -3, -4, -5};
  EXPECT_DOUBLE_EQ(spearman(xs, xs), 1.0);
  EXPECT_DOUBLE_EQ(spearman(xs, neg), -1.0);
  EXPECT_NEAR(spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{2, 1, 4, 3}), 0.6, 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
  // ranks x = 1, 2.5, 2.5, 4 and y = 1, 3, 2, 4: Sxy = 4.5, Sxx = 4.5, Syy = 5
  const std::vector<double> xs{10, 20, 20, 30}, ys{1, 3, 2, 4};
  EXPECT_EQ(average_ranks(xs), (std::vector<double>{1, 2.5, 2.5, 4}));
  EXPECT_NEAR(spearman(xs, ys), 3.0 / std::sqrt(10.0), 1e-15);
  // monotone transforms leave rho unchanged
  std::vector<double> cubed = ys;
  for (double &v : cubed)
    v = v * v * v;
  EXPECT_DOUBLE_EQ(spearman(xs, cubed), spearman(xs, ys));
}

TEST(Spearman, Errors) {
  EXPECT_THROW(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), std::invalid_argument);
  EXPECT_THROW(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), ConstantInputError);
}

// ---- label-free evaluation ----

TEST(EvaluateLabelFree, ReportInvariantsOnAFreshModel) {
  DatasetConfig dc;
  dc.image_size = 32;
  dc.n_source = 6;
  dc.n_target = 6;
  const Dataset d = Dataset::from_generated(generate_in_memory(dc));
  MetricConfig mc;
  const EvalContext ctx(d, mc);
  Rng rng(15);
  Model m = Model::build(seed_genome(), 4, rng);
  const MetricReport r = evaluate_label_free(m, ctx);
  EXPECT_GE(r.mmd, 0.0);
  EXPECT_GE(r.mean_ent, 0.0);
  EXPECT_LE(r.mean_ent, 1.0);
  EXPECT_LE(r.reent, 0.0);
  EXPECT_DOUBLE_EQ(r.macs_norm, 1.0);
  EXPECT_EQ(r.joint, joint_score(r.mmd, r.reent, r.macs_norm, r.lambda));
  EXPECT_FALSE(r.miou.has_value());
  EXPECT_EQ(d.target_label_reads(), 0u);
  Rng rng2(15);
  Model again = Model::build(seed_genome(), 4, rng2);
  EXPECT_EQ(to_json(evaluate_label_free(again, ctx)).dump(), to_json(r).dump());
}

TEST(MetricConfig, Validation) {
  EXPECT_THROW(metric_config_from_json(nlohmann::json{{"lambda", -1.0}}), ConfigError);
  EXPECT_THROW(metric_config_from_json(nlohmann::json{{"min_region", 1}}), ConfigError);
  EXPECT_THROW(metric_config_from_json(nlohmann::json{{"bins", "four"}}), ConfigError);
  EXPECT_EQ(metric_config_from_json(nlohmann::json{{"lambda", 0.2}}).lambda, 0.2);
}

#pragma once

#include "autoadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace autoadapt {

// ---------------------------------------------------------------------------
// Maximum mean discrepancy
// ---------------------------------------------------------------------------

using FeatureSet = std::vector<std::vector<double>>;

namespace detail {

inline double sq_dist(const std::vector<double> &a, const std::vector<double> &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline void check_mmd_inputs(const FeatureSet &xs, const FeatureSet &ys) {
  if (xs.size() < 2 || ys.size() < 2)
    throw std::invalid_argument("mmd: need at least 2 samples per side, got " +
                                std::to_string(xs.size()) + " and " + std::to_string(ys.size()));
  const std::size_t d = xs.front().size();
  for (const auto *set : {&xs, &ys})
    for (const auto &v : *set)
      if (v.size() != d)
        throw std::invalid_argument("mmd: feature dimension mismatch (" + std::to_string(v.size()) +
                                    " vs " + std::to_string(d) + ")");
}

} // namespace detail

/// Median of all pairwise Euclidean distances in the pooled sample; 1 if that median is 0.
inline double median_heuristic_bandwidth(const FeatureSet &xs, const FeatureSet &ys) {
  std::vector<const std::vector<double> *> pooled;
  for (const auto &v : xs)
    pooled.push_back(&v);
  for (const auto &v : ys)
    pooled.push_back(&v);
  std::vector<double> d;
  d.reserve(pooled.size() * (pooled.size() - 1) / 2);
  for (std::size_t i = 0; i < pooled.size(); ++i)
    for (std::size_t j = i + 1; j < pooled.size(); ++j)
      d.push_back(std::sqrt(detail::sq_dist(*pooled[i], *pooled[j])));
  if (d.empty())
    return 1.0;
  const std::size_t mid = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<long>(mid), d.end());
  double med = d[mid];
  if (d.size() % 2 == 0) {
    const double lower = *std::max_element(d.begin(), d.begin() + static_cast<long>(mid));
    med = 0.5 * (med + lower);
  }
  return med > 0.0 ? med : 1.0;
}

/// Gram matrix of the Gaussian kernel exp(-|a-b|^2 / (2 bw^2)) over the pooled
/// sample [xs; ys].
inline std::vector<double> pooled_gram(const FeatureSet &xs, const FeatureSet &ys, double bw) {
  const std::size_t m = xs.size(), n = ys.size(), t = m + n;
  auto at = [&](std::size_t i) -> const std::vector<double> & { return i < m ? xs[i] : ys[i - m]; };
  std::vector<double> K(t * t);
  const double inv = 1.0 / (2.0 * bw * bw);
  for (std::size_t i = 0; i < t; ++i) {
    K[i * t + i] = 1.0;
    for (std::size_t j = i + 1; j < t; ++j)
      K[i * t + j] = K[j * t + i] = std::exp(-detail::sq_dist(at(i), at(j)) * inv);
  }
  return K;
}

/// Unbiased squared-MMD U-statistic given a pooled Gram matrix and, for each
/// pooled index, whether it belongs to the first sample.
inline double mmd2_unbiased_from_gram(std::span<const double> K, std::span<const char> in_first) {
  const std::size_t t = in_first.size();
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  std::size_t m = 0;
  for (char f : in_first)
    m += f != 0;
  const std::size_t n = t - m;
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = 0; j < t; ++j) {
      if (i == j)
        continue;
      const double k = K[i * t + j];
      if (in_first[i] && in_first[j])
        sxx += k;
      else if (!in_first[i] && !in_first[j])
        syy += k;
      else if (in_first[i])
        sxy += k;
    }
  const double md = static_cast<double>(m), nd = static_cast<double>(n);
  return sxx / (md * (md - 1)) + syy / (nd * (nd - 1)) - 2.0 * sxy / (md * nd);
}

/// Unbiased squared MMD with a Gaussian kernel; bandwidth from the median heuristic
/// unless given. Can be slightly negative.
inline double mmd2_unbiased(const FeatureSet &xs, const FeatureSet &ys,
                            std::optional<double> bandwidth = std::nullopt) {
  detail::check_mmd_inputs(xs, ys);
  const double bw = bandwidth ? *bandwidth : median_heuristic_bandwidth(xs, ys);
  const auto K = pooled_gram(xs, ys, bw);
  std::vector<char> first(xs.size() + ys.size(), 0);
  std::fill(first.begin(), first.begin() + static_cast<long>(xs.size()), 1);
  return mmd2_unbiased_from_gram(K, first);
}

/// sqrt(max(0, unbiased squared MMD)).
inline double mmd(const FeatureSet &xs, const FeatureSet &ys) {
  return std::sqrt(std::max(0.0, mmd2_unbiased(xs, ys)));
}

// ---------------------------------------------------------------------------
// Entropy of softmax maps
// ---------------------------------------------------------------------------

/// 0 * log 0 := 0
inline double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

/// A single softmax map, C x H x W, row-major planes.
struct ProbMap {
  std::size_t c = 0, h = 0, w = 0;
  std::vector<double> p;

  double at(std::size_t cls, std::size_t y, std::size_t x) const { return p[(cls * h + y) * w + x]; }

  static ProbMap from_tensor(const Tensor &t, std::size_t n = 0) {
    ProbMap m{t.c(), t.h(), t.w(), {}};
    m.p.assign(t.plane(n, 0), t.plane(n, 0) + t.c() * t.h() * t.w());
    return m;
  }
};

inline void check_prob_map(const ProbMap &m) {
  const std::size_t plane = m.h * m.w;
  if (m.p.size() != m.c * plane)
    throw std::invalid_argument("probability map size does not match its extents");
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.c; ++c) {
      const double v = m.p[c * plane + i];
      if (v < 0.0)
        throw std::invalid_argument("probability map has a negative entry at pixel " +
                                    std::to_string(i));
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6)
      throw std::invalid_argument("probabilities at pixel " + std::to_string(i) + " sum to " +
                                  std::to_string(s));
  }
}

/// Normalized per-pixel entropy -(1/log C) sum_c p log p, in [0, 1]. Returns H*W values.
inline std::vector<double> pixel_entropy(const ProbMap &m) {
  check_prob_map(m);
  const std::size_t plane = m.h * m.w;
  const double norm = -1.0 / std::log(static_cast<double>(m.c));
  std::vector<double> e(plane, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.c; ++c)
      s += plogp(m.p[c * plane + i]);
    e[i] = norm * s;
  }
  return e;
}

inline double mean_entropy(std::span<const double> ent) {
  if (ent.empty())
    throw std::invalid_argument("mean_entropy: empty entropy map");
  return std::accumulate(ent.begin(), ent.end(), 0.0) / static_cast<double>(ent.size());
}

// ---------------------------------------------------------------------------
// Appearance regions
// ---------------------------------------------------------------------------

struct RegionPartition {
  std::size_t h = 0, w = 0;
  std::vector<int> region;         // H*W region ids in [0, R)
  std::vector<std::size_t> counts; // per region pixel count

  std::size_t num_regions() const { return counts.size(); }
};

struct PartitionConfig {
  int blur_radius = 1;
  int bins = 4;
  std::size_t min_region = 16;
};

namespace detail {

/// 4-connected components of equal codes; ids assigned in row-major discovery order.
inline std::vector<int> label_components(const std::vector<int> &code, std::size_t h,
                                         std::size_t w, int &num) {
  std::vector<int> id(h * w, -1);
  num = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < h * w; ++s) {
    if (id[s] >= 0)
      continue;
    id[s] = num;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      const std::size_t y = p / w, x = p % w;
      auto visit = [&](std::size_t q) {
        if (id[q] < 0 && code[q] == code[s]) {
          id[q] = num;
          stack.push_back(q);
        }
      };
      if (y > 0) visit(p - w);
      if (y + 1 < h) visit(p + w);
      if (x > 0) visit(p - 1);
      if (x + 1 < w) visit(p + 1);
    }
    ++num;
  }
  return id;
}

/// Relabels ids to 0..R-1 in row-major first-appearance order.
inline RegionPartition compact_regions(const std::vector<int> &raw, std::size_t h, std::size_t w) {
  RegionPartition out{h, w, std::vector<int>(h * w), {}};
  std::map<int, int> remap;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto [it, inserted] = remap.emplace(raw[i], static_cast<int>(remap.size()));
    if (inserted)
      out.counts.push_back(0);
    out.region[i] = it->second;
    ++out.counts[static_cast<std::size_t>(it->second)];
  }
  return out;
}

} // namespace detail

/// Low-level appearance code per pixel: box blur, then per-channel quantization into
/// `bins` levels, combined into one integer.
inline std::vector<int> appearance_codes(const Tensor &image, const PartitionConfig &cfg) {
  const std::size_t H = image.h(), W = image.w(), C = image.c();
  const long r = cfg.blur_radius;
  std::vector<int> code(H * W, 0);
  for (std::size_t c = 0; c < C; ++c) {
    const double *src = image.plane(0, c);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double sum = 0.0;
        int cnt = 0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
            if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
              continue;
            sum += src[static_cast<std::size_t>(yy) * W + static_cast<std::size_t>(xx)];
            ++cnt;
          }
        const double v = std::clamp(sum / cnt, 0.0, 1.0);
        const int bin = std::min(cfg.bins - 1, static_cast<int>(v * cfg.bins));
        code[y * W + x] = code[y * W + x] * cfg.bins + bin;
      }
  }
  return code;
}

/// Partitions an image (1x3xHxW, values in [0,1]) into 4-connected regions of equal
/// appearance code, then repeatedly merges the smallest region below min_region
/// (ties: lowest id) into the neighbour sharing the longest boundary (ties: lowest id).
inline RegionPartition region_partition(const Tensor &image, const PartitionConfig &cfg = {}) {
  const std::size_t H = image.h(), W = image.w();
  int num = 0;
  std::vector<int> id = detail::label_components(appearance_codes(image, cfg), H, W, num);

  std::vector<std::size_t> size(static_cast<std::size_t>(num), 0);
  for (int v : id)
    ++size[static_cast<std::size_t>(v)];
  std::vector<std::map<int, std::size_t>> border(static_cast<std::size_t>(num));
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      const int a = id[y * W + x];
      if (x + 1 < W) {
        const int b = id[y * W + x + 1];
        if (a != b) {
          ++border[static_cast<std::size_t>(a)][b];
          ++border[static_cast<std::size_t>(b)][a];
        }
      }
      if (y + 1 < H) {
        const int b = id[(y + 1) * W + x];
        if (a != b) {
          ++border[static_cast<std::size_t>(a)][b];
          ++border[static_cast<std::size_t>(b)][a];
        }
      }
    }

  // union-find style forwarding: parent[r] = region r was merged into
  std::vector<int> parent(static_cast<std::size_t>(num));
  std::iota(parent.begin(), parent.end(), 0);
  std::set<std::pair<std::size_t, int>> small; // (size, id)
  for (int r = 0; r < num; ++r)
    if (size[static_cast<std::size_t>(r)] < cfg.min_region)
      small.emplace(size[static_cast<std::size_t>(r)], r);
  std::size_t alive = static_cast<std::size_t>(num);
  while (!small.empty() && alive > 1) {
    const int a = small.begin()->second;
    small.erase(small.begin());
    auto &ba = border[static_cast<std::size_t>(a)];
    int target = -1;
    std::size_t best = 0;
    for (const auto &[nb, len] : ba)
      if (len > best) { // map iterates ids ascending, so ties keep the lowest id
        best = len;
        target = nb;
      }
    if (target < 0)
      continue; // isolated (cannot happen on a connected grid with >1 region)
    const auto t = static_cast<std::size_t>(target);
    if (size[t] < cfg.min_region)
      small.erase({size[t], target});
    size[t] += size[static_cast<std::size_t>(a)];
    size[static_cast<std::size_t>(a)] = 0;
    parent[static_cast<std::size_t>(a)] = target;
    for (const auto &[nb, len] : ba) {
      auto &bn = border[static_cast<std::size_t>(nb)];
      bn.erase(a);
      if (nb == target)
        continue;
      border[t][nb] += len;
      bn[target] += len;
    }
    ba.clear();
    --alive;
    if (size[t] < cfg.min_region)
      small.emplace(size[t], target);
  }
  for (int &v : id) {
    while (parent[static_cast<std::size_t>(v)] != v)
      v = parent[static_cast<std::size_t>(v)];
  }
  return detail::compact_regions(id, H, W);
}

// ---------------------------------------------------------------------------
// Regional weighted entropy
// ---------------------------------------------------------------------------

/// For each region r and class c:
///   beta_r * (1 / log|r|) * sum_{pixels in r} p log p,   beta_r = |r| / sum |r'|
/// summed over regions and averaged over classes. p is used as-is (no per-region
/// renormalization), so the score is <= 0 and more negative means flatter predictions.
inline double reent(const ProbMap &m, const RegionPartition &part) {
  if (part.h != m.h || part.w != m.w)
    throw std::invalid_argument("reent: partition is " + std::to_string(part.h) + "x" +
                                std::to_string(part.w) + " but map is " + std::to_string(m.h) +
                                "x" + std::to_string(m.w));
  const std::size_t R = part.num_regions(), plane = m.h * m.w;
  double total_area = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    if (part.counts[r] < 2)
      throw std::invalid_argument("reent: region " + std::to_string(r) +
                                  " has fewer than 2 pixels");
    total_area += static_cast<double>(part.counts[r]);
  }
  // per-region sum over pixels and classes of p log p
  std::vector<double> sums(R, 0.0);
  for (std::size_t i = 0; i < plane; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.c; ++c)
      s += plogp(m.p[c * plane + i]);
    sums[static_cast<std::size_t>(part.region[i])] += s;
  }
  double score = 0.0;
  for (std::size_t r = 0; r < R; ++r) {
    const double area = static_cast<double>(part.counts[r]);
    score += (area / total_area) / std::log(area) * sums[r];
  }
  return score / static_cast<double>(m.c);
}

// ---------------------------------------------------------------------------
// Joint label-free score
// ---------------------------------------------------------------------------

inline double joint_score(double mmd_value, double reent_value, double macs_norm, double lambda) {
  if (lambda < 0.0)
    throw std::invalid_argument("joint_score: lambda must be >= 0");
  return mmd_value + reent_value + lambda * macs_norm;
}

/// Label-free evaluation record for one candidate.
struct MetricReport {
  double mmd = 0.0;
  double mean_ent = 0.0;
  double reent = 0.0;
  double macs_norm = 1.0;
  std::uint64_t macs = 0;
  double lambda = 0.01;
  double joint = 0.0;
  std::optional<double> miou;

  void recompute_joint() { joint = joint_score(mmd, reent, macs_norm, lambda); }
};

// ---------------------------------------------------------------------------
// Labeled evaluation (validation studies only)
// ---------------------------------------------------------------------------

class ConfusionMatrix {
public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : c_(num_classes), m_(num_classes * num_classes, 0) {}

  void add(std::span<const int> pred, std::span<const int> gt) {
    if (pred.size() != gt.size())
      throw std::invalid_argument("miou: prediction has " + std::to_string(pred.size()) +
                                  " pixels, ground truth " + std::to_string(gt.size()));
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] < 0 || gt[i] < 0 || static_cast<std::size_t>(pred[i]) >= c_ ||
          static_cast<std::size_t>(gt[i]) >= c_)
        throw std::invalid_argument("miou: label value outside [0,C)");
      ++m_[static_cast<std::size_t>(gt[i]) * c_ + static_cast<std::size_t>(pred[i])];
    }
  }

  std::uint64_t at(std::size_t gt, std::size_t pred) const { return m_[gt * c_ + pred]; }

  /// IoU per class; NaN for classes absent from both prediction and ground truth.
  std::vector<double> per_class_iou() const {
    std::vector<double> iou(c_);
    for (std::size_t k = 0; k < c_; ++k) {
      std::uint64_t tp = at(k, k), fp = 0, fn = 0;
      for (std::size_t j = 0; j < c_; ++j)
        if (j != k) {
          fp += at(j, k);
          fn += at(k, j);
        }
      const std::uint64_t denom = tp + fp + fn;
      iou[k] = denom ? static_cast<double>(tp) / static_cast<double>(denom)
                     : std::numeric_limits<double>::quiet_NaN();
    }
    return iou;
  }

  double mean_iou() const {
    double s = 0.0;
    int n = 0;
    for (double v : per_class_iou())
      if (!std::isnan(v)) {
        s += v;
        ++n;
      }
    return n ? s / n : 0.0;
  }

private:
  std::size_t c_;
  std::vector<std::uint64_t> m_;
};

struct MiouResult {
  std::vector<double> per_class;
  double mean = 0.0;
};

inline MiouResult miou(std::span<const int> pred, std::span<const int> gt, std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, gt);
  return {cm.per_class_iou(), cm.mean_iou()};
}

/// Per-pixel argmax over classes of a (1, C, H, W) tensor.
inline std::vector<int> argmax_channels(const Tensor &t, std::size_t n = 0) {
  const std::size_t plane = t.h() * t.w();
  std::vector<int> out(plane, 0);
  for (std::size_t i = 0; i < plane; ++i) {
    double best = t.plane(n, 0)[i];
    for (std::size_t c = 1; c < t.c(); ++c)
      if (t.plane(n, c)[i] > best) {
        best = t.plane(n, c)[i];
        out[i] = static_cast<int>(c);
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rank correlation
// ---------------------------------------------------------------------------

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]])
      ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      rank[order[k]] = avg;
    i = j + 1;
  }
  return rank;
}

struct ConstantInputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw ConstantInputError("correlation undefined: one input is constant");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of average ranks.
inline double spearman(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size())
    throw std::invalid_argument("spearman: length mismatch (" + std::to_string(xs.size()) + " vs " +
                                std::to_string(ys.size()) + ")");
  if (xs.size() < 3)
    throw std::invalid_argument("spearman: need at least 3 pairs");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  return pearson(rx, ry);
}

} // namespace autoadapt

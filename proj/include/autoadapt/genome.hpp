#pragma once

#include "autoadapt/rng.hpp"
#include "autoadapt/tensor.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace autoadapt {

// Fixed desk-scale channel plan. Mutations never touch channel counts, so every
// stage interface is stable and weight transfer between genomes is always defined.
inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kStemChannels = 8;
inline constexpr std::array<std::size_t, 3> kStageChannels{16, 32, 32};
inline constexpr std::array<int, 3> kStageStride{2, 2, 1};
inline constexpr std::size_t kHeadChannels = 16;
inline constexpr std::size_t kSeReduction = 4;
inline constexpr std::size_t kAttentionKeyChannels = 8;
inline constexpr std::size_t kLowLevelProjChannels = 8;
inline constexpr std::size_t kFeatureChannels = kStageChannels[2];

enum class CropRatio { eighth, quarter, half, three_quarters };
enum class HeadType { aspp, spatial_attention, low_level };
enum class AuxTap { none, stage2, stage3 };

inline double crop_ratio_value(CropRatio r) {
  switch (r) {
  case CropRatio::eighth: return 1.0 / 8.0;
  case CropRatio::quarter: return 1.0 / 4.0;
  case CropRatio::half: return 1.0 / 2.0;
  case CropRatio::three_quarters: return 3.0 / 4.0;
  }
  return 0.0;
}

inline const std::array<std::array<int, 4>, 2> &aspp_rate_sets() {
  static const std::array<std::array<int, 4>, 2> sets{{{6, 12, 18, 24}, {6, 18, 24, 36}}};
  return sets;
}

struct StageGene {
  int num_blocks = 2;  // {1,2,3}
  int kernel_size = 3; // {3,5,7}
  int dilation = 1;    // {1,2,4}
  bool se_enabled = false;
  bool operator==(const StageGene &) const = default;
};

/// The mutable fields of a genome, in canonical order. Every field has a small
/// finite domain addressed by a choice index.
enum class Field : int {
  crop_ratio = 0,
  // stage s field f lives at 1 + 4*s + f, f in {blocks, kernel, dilation, se}
  stage1_blocks, stage1_kernel, stage1_dilation, stage1_se,
  stage2_blocks, stage2_kernel, stage2_dilation, stage2_se,
  stage3_blocks, stage3_kernel, stage3_dilation, stage3_se,
  head,
  aspp_rates,
  aux_tap,
};
inline constexpr int kNumFields = 16;

inline const char *field_name(Field f) {
  static constexpr const char *names[kNumFields] = {
      "crop_ratio",      "stage1.num_blocks", "stage1.kernel_size", "stage1.dilation",
      "stage1.se",       "stage2.num_blocks", "stage2.kernel_size", "stage2.dilation",
      "stage2.se",       "stage3.num_blocks", "stage3.kernel_size", "stage3.dilation",
      "stage3.se",       "head",              "aspp_rates",         "aux_tap"};
  return names[static_cast<int>(f)];
}

inline constexpr std::array<int, 3> kBlockChoices{1, 2, 3};
inline constexpr std::array<int, 3> kKernelChoices{3, 5, 7};
inline constexpr std::array<int, 3> kDilationChoices{1, 2, 4};

/// Number of alternatives for a field.
inline int field_domain_size(Field f) {
  switch (f) {
  case Field::crop_ratio: return 4;
  case Field::head: return 3;
  case Field::aspp_rates: return 2;
  case Field::aux_tap: return 3;
  default: break;
  }
  switch ((static_cast<int>(f) - 1) % 4) {
  case 0: return 3;
  case 1: return 3;
  case 2: return 3;
  default: return 2;
  }
}

namespace detail {
template <std::size_t N> int choice_of(const std::array<int, N> &domain, int value) {
  for (std::size_t i = 0; i < N; ++i)
    if (domain[i] == value)
      return static_cast<int>(i);
  return -1;
}
} // namespace detail

struct Genome {
  CropRatio crop_ratio = CropRatio::half;
  std::array<StageGene, 3> stages{};
  HeadType head = HeadType::aspp;
  int aspp_variant = 0; // index into aspp_rate_sets()
  AuxTap aux_tap = AuxTap::none;

  bool operator==(const Genome &) const = default;

  const std::array<int, 4> &aspp_rates() const {
    return aspp_rate_sets().at(static_cast<std::size_t>(aspp_variant));
  }

  /// Choice index of a field; -1 if the stored value is outside its domain.
  int get(Field f) const {
    switch (f) {
    case Field::crop_ratio: return static_cast<int>(crop_ratio);
    case Field::head: return static_cast<int>(head);
    case Field::aspp_rates: return aspp_variant;
    case Field::aux_tap: return static_cast<int>(aux_tap);
    default: break;
    }
    const int idx = static_cast<int>(f) - 1;
    const StageGene &s = stages[static_cast<std::size_t>(idx / 4)];
    switch (idx % 4) {
    case 0: return detail::choice_of(kBlockChoices, s.num_blocks);
    case 1: return detail::choice_of(kKernelChoices, s.kernel_size);
    case 2: return detail::choice_of(kDilationChoices, s.dilation);
    default: return s.se_enabled ? 1 : 0;
    }
  }

  void set(Field f, int choice) {
    if (choice < 0 || choice >= field_domain_size(f))
      throw std::out_of_range(std::string("choice ") + std::to_string(choice) +
                              " out of domain for field " + field_name(f));
    switch (f) {
    case Field::crop_ratio: crop_ratio = static_cast<CropRatio>(choice); return;
    case Field::head: head = static_cast<HeadType>(choice); return;
    case Field::aspp_rates: aspp_variant = choice; return;
    case Field::aux_tap: aux_tap = static_cast<AuxTap>(choice); return;
    default: break;
    }
    const int idx = static_cast<int>(f) - 1;
    StageGene &s = stages[static_cast<std::size_t>(idx / 4)];
    const auto c = static_cast<std::size_t>(choice);
    switch (idx % 4) {
    case 0: s.num_blocks = kBlockChoices[c]; return;
    case 1: s.kernel_size = kKernelChoices[c]; return;
    case 2: s.dilation = kDilationChoices[c]; return;
    default: s.se_enabled = choice == 1; return;
    }
  }
};

/// Throws std::invalid_argument naming the first out-of-domain field.
inline void validate(const Genome &g) {
  for (int i = 0; i < kNumFields; ++i) {
    const Field f = static_cast<Field>(i);
    const int c = g.get(f);
    if (c < 0 || c >= field_domain_size(f))
      throw std::invalid_argument(std::string("genome field ") + field_name(f) +
                                  " is outside its domain");
  }
}

inline bool is_valid(const Genome &g) {
  try {
    validate(g);
    return true;
  } catch (const std::invalid_argument &) {
    return false;
  }
}

/// Baseline architecture: crop 1/2, 2 blocks per stage with k=3 and dilations
/// 1,2,4, no SE, ASPP head with rates [6,12,18,24], no auxiliary tap.
inline Genome seed_genome() {
  Genome g;
  g.crop_ratio = CropRatio::half;
  g.stages = {StageGene{2, 3, 1, false}, StageGene{2, 3, 2, false}, StageGene{2, 3, 4, false}};
  g.head = HeadType::aspp;
  g.aspp_variant = 0;
  g.aux_tap = AuxTap::none;
  return g;
}

/// Hamming distance over the 16 fields.
inline int edit_distance(const Genome &a, const Genome &b) {
  int d = 0;
  for (int i = 0; i < kNumFields; ++i)
    d += a.get(static_cast<Field>(i)) != b.get(static_cast<Field>(i));
  return d;
}

/// Fields that differ between a and b.
inline std::vector<Field> differing_fields(const Genome &a, const Genome &b) {
  std::vector<Field> out;
  for (int i = 0; i < kNumFields; ++i)
    if (a.get(static_cast<Field>(i)) != b.get(static_cast<Field>(i)))
      out.push_back(static_cast<Field>(i));
  return out;
}

/// A (possibly restricted) view of the genome space: fields outside
/// `mutable_fields` stay at their value in `base`.
struct SearchSpace {
  Genome base = seed_genome();
  std::vector<Field> mutable_fields = all_fields();

  static std::vector<Field> all_fields() {
    std::vector<Field> f;
    for (int i = 0; i < kNumFields; ++i)
      f.push_back(static_cast<Field>(i));
    return f;
  }

  std::uint64_t cardinality() const {
    std::uint64_t n = 1;
    for (Field f : mutable_fields)
      n *= static_cast<std::uint64_t>(field_domain_size(f));
    return n;
  }

  Genome random_genome(Rng &rng) const {
    Genome g = base;
    for (Field f : mutable_fields)
      g.set(f, static_cast<int>(rng.index(static_cast<std::uint64_t>(field_domain_size(f)))));
    return g;
  }

  /// Resamples exactly one mutable field to a different value.
  Genome mutate(const Genome &parent, Rng &rng, Field *mutated = nullptr) const {
    if (mutable_fields.empty())
      throw std::logic_error("search space has no mutable fields");
    const Field f = mutable_fields[rng.index(mutable_fields.size())];
    const int cur = parent.get(f);
    int next = static_cast<int>(rng.index(static_cast<std::uint64_t>(field_domain_size(f) - 1)));
    if (next >= cur)
      ++next;
    Genome child = parent;
    child.set(f, next);
    if (mutated)
      *mutated = f;
    return child;
  }

  /// Enumerates every genome in the space in field-major order.
  std::vector<Genome> enumerate() const {
    std::vector<Genome> out;
    const std::uint64_t n = cardinality();
    out.reserve(n);
    for (std::uint64_t code = 0; code < n; ++code) {
      Genome g = base;
      std::uint64_t rest = code;
      for (Field f : mutable_fields) {
        const auto d = static_cast<std::uint64_t>(field_domain_size(f));
        g.set(f, static_cast<int>(rest % d));
        rest /= d;
      }
      out.push_back(g);
    }
    return out;
  }
};

inline Genome random_genome(Rng &rng) { return SearchSpace{}.random_genome(rng); }
inline Genome mutate(const Genome &parent, Rng &rng) { return SearchSpace{}.mutate(parent, rng); }

// ---------------------------------------------------------------------------
// Canonical JSON + hash
// ---------------------------------------------------------------------------

inline const char *to_string(CropRatio r) {
  static constexpr const char *s[] = {"1/8", "1/4", "1/2", "3/4"};
  return s[static_cast<int>(r)];
}
inline const char *to_string(HeadType h) {
  static constexpr const char *s[] = {"aspp", "spatial_attention", "low_level"};
  return s[static_cast<int>(h)];
}
inline const char *to_string(AuxTap a) {
  static constexpr const char *s[] = {"none", "stage2", "stage3"};
  return s[static_cast<int>(a)];
}

/// Fixed key order; this exact layout is what the genome hash is computed over.
inline nlohmann::ordered_json to_json(const Genome &g) {
  nlohmann::ordered_json j;
  j["crop_ratio"] = to_string(g.crop_ratio);
  auto stages = nlohmann::ordered_json::array();
  for (const StageGene &s : g.stages) {
    nlohmann::ordered_json sj;
    sj["num_blocks"] = s.num_blocks;
    sj["kernel_size"] = s.kernel_size;
    sj["dilation"] = s.dilation;
    sj["se"] = s.se_enabled;
    stages.push_back(std::move(sj));
  }
  j["stages"] = std::move(stages);
  j["head"] = to_string(g.head);
  j["aspp_rates"] = g.aspp_rates();
  j["aux_tap"] = to_string(g.aux_tap);
  return j;
}

inline std::string canonical_string(const Genome &g) { return to_json(g).dump(); }

inline std::uint64_t genome_hash(const Genome &g) { return fnv1a64(canonical_string(g)); }

namespace detail {
template <class E, std::size_t N>
E parse_enum(const std::string &s, const std::array<E, N> &values, const char *field) {
  for (E v : values)
    if (s == to_string(v))
      return v;
  throw std::invalid_argument(std::string("genome field ") + field + ": unknown value '" + s + "'");
}
} // namespace detail

template <class Json> Genome genome_from_json(const Json &j) {
  auto need = [&](const char *key) -> const Json & {
    if (!j.is_object() || !j.contains(key))
      throw std::invalid_argument(std::string("genome is missing field '") + key + "'");
    return j.at(key);
  };
  try {
    Genome g;
    g.crop_ratio = detail::parse_enum(
        need("crop_ratio").template get<std::string>(),
        std::array{CropRatio::eighth, CropRatio::quarter, CropRatio::half, CropRatio::three_quarters},
        "crop_ratio");
    const Json &stages = need("stages");
    if (!stages.is_array() || stages.size() != 3)
      throw std::invalid_argument("genome field stages must be an array of 3 stages");
    for (std::size_t i = 0; i < 3; ++i) {
      const Json &s = stages[i];
      g.stages[i].num_blocks = s.at("num_blocks").template get<int>();
      g.stages[i].kernel_size = s.at("kernel_size").template get<int>();
      g.stages[i].dilation = s.at("dilation").template get<int>();
      g.stages[i].se_enabled = s.at("se").template get<bool>();
    }
    g.head = detail::parse_enum(
        need("head").template get<std::string>(),
        std::array{HeadType::aspp, HeadType::spatial_attention, HeadType::low_level}, "head");
    const auto rates = need("aspp_rates").template get<std::vector<int>>();
    g.aspp_variant = -1;
    for (std::size_t v = 0; v < aspp_rate_sets().size(); ++v)
      if (rates == std::vector<int>(aspp_rate_sets()[v].begin(), aspp_rate_sets()[v].end()))
        g.aspp_variant = static_cast<int>(v);
    if (g.aspp_variant < 0)
      throw std::invalid_argument("genome field aspp_rates: unsupported rate set");
    g.aux_tap = detail::parse_enum(need("aux_tap").template get<std::string>(),
                                   std::array{AuxTap::none, AuxTap::stage2, AuxTap::stage3},
                                   "aux_tap");
    validate(g);
    return g;
  } catch (const nlohmann::json::exception &e) {
    throw std::invalid_argument(std::string("malformed genome JSON: ") + e.what());
  }
}

} // namespace autoadapt

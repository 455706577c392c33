#pragma once

#include "autoadapt/dataset.hpp"
#include "autoadapt/macs.hpp"
#include "autoadapt/metrics.hpp"
#include "autoadapt/model.hpp"

#include <nlohmann/json.hpp>

namespace autoadapt {

struct MetricConfig {
  double lambda = 0.01;
  PartitionConfig partition;
  std::size_t mmd_cap = 128; // images per domain feeding the MMD estimate

  void validate(const std::string &section = "metrics") const {
    if (lambda < 0.0)
      throw ConfigError(section + ".lambda must be >= 0");
    if (partition.bins < 1)
      throw ConfigError(section + ".bins must be >= 1");
    if (partition.min_region < 2)
      throw ConfigError(section + ".min_region must be >= 2");
    if (partition.blur_radius < 0)
      throw ConfigError(section + ".blur_radius must be >= 0");
    if (mmd_cap < 2)
      throw ConfigError(section + ".mmd_cap must be >= 2");
  }
};

inline nlohmann::ordered_json to_json(const MetricConfig &c) {
  return {{"lambda", c.lambda},
          {"min_region", c.partition.min_region},
          {"bins", c.partition.bins},
          {"blur_radius", c.partition.blur_radius},
          {"mmd_cap", c.mmd_cap}};
}

template <class Json> MetricConfig metric_config_from_json(const Json &j, MetricConfig c = {}) {
  auto field = [&](const char *key, auto &dst) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception &) {
        throw ConfigError(std::string("metrics.") + key + " has the wrong type");
      }
    }
  };
  field("lambda", c.lambda);
  field("min_region", c.partition.min_region);
  field("bins", c.partition.bins);
  field("blur_radius", c.partition.blur_radius);
  field("mmd_cap", c.mmd_cap);
  c.validate();
  return c;
}

/// Read-only state shared by every candidate evaluation: which images are scored,
/// their appearance partitions, and the MACs normalizer.
class EvalContext {
public:
  EvalContext(const Dataset &data, const MetricConfig &cfg)
      : data_(&data), cfg_(cfg),
        n_src_(std::min(cfg.mmd_cap, data.source_size())),
        n_tgt_(std::min(cfg.mmd_cap, data.target_adapt_size())),
        seed_macs_(macs(seed_genome(), data.image_size(), data.image_size()).total) {
    cfg_.validate();
    partitions_.reserve(n_tgt_);
    for (std::size_t i = 0; i < n_tgt_; ++i)
      partitions_.push_back(region_partition(data.target_adapt_image(i), cfg_.partition));
  }

  const Dataset &data() const { return *data_; }
  const MetricConfig &config() const { return cfg_; }
  std::size_t source_count() const { return n_src_; }
  std::size_t target_count() const { return n_tgt_; }
  const RegionPartition &partition(std::size_t i) const { return partitions_.at(i); }
  std::uint64_t seed_macs() const { return seed_macs_; }

private:
  const Dataset *data_;
  MetricConfig cfg_;
  std::size_t n_src_, n_tgt_;
  std::uint64_t seed_macs_;
  std::vector<RegionPartition> partitions_;
};

namespace detail {
inline std::vector<double> feature_vector(const ForwardResult &r) { return r.features.vec(); }
} // namespace detail

/// Label-free score of a trained model: source/target feature MMD, mean target entropy,
/// mean target ReEnt, and the MACs-penalized joint score.
inline MetricReport evaluate_label_free(Model &m, const EvalContext &ctx) {
  const Dataset &d = ctx.data();
  MetricReport r;
  r.lambda = ctx.config().lambda;
  FeatureSet fs, ft;
  for (std::size_t i = 0; i < ctx.source_count(); ++i)
    fs.push_back(detail::feature_vector(m.net.forward(d.source(i).image)));
  double ent = 0.0, re = 0.0;
  for (std::size_t i = 0; i < ctx.target_count(); ++i) {
    ForwardResult out = m.net.forward(d.target_adapt_image(i));
    ft.push_back(detail::feature_vector(out));
    const ProbMap p = ProbMap::from_tensor(softmax_channels(out.logits));
    const auto e = pixel_entropy(p);
    ent += mean_entropy(e);
    re += reent(p, ctx.partition(i));
  }
  const double nt = static_cast<double>(ctx.target_count());
  r.mmd = mmd(fs, ft);
  r.mean_ent = ent / nt;
  r.reent = re / nt;
  r.macs = macs(m.genome(), d.image_size(), d.image_size()).total;
  r.macs_norm = static_cast<double>(r.macs) / static_cast<double>(ctx.seed_macs());
  r.recompute_joint();
  return r;
}

/// Target mIoU over the held-out evaluation split; requires unlocked labels.
inline MiouResult evaluate_target_miou(Model &m, const Dataset &d, const Dataset::EvalLabels &labels) {
  ConfusionMatrix cm(m.num_classes());
  for (std::size_t i = 0; i < d.target_eval_size(); ++i) {
    ForwardResult out = m.net.forward(d.target_eval_image(i));
    cm.add(argmax_channels(out.logits), labels.label(i));
  }
  return {cm.per_class_iou(), cm.mean_iou()};
}

/// Source mIoU over the first `cap` labelled source images.
inline MiouResult evaluate_source_miou(Model &m, const Dataset &d, std::size_t cap) {
  ConfusionMatrix cm(m.num_classes());
  const std::size_t n = std::min(cap, d.source_size());
  for (std::size_t i = 0; i < n; ++i) {
    ForwardResult out = m.net.forward(d.source(i).image);
    cm.add(argmax_channels(out.logits), d.source(i).label);
  }
  return {cm.per_class_iou(), cm.mean_iou()};
}

inline nlohmann::ordered_json to_json(const MetricReport &r) {
  nlohmann::ordered_json j{{"mmd", r.mmd},       {"mean_ent", r.mean_ent}, {"reent", r.reent},
                           {"macs", r.macs},     {"macs_norm", r.macs_norm},
                           {"lambda", r.lambda}, {"joint", r.joint}};
  if (r.miou)
    j["miou"] = *r.miou;
  return j;
}

} // namespace autoadapt

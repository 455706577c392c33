#pragma once

#include "autoadapt/network.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <string>

namespace autoadapt {

/// Segmentation network plus its adversarial companions.
struct Model {
  Network net;
  Discriminator disc;
  std::optional<Discriminator> aux_disc;

  static Model build(const Genome &g, std::size_t num_classes, Rng &rng) {
    Model m{Network::build(g, num_classes, rng), Discriminator::build(num_classes, rng, "disc"),
            std::nullopt};
    if (g.aux_tap != AuxTap::none)
      m.aux_disc = Discriminator::build(num_classes, rng, "aux_disc");
    return m;
  }

  const Genome &genome() const { return net.genome(); }
  std::size_t num_classes() const { return net.num_classes(); }

  std::vector<ParamRef> generator_parameters() { return net.parameters(); }

  std::vector<ParamRef> discriminator_parameters() {
    auto o = disc.parameters();
    if (aux_disc)
      for (auto &p : aux_disc->parameters())
        o.push_back(p);
    return o;
  }

  std::vector<ParamRef> all_parameters() {
    auto o = generator_parameters();
    for (auto &p : discriminator_parameters())
      o.push_back(p);
    return o;
  }
};

/// Plain-value snapshot of a model: genome, parameters by path, training state.
struct ModelState {
  Genome genome;
  std::size_t num_classes = 0;
  std::map<std::string, Tensor> params;
  std::uint64_t step = 0;
  std::string rng_state;

  bool operator==(const ModelState &o) const {
    return genome == o.genome && num_classes == o.num_classes && params == o.params &&
           step == o.step && rng_state == o.rng_state;
  }
};

inline ModelState snapshot(Model &m, std::uint64_t step = 0, const std::string &rng_state = {}) {
  ModelState s{m.genome(), m.num_classes(), {}, step, rng_state};
  for (const ParamRef &p : m.all_parameters()) {
    Tensor copy(p.tensor->shape(), p.tensor->vec());
    s.params.emplace(p.path, std::move(copy));
  }
  return s;
}

inline Model restore(const ModelState &s) {
  Rng scratch(0);
  Model m = Model::build(s.genome, s.num_classes, scratch);
  for (const ParamRef &p : m.all_parameters()) {
    auto it = s.params.find(p.path);
    if (it == s.params.end())
      throw std::runtime_error("checkpoint is missing parameter '" + p.path + "'");
    if (it->second.shape() != p.tensor->shape())
      throw ShapeError("checkpoint parameter '" + p.path + "' has shape " +
                       it->second.shape().str() + ", expected " + p.tensor->shape().str());
    p.tensor->vec() = it->second.vec();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Parameter remapping between genomes
// ---------------------------------------------------------------------------

namespace detail {

/// Copies a (Cout, Cin, ks, ks) kernel into (Cout, Cin, kd, kd): centered
/// embedding with a zero ring when growing, central crop when shrinking.
inline void resize_kernel_into(const Tensor &src, Tensor &dst) {
  if (src.n() != dst.n() || src.c() != dst.c())
    throw ShapeError("remap: kernel channel mismatch " + src.shape().str() + " vs " +
                     dst.shape().str());
  dst.fill(0.0);
  const std::size_t ks = src.h(), kd = dst.h();
  for (std::size_t o = 0; o < src.n(); ++o)
    for (std::size_t i = 0; i < src.c(); ++i)
      if (kd >= ks) {
        const std::size_t off = (kd - ks) / 2;
        for (std::size_t y = 0; y < ks; ++y)
          for (std::size_t x = 0; x < ks; ++x)
            dst.at(o, i, y + off, x + off) = src.at(o, i, y, x);
      } else {
        const std::size_t off = (ks - kd) / 2;
        for (std::size_t y = 0; y < kd; ++y)
          for (std::size_t x = 0; x < kd; ++x)
            dst.at(o, i, y, x) = src.at(o, i, y + off, x + off);
      }
}

inline void copy_params(const LayerParams &src, LayerParams &dst) {
  resize_kernel_into(src.weight, dst.weight);
  dst.bias.vec() = src.bias.vec();
}

/// Dirac-delta kernel (identity over channels) with N(0, sigma) noise on the
/// center tap; the outer ring and the bias are zero.
inline void init_near_identity(LayerParams &p, Rng &rng, double sigma) {
  if (p.cin() != p.cout())
    throw ShapeError("identity init needs Cin == Cout, got " + p.weight.shape().str());
  const std::size_t c = static_cast<std::size_t>(p.kernel / 2);
  p.weight.fill(0.0);
  for (std::size_t o = 0; o < p.cout(); ++o)
    for (std::size_t i = 0; i < p.cin(); ++i)
      p.weight.at(o, i, c, c) = (o == i ? 1.0 : 0.0) + rng.normal(0.0, sigma);
  p.bias.fill(0.0);
}

} // namespace detail

inline constexpr double kIdentityInitNoise = 1e-3;
inline constexpr double kNewSeGateBias = 4.0;

/// Builds a model for child_genome whose weights are transferred from source:
///  - kernel growth embeds the old kernel at the center (zero ring), shrink crops the center;
///  - dilation changes keep weights unchanged;
///  - added blocks start near identity, removed blocks are dropped;
///  - a newly enabled SE block gets zero fc weights and gate bias +4 (gate ~ 0.982);
///  - a different head type or aux tap starts fresh.
/// Discriminators are carried over when the child has the same companion.
inline Model remap_parameters(Model &source, const Genome &child_genome, Rng &rng) {
  validate(child_genome);
  Model child = Model::build(child_genome, source.num_classes(), rng);
  const Genome &sg = source.genome();
  Network &src = source.net;
  Network &dst = child.net;

  detail::copy_params(src.stem().conv.p, dst.stem().conv.p);
  for (std::size_t s = 0; s < 3; ++s) {
    Stage &ss = src.stage(s);
    Stage &ds = dst.stage(s);
    for (std::size_t b = 0; b < ds.blocks.size(); ++b) {
      if (b < ss.blocks.size())
        detail::copy_params(ss.blocks[b].conv.p, ds.blocks[b].conv.p);
      else
        detail::init_near_identity(ds.blocks[b].conv.p, rng, kIdentityInitNoise);
    }
    if (ds.se) {
      if (ss.se) {
        ds.se->p = ss.se->p;
      } else {
        ds.se->p.fc1.weight.fill(0.0);
        ds.se->p.fc1.bias.fill(0.0);
        ds.se->p.fc2.weight.fill(0.0);
        ds.se->p.fc2.bias.fill(kNewSeGateBias);
      }
    }
  }

  if (sg.head == child_genome.head) {
    if (auto *a = dst.head_as<AsppHead>()) {
      auto *b = src.head_as<AsppHead>();
      for (std::size_t i = 0; i < 4; ++i)
        detail::copy_params(b->branches[i].p, a->branches[i].p);
    } else if (auto *a = dst.head_as<SpatialAttention>()) {
      auto *b = src.head_as<SpatialAttention>();
      detail::copy_params(b->query.p, a->query.p);
      detail::copy_params(b->key.p, a->key.p);
      detail::copy_params(b->value.p, a->value.p);
      a->gamma = b->gamma;
      a->gamma.drop_grad();
      detail::copy_params(b->out.conv.p, a->out.conv.p);
    } else if (auto *a = dst.head_as<LowLevelHead>()) {
      auto *b = src.head_as<LowLevelHead>();
      detail::copy_params(b->project.conv.p, a->project.conv.p);
      detail::copy_params(b->fuse.conv.p, a->fuse.conv.p);
    }
    detail::copy_params(src.classifier().p, dst.classifier().p);
  }
  // A fresh head needs a fresh classifier too: the old one reads different features.

  if (dst.aux_classifier() && src.aux_classifier() && sg.aux_tap == child_genome.aux_tap)
    detail::copy_params(src.aux_classifier()->p, dst.aux_classifier()->p);

  auto copy_disc = [](Discriminator &from, Discriminator &to) {
    auto f = from.parameters();
    auto t = to.parameters();
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i].tensor->vec() = f[i].tensor->vec();
  };
  copy_disc(source.disc, child.disc);
  if (child.aux_disc && source.aux_disc)
    copy_disc(*source.aux_disc, *child.aux_disc);
  return child;
}

// ---------------------------------------------------------------------------
// Checkpoint directory: manifest.json + one tensor blob per parameter path.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const ModelState &s, const std::filesystem::path &dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["format"] = "autoadapt-checkpoint";
  j["version"] = 1;
  j["genome"] = to_json(s.genome);
  j["num_classes"] = s.num_classes;
  j["step"] = s.step;
  j["rng_state"] = s.rng_state;
  auto params = nlohmann::ordered_json::array();
  for (const auto &[path, t] : s.params) {
    const std::string file = path + ".bin";
    save_blob((dir / file).string(), t);
    params.push_back({{"path", path}, {"file", file}});
  }
  j["params"] = std::move(params);
  detail::write_file_bytes((dir / "manifest.json").string(), j.dump(2) + "\n");
}

inline ModelState load_checkpoint(const std::filesystem::path &dir) {
  const auto text = detail::read_file_bytes((dir / "manifest.json").string());
  const auto j = nlohmann::json::parse(text);
  if (j.value("format", "") != "autoadapt-checkpoint")
    throw std::runtime_error("'" + dir.string() + "' is not an autoadapt checkpoint");
  ModelState s;
  s.genome = genome_from_json(j.at("genome"));
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.step = j.at("step").get<std::uint64_t>();
  s.rng_state = j.at("rng_state").get<std::string>();
  for (const auto &p : j.at("params"))
    s.params.emplace(p.at("path").get<std::string>(),
                     load_blob((dir / p.at("file").get<std::string>()).string()));
  return s;
}

} // namespace autoadapt

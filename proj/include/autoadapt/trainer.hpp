#pragma once

#include "autoadapt/dataset.hpp"
#include "autoadapt/model.hpp"
#include "autoadapt/optim.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace autoadapt {

// The trainer sees source samples and target *images* only. Nothing in this header
// touches Dataset::unlock_eval_labels(), and nothing here reads the label-free
// evaluation metric: that score is never a training signal.

enum class AdversarialInput { softmax, entropy_weighted };

struct TrainConfig {
  std::size_t iterations = 300;
  double lr_gen = 0.01;
  double lr_disc = 0.001;
  double poly_power = 0.9;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda_adv = 0.001;
  double lambda_aux = 0.0001;
  double aux_seg_weight = 0.1;
  AdversarialInput adversarial_input = AdversarialInput::softmax;
  double crop_ratio = 0.0; // 0: the genome's crop ratio

  static TrainConfig proxy() { return {}; }
  static TrainConfig pretrain() {
    TrainConfig c;
    c.iterations = 2000;
    c.crop_ratio = 0.75;
    return c;
  }
  static TrainConfig retrain() {
    TrainConfig c;
    c.iterations = 3000;
    return c;
  }

  void validate(const std::string &section = "train") const {
    if (!(lr_gen > 0.0))
      throw ConfigError(section + ".lr_gen must be > 0");
    if (!(lr_disc > 0.0))
      throw ConfigError(section + ".lr_disc must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0))
      throw ConfigError(section + ".momentum must be in [0,1)");
    if (weight_decay < 0.0)
      throw ConfigError(section + ".weight_decay must be >= 0");
    if (lambda_adv < 0.0)
      throw ConfigError(section + ".lambda_adv must be >= 0");
    if (lambda_aux < 0.0)
      throw ConfigError(section + ".lambda_aux must be >= 0");
    if (aux_seg_weight < 0.0)
      throw ConfigError(section + ".aux_seg_weight must be >= 0");
    if (poly_power < 0.0)
      throw ConfigError(section + ".poly_power must be >= 0");
    if (!(crop_ratio == 0.0 || (crop_ratio > 0.0 && crop_ratio <= 1.0)))
      throw ConfigError(section + ".crop_ratio must be 0 (genome) or in (0,1]");
  }

  double crop_for(const Genome &g) const { return crop_ratio > 0.0 ? crop_ratio : crop_ratio_value(g.crop_ratio); }
};

inline nlohmann::ordered_json to_json(const TrainConfig &c) {
  return {{"iterations", c.iterations},
          {"lr_gen", c.lr_gen},
          {"lr_disc", c.lr_disc},
          {"poly_power", c.poly_power},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"lambda_adv", c.lambda_adv},
          {"lambda_aux", c.lambda_aux},
          {"aux_seg_weight", c.aux_seg_weight},
          {"adversarial_input",
           c.adversarial_input == AdversarialInput::softmax ? "softmax" : "entropy_weighted"},
          {"crop_ratio", c.crop_ratio}};
}

template <class Json>
TrainConfig train_config_from_json(const Json &j, TrainConfig c, const std::string &section) {
  auto field = [&](const char *key, auto &dst) {
    if (j.contains(key)) {
      try {
        j.at(key).get_to(dst);
      } catch (const nlohmann::json::exception &) {
        throw ConfigError(section + "." + key + " has the wrong type");
      }
    }
  };
  field("iterations", c.iterations);
  field("lr_gen", c.lr_gen);
  field("lr_disc", c.lr_disc);
  field("poly_power", c.poly_power);
  field("momentum", c.momentum);
  field("weight_decay", c.weight_decay);
  field("lambda_adv", c.lambda_adv);
  field("lambda_aux", c.lambda_aux);
  field("aux_seg_weight", c.aux_seg_weight);
  field("crop_ratio", c.crop_ratio);
  if (j.contains("adversarial_input")) {
    const std::string v = j.at("adversarial_input").template get<std::string>();
    if (v == "softmax")
      c.adversarial_input = AdversarialInput::softmax;
    else if (v == "entropy_weighted")
      c.adversarial_input = AdversarialInput::entropy_weighted;
    else
      throw ConfigError(section + ".adversarial_input must be softmax or entropy_weighted");
  }
  c.validate(section);
  return c;
}

struct StepLog {
  std::size_t step = 0;
  double loss_seg = 0.0;
  double loss_adv = 0.0;
  double loss_disc = 0.0;
  double lr = 0.0;
};

inline nlohmann::ordered_json to_json(const StepLog &s) {
  return {{"step", s.step}, {"loss_seg", s.loss_seg}, {"loss_adv", s.loss_adv},
          {"loss_disc", s.loss_disc}, {"lr", s.lr}};
}

struct AdaptedModel {
  Model model;
  std::vector<StepLog> log;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Discriminator input transform
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kLogFloor = 1e-30;

inline Tensor disc_input(const Tensor &p, AdversarialInput mode) {
  if (mode == AdversarialInput::softmax)
    return p;
  Tensor e(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i)
    e[i] = -p[i] * std::log(std::max(p[i], kLogFloor));
  return e;
}

inline Tensor disc_input_backward(const Tensor &p, const Tensor &grad, AdversarialInput mode) {
  if (mode == AdversarialInput::softmax)
    return grad;
  Tensor g(p.shape());
  for (std::size_t i = 0; i < p.numel(); ++i)
    g[i] = -(std::log(std::max(p[i], kLogFloor)) + 1.0) * grad[i];
  return g;
}

inline void require_finite_loss(double v, const char *what) {
  if (!std::isfinite(v))
    throw NumericError(std::string("non-finite ") + what + " loss");
}

} // namespace detail

/// Detached discriminator inputs produced during a generator pass.
struct GeneratorPass {
  double loss_seg = 0.0; // main + weighted aux segmentation loss
  double loss_adv = 0.0; // unweighted main adversarial (fooling) loss; 0 when lambda_adv == 0
  double total = 0.0;    // the objective that was differentiated
  Tensor d_src, d_tgt;
  std::optional<Tensor> aux_d_src, aux_d_tgt;
};

/// Accumulates generator gradients of
///   CE(src) + aux_seg_weight * CE_aux(src) + lambda_adv * BCE(D(G(tgt)), 1)
///   + lambda_aux * BCE(D_aux(G_aux(tgt)), 1)
/// into the network parameters. Discriminator parameters are not touched.
inline GeneratorPass generator_gradients(Model &m, const Sample &src, const Tensor &tgt,
                                         const TrainConfig &cfg) {
  GeneratorPass out;
  ForwardResult fs = m.net.forward(src.image);
  LossAndGrad ce = softmax_cross_entropy(fs.logits, src.label);
  std::optional<LossAndGrad> ce_aux;
  if (fs.aux_logits) {
    ce_aux = softmax_cross_entropy(*fs.aux_logits, src.label);
    for (double &g : ce_aux->grad.data())
      g *= cfg.aux_seg_weight;
  }
  m.net.backward(ce.grad, ce_aux ? &ce_aux->grad : nullptr);
  out.loss_seg = ce.loss + (ce_aux ? cfg.aux_seg_weight * ce_aux->loss : 0.0);
  detail::require_finite_loss(out.loss_seg, "segmentation");
  const Tensor p_src = softmax_channels(fs.logits);
  out.d_src = detail::disc_input(p_src, cfg.adversarial_input);
  if (fs.aux_logits)
    out.aux_d_src = detail::disc_input(softmax_channels(*fs.aux_logits), cfg.adversarial_input);

  ForwardResult ft = m.net.forward(tgt);
  const Tensor p_tgt = softmax_channels(ft.logits);
  out.d_tgt = detail::disc_input(p_tgt, cfg.adversarial_input);
  std::optional<Tensor> p_tgt_aux;
  if (ft.aux_logits) {
    p_tgt_aux = softmax_channels(*ft.aux_logits);
    out.aux_d_tgt = detail::disc_input(*p_tgt_aux, cfg.adversarial_input);
  }
  out.total = out.loss_seg;

  const bool main_adv = cfg.lambda_adv > 0.0;
  const bool aux_adv = cfg.lambda_aux > 0.0 && m.aux_disc && ft.aux_logits;
  if (!main_adv && !aux_adv)
    return out;

  Tensor g_logits(ft.logits.shape());
  if (main_adv) {
    LossAndGrad adv = bce_with_logits(m.disc.forward(out.d_tgt), 1);
    detail::require_finite_loss(adv.loss, "adversarial");
    out.loss_adv = adv.loss;
    out.total += cfg.lambda_adv * adv.loss;
    for (double &g : adv.grad.data())
      g *= cfg.lambda_adv;
    Tensor gd = m.disc.backward(adv.grad, /*accumulate_params=*/false);
    g_logits = softmax_channels_backward(p_tgt, detail::disc_input_backward(p_tgt, gd, cfg.adversarial_input));
  }
  std::optional<Tensor> g_aux;
  if (aux_adv) {
    LossAndGrad adv = bce_with_logits(m.aux_disc->forward(*out.aux_d_tgt), 1);
    detail::require_finite_loss(adv.loss, "auxiliary adversarial");
    out.total += cfg.lambda_aux * adv.loss;
    for (double &g : adv.grad.data())
      g *= cfg.lambda_aux;
    Tensor gd = m.aux_disc->backward(adv.grad, false);
    g_aux = softmax_channels_backward(
        *p_tgt_aux, detail::disc_input_backward(*p_tgt_aux, gd, cfg.adversarial_input));
  }
  m.net.backward(g_logits, g_aux ? &*g_aux : nullptr);
  return out;
}

/// One SGD step on the segmentation network; discriminators stay frozen.
inline GeneratorPass generator_step(Model &m, const Sample &src, const Tensor &tgt,
                                    const TrainConfig &cfg, Sgd &opt, double lr) {
  auto params = m.generator_parameters();
  zero_grads(params);
  GeneratorPass pass = generator_gradients(m, src, tgt, cfg);
  opt.step(params, lr);
  return pass;
}

/// One SGD step on the discriminator(s): source maps are labelled 1, target maps 0,
/// and the two BCE terms are averaged. Inputs are detached generator outputs.
inline double discriminator_step(Model &m, const GeneratorPass &pass, Sgd &opt, double lr) {
  auto params = m.discriminator_parameters();
  zero_grads(params);
  auto train = [](Discriminator &d, const Tensor &src, const Tensor &tgt) {
    LossAndGrad ls = bce_with_logits(d.forward(src), 1);
    for (double &g : ls.grad.data())
      g *= 0.5;
    d.backward(ls.grad);
    LossAndGrad lt = bce_with_logits(d.forward(tgt), 0);
    for (double &g : lt.grad.data())
      g *= 0.5;
    d.backward(lt.grad);
    return 0.5 * (ls.loss + lt.loss);
  };
  const double loss = train(m.disc, pass.d_src, pass.d_tgt);
  detail::require_finite_loss(loss, "discriminator");
  if (m.aux_disc && pass.aux_d_src && pass.aux_d_tgt)
    train(*m.aux_disc, *pass.aux_d_src, *pass.aux_d_tgt);
  opt.step(params, lr);
  return loss;
}

/// Segmentation-only step on source (used by seed pretraining).
inline double segmentation_step(Model &m, const Sample &src, const TrainConfig &cfg, Sgd &opt,
                                double lr) {
  auto params = m.generator_parameters();
  zero_grads(params);
  ForwardResult fs = m.net.forward(src.image);
  LossAndGrad ce = softmax_cross_entropy(fs.logits, src.label);
  std::optional<LossAndGrad> ce_aux;
  if (fs.aux_logits) {
    ce_aux = softmax_cross_entropy(*fs.aux_logits, src.label);
    for (double &g : ce_aux->grad.data())
      g *= cfg.aux_seg_weight;
  }
  m.net.backward(ce.grad, ce_aux ? &ce_aux->grad : nullptr);
  const double loss = ce.loss + (ce_aux ? cfg.aux_seg_weight * ce_aux->loss : 0.0);
  detail::require_finite_loss(loss, "segmentation");
  opt.step(params, lr);
  return loss;
}

/// Training crops for one iteration, drawn in a fixed order from rng.
struct DomainPair {
  Sample source;
  Tensor target;
};

inline DomainPair draw_pair(const Dataset &data, double crop_ratio, Rng &rng) {
  const Sample &s = data.source(rng.index(data.source_size()));
  Sample src = sample_crop(s, crop_ratio, rng);
  const Tensor &t = data.target_adapt_image(rng.index(data.target_adapt_size()));
  const CropWindow w = draw_crop(t.h(), t.w(), crop_ratio, rng);
  return {std::move(src), crop_image(t, w)};
}

/// Source-only training of the seed network.
inline AdaptedModel pretrain_seed(Model model, const Dataset &data, const TrainConfig &cfg,
                                  std::uint64_t seed) {
  Rng rng(seed);
  Sgd opt(cfg.momentum, cfg.weight_decay);
  AdaptedModel out{std::move(model), {}, seed};
  const double ratio = cfg.crop_for(out.model.genome());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double lr = poly_lr(cfg.lr_gen, it, cfg.iterations, cfg.poly_power);
    const Sample &s = data.source(rng.index(data.source_size()));
    Sample crop = sample_crop(s, ratio, rng);
    double loss;
    try {
      loss = segmentation_step(out.model, crop, cfg, opt, lr);
    } catch (const NumericError &e) {
      throw NumericError("pretraining diverged at step " + std::to_string(it) + ": " + e.what());
    }
    out.log.push_back({it, loss, 0.0, 0.0, lr});
  }
  return out;
}

/// Adversarial output-space adaptation: alternates generator and discriminator steps.
inline AdaptedModel adapt(Model model, const Dataset &data, const TrainConfig &cfg,
                          std::uint64_t seed) {
  Rng rng(seed);
  Sgd gen_opt(cfg.momentum, cfg.weight_decay);
  Sgd disc_opt(cfg.momentum, cfg.weight_decay);
  AdaptedModel out{std::move(model), {}, seed};
  const double ratio = cfg.crop_for(out.model.genome());
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const double lr_g = poly_lr(cfg.lr_gen, it, cfg.iterations, cfg.poly_power);
    const double lr_d = poly_lr(cfg.lr_disc, it, cfg.iterations, cfg.poly_power);
    DomainPair pair = draw_pair(data, ratio, rng);
    try {
      GeneratorPass pass = generator_step(out.model, pair.source, pair.target, cfg, gen_opt, lr_g);
      const double ld = discriminator_step(out.model, pass, disc_opt, lr_d);
      out.log.push_back({it, pass.loss_seg, pass.loss_adv, ld, lr_g});
    } catch (const NumericError &e) {
      throw NumericError("adaptation failed at step " + std::to_string(it) + ": " + e.what());
    }
  }
  return out;
}

/// Per-candidate training seed from the global seed and the genome hash.
inline std::uint64_t candidate_seed(std::uint64_t global_seed, const Genome &g) {
  return derive_seed(global_seed, genome_hash(g));
}

} // namespace autoadapt

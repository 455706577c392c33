#pragma once

#include "autoadapt/genome.hpp"
#include "autoadapt/layers.hpp"

#include <array>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace autoadapt {

namespace detail {

inline Conv make_conv(std::string path, LayerKind kind, std::size_t cin, std::size_t cout, int k,
                      int d, int stride, Rng &rng) {
  Conv c(std::move(path), LayerParams::make(kind, cin, cout, k, d, stride));
  c.p.init_he(rng);
  return c;
}

inline ConvRelu make_conv_relu(std::string path, std::size_t cin, std::size_t cout, int k, int d,
                               int stride, Rng &rng) {
  return ConvRelu{make_conv(std::move(path), LayerKind::conv, cin, cout, k, d, stride, rng), {}};
}

inline void add_into(Tensor &acc, const Tensor &x) {
  require_same_shape(acc, x, "add_into");
  for (std::size_t i = 0; i < acc.numel(); ++i)
    acc[i] += x[i];
}

} // namespace detail

struct Stage {
  std::vector<ConvRelu> blocks;
  std::optional<SeBlock> se;

  Tensor forward(Tensor x) {
    for (ConvRelu &b : blocks)
      x = b.forward(x);
    if (se)
      x = se->forward(x);
    return x;
  }
  Tensor backward(Tensor g) {
    if (se)
      g = se->backward(g);
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it)
      g = it->backward(g);
    return g;
  }
};

/// Parallel dilated 3x3 branches summed, then ReLU.
struct AsppHead {
  std::array<Conv, 4> branches;
  Tensor out;

  Tensor forward(const Tensor &x) {
    Tensor sum = branches[0].forward(x);
    for (std::size_t i = 1; i < branches.size(); ++i)
      detail::add_into(sum, branches[i].forward(x));
    out = relu(sum);
    return out;
  }
  Tensor backward(const Tensor &g) {
    Tensor gs = relu_backward(out, g);
    Tensor gx = branches[0].backward(gs);
    for (std::size_t i = 1; i < branches.size(); ++i)
      detail::add_into(gx, branches[i].backward(gs));
    return gx;
  }
  void collect(std::vector<ParamRef> &o) {
    for (Conv &b : branches)
      b.collect(o);
  }
};

/// Final features upsampled to stage-1 resolution, concatenated with a 1x1
/// projection of the stage-1 features, fused by a 3x3 conv.
struct LowLevelHead {
  ConvRelu project;
  ConvRelu fuse;
  Shape final_shape;

  Tensor forward(const Tensor &final, const Tensor &stage1) {
    final_shape = final.shape();
    Tensor up = bilinear_upsample(final, stage1.h(), stage1.w());
    Tensor proj = project.forward(stage1);
    return fuse.forward(concat_channels(up, proj));
  }
  std::pair<Tensor, Tensor> backward(const Tensor &g) {
    Tensor gcat = fuse.backward(g);
    auto [gup, gproj] = split_channels(gcat, final_shape.c);
    return {bilinear_upsample_backward(final_shape, gup), project.backward(gproj)};
  }
  void collect(std::vector<ParamRef> &o) {
    project.conv.collect(o);
    fuse.conv.collect(o);
  }
};

struct ForwardResult {
  Tensor logits;                    // (N, C, H, W)
  std::optional<Tensor> aux_logits; // (N, C, H, W) when an aux tap is configured
  Tensor features;                  // (N, 32, 1, 1) pooled final-stage features
};

/// Segmentation network materialized from a genome.
class Network {
public:
  static Network build(const Genome &g, std::size_t num_classes, Rng &rng) {
    validate(g);
    if (num_classes < 2)
      throw std::invalid_argument("num_classes must be >= 2");
    Network net;
    net.genome_ = g;
    net.num_classes_ = num_classes;
    net.stem_ = detail::make_conv_relu("stem", kInputChannels, kStemChannels, 3, 1, 2, rng);
    std::size_t cin = kStemChannels;
    for (std::size_t s = 0; s < 3; ++s) {
      const StageGene &sg = g.stages[s];
      const std::size_t cout = kStageChannels[s];
      Stage &st = net.stages_[s];
      for (int b = 0; b < sg.num_blocks; ++b)
        st.blocks.push_back(detail::make_conv_relu(block_path(s, static_cast<std::size_t>(b)),
                                                   b == 0 ? cin : cout, cout, sg.kernel_size,
                                                   sg.dilation, b == 0 ? kStageStride[s] : 1, rng));
      if (sg.se_enabled)
        st.se = make_se(s, rng);
      cin = cout;
    }
    switch (g.head) {
    case HeadType::aspp: {
      AsppHead h;
      const auto &rates = g.aspp_rates();
      for (std::size_t i = 0; i < 4; ++i)
        h.branches[i] = detail::make_conv("head.aspp" + std::to_string(i), LayerKind::conv,
                                          kFeatureChannels, kHeadChannels, 3, rates[i], 1, rng);
      net.head_ = std::move(h);
      break;
    }
    case HeadType::spatial_attention: {
      SpatialAttention h;
      h.path = "head.attention";
      h.query = detail::make_conv("head.attention.query", LayerKind::conv, kFeatureChannels,
                                  kAttentionKeyChannels, 1, 1, 1, rng);
      h.key = detail::make_conv("head.attention.key", LayerKind::conv, kFeatureChannels,
                                kAttentionKeyChannels, 1, 1, 1, rng);
      h.value = detail::make_conv("head.attention.value", LayerKind::conv, kFeatureChannels,
                                  kFeatureChannels, 1, 1, 1, rng);
      h.out = detail::make_conv_relu("head.attention.out", kFeatureChannels, kHeadChannels, 3, 1,
                                     1, rng);
      net.head_ = std::move(h);
      break;
    }
    case HeadType::low_level: {
      LowLevelHead h;
      h.project = detail::make_conv_relu("head.lowlevel.project", kStageChannels[0],
                                         kLowLevelProjChannels, 1, 1, 1, rng);
      h.fuse = detail::make_conv_relu("head.lowlevel.fuse", kFeatureChannels + kLowLevelProjChannels,
                                      kHeadChannels, 3, 1, 1, rng);
      net.head_ = std::move(h);
      break;
    }
    }
    net.classifier_ = detail::make_conv("classifier", LayerKind::classifier, kHeadChannels,
                                        num_classes, 1, 1, 1, rng);
    if (g.aux_tap != AuxTap::none)
      net.aux_ = detail::make_conv("aux_classifier", LayerKind::classifier, kFeatureChannels,
                                   num_classes, 1, 1, 1, rng);
    return net;
  }

  static std::string block_path(std::size_t stage, std::size_t block) {
    return "stage" + std::to_string(stage + 1) + ".block" + std::to_string(block) + ".conv";
  }

  const Genome &genome() const { return genome_; }
  std::size_t num_classes() const { return num_classes_; }

  ForwardResult forward(const Tensor &image) {
    if (image.c() != kInputChannels)
      throw ShapeError("network input must have 3 channels, got " + image.shape().str());
    input_shape_ = image.shape();
    Tensor x = stem_.forward(image);
    require_finite(x, "stem");
    std::array<Tensor, 3> outs;
    for (std::size_t s = 0; s < 3; ++s) {
      x = stages_[s].forward(x);
      require_finite(x, "stage" + std::to_string(s + 1));
      outs[s] = x;
    }
    Tensor head_out = std::visit(
        [&](auto &h) -> Tensor {
          using H = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<H, LowLevelHead>)
            return h.forward(outs[2], outs[0]);
          else
            return h.forward(outs[2]);
        },
        head_);
    require_finite(head_out, "head");
    head_shape_ = head_out.shape();
    Tensor small = classifier_.forward(head_out);
    small_shape_ = small.shape();
    ForwardResult r;
    r.logits = bilinear_upsample(small, image.h(), image.w());
    require_finite(r.logits, "classifier");
    if (aux_) {
      const Tensor &tap = genome_.aux_tap == AuxTap::stage2 ? outs[1] : outs[2];
      Tensor aux_small = aux_->forward(tap);
      aux_small_shape_ = aux_small.shape();
      r.aux_logits = bilinear_upsample(aux_small, image.h(), image.w());
      require_finite(*r.aux_logits, "aux_classifier");
    }
    r.features = global_avg_pool(outs[2]);
    return r;
  }

  /// Accumulates parameter gradients for the most recent forward().
  void backward(const Tensor &grad_logits, const Tensor *grad_aux_logits = nullptr) {
    Tensor g = classifier_.backward(bilinear_upsample_backward(small_shape_, grad_logits));
    Tensor g_final, g_stage1_extra;
    std::visit(
        [&](auto &h) {
          using H = std::decay_t<decltype(h)>;
          if constexpr (std::is_same_v<H, LowLevelHead>) {
            auto [gf, g1] = h.backward(g);
            g_final = std::move(gf);
            g_stage1_extra = std::move(g1);
          } else {
            g_final = h.backward(g);
          }
        },
        head_);
    std::optional<Tensor> g_aux_tap;
    if (aux_ && grad_aux_logits)
      g_aux_tap = aux_->backward(bilinear_upsample_backward(aux_small_shape_, *grad_aux_logits));
    if (g_aux_tap && genome_.aux_tap == AuxTap::stage3)
      detail::add_into(g_final, *g_aux_tap);
    Tensor g2 = stages_[2].backward(std::move(g_final));
    if (g_aux_tap && genome_.aux_tap == AuxTap::stage2)
      detail::add_into(g2, *g_aux_tap);
    Tensor g1 = stages_[1].backward(std::move(g2));
    if (!g_stage1_extra.vec().empty())
      detail::add_into(g1, g_stage1_extra);
    Tensor g0 = stages_[0].backward(std::move(g1));
    stem_.backward(g0, /*need_input=*/false);
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> o;
    stem_.conv.collect(o);
    for (Stage &s : stages_) {
      for (ConvRelu &b : s.blocks)
        b.conv.collect(o);
      if (s.se)
        s.se->collect(o);
    }
    std::visit([&](auto &h) { h.collect(o); }, head_);
    classifier_.collect(o);
    if (aux_)
      aux_->collect(o);
    return o;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (const ParamRef &p : parameters())
      n += p.tensor->numel();
    return n;
  }

  // Direct layer access for remapping and tests.
  ConvRelu &stem() { return stem_; }
  Stage &stage(std::size_t s) { return stages_.at(s); }
  Conv &classifier() { return classifier_; }
  std::optional<Conv> &aux_classifier() { return aux_; }
  template <class H> H *head_as() { return std::get_if<H>(&head_); }

  static SeBlock make_se(std::size_t stage, Rng &rng) {
    SeBlock se;
    se.path = "stage" + std::to_string(stage + 1) + ".se";
    se.p = SeParams::make(kStageChannels[stage], kSeReduction);
    se.p.fc1.init_he(rng);
    se.p.fc2.init_he(rng);
    return se;
  }

private:
  Genome genome_;
  std::size_t num_classes_ = 0;
  ConvRelu stem_;
  std::array<Stage, 3> stages_;
  std::variant<AsppHead, SpatialAttention, LowLevelHead> head_;
  Conv classifier_;
  std::optional<Conv> aux_;
  Shape input_shape_, head_shape_, small_shape_, aux_small_shape_;
};

/// Output-space discriminator: three stride-2 3x3 convs with leaky ReLU(0.2),
/// then a 1x1 conv to a single logit channel.
class Discriminator {
public:
  static constexpr double kSlope = 0.2;

  static Discriminator build(std::size_t in_channels, Rng &rng, const std::string &prefix = "disc") {
    Discriminator d;
    const std::array<std::size_t, 4> widths{in_channels, 16, 32, 32};
    for (std::size_t i = 0; i < 3; ++i)
      d.convs_[i] = detail::make_conv(prefix + ".conv" + std::to_string(i),
                                      LayerKind::discriminator_conv, widths[i], widths[i + 1], 3,
                                      1, 2, rng);
    d.out_ = detail::make_conv(prefix + ".logit", LayerKind::discriminator_conv, 32, 1, 1, 1, 1, rng);
    return d;
  }

  Tensor forward(const Tensor &x) {
    Tensor h = x;
    for (std::size_t i = 0; i < 3; ++i) {
      pre_[i] = convs_[i].forward(h);
      h = leaky_relu(pre_[i], kSlope);
    }
    Tensor y = out_.forward(h);
    require_finite(y, "discriminator");
    return y;
  }

  /// Gradient w.r.t. the discriminator input. Parameter gradients are accumulated
  /// only when accumulate_params is true, so a frozen discriminator stays untouched.
  Tensor backward(const Tensor &grad_out, bool accumulate_params = true) {
    auto run = [&](Conv &c, const Tensor &g) {
      if (accumulate_params)
        return c.backward(g);
      return conv2d_backward(c.input, c.p, g).grad_input;
    };
    Tensor g = run(out_, grad_out);
    for (std::size_t i = 3; i-- > 0;)
      g = run(convs_[i], leaky_relu_backward(pre_[i], g, kSlope));
    return g;
  }

  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> o;
    for (Conv &c : convs_)
      c.collect(o);
    out_.collect(o);
    return o;
  }

private:
  std::array<Conv, 3> convs_;
  Conv out_;
  std::array<Tensor, 3> pre_;
};

} // namespace autoadapt

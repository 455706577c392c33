#pragma once

#include "autoadapt/genome.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace autoadapt {

struct MacsReport {
  std::uint64_t total = 0;
  std::vector<std::pair<std::string, std::uint64_t>> breakdown;

  void add(std::string layer, std::uint64_t macs) {
    total += macs;
    breakdown.emplace_back(std::move(layer), macs);
  }
};

namespace detail {

inline std::uint64_t conv_macs(std::uint64_t k, std::uint64_t cin, std::uint64_t cout,
                               std::uint64_t ho, std::uint64_t wo) {
  return k * k * cin * cout * ho * wo;
}

inline std::size_t strided(std::size_t x, int stride) {
  return (x + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
}

} // namespace detail

/// Multiply-accumulate count of the inference network (auxiliary classifier and
/// discriminators excluded) for an input of input_h x input_w pixels.
/// Convolutions cost k*k*Cin*Cout*Hout*Wout; an SE block costs C*(C/r)*2 + C*H*W;
/// attention adds its two (HW)^2 matrix products; resizing is free.
inline MacsReport macs(const Genome &g, std::size_t input_h, std::size_t input_w,
                       std::size_t num_classes = 4) {
  using detail::conv_macs;
  MacsReport r;
  std::size_t h = detail::strided(input_h, 2), w = detail::strided(input_w, 2);
  r.add("stem", conv_macs(3, kInputChannels, kStemChannels, h, w));
  std::size_t cin = kStemChannels;
  std::size_t stage1_h = 0, stage1_w = 0;
  for (std::size_t s = 0; s < 3; ++s) {
    const StageGene &st = g.stages[s];
    const std::size_t cout = kStageChannels[s];
    const auto k = static_cast<std::uint64_t>(st.kernel_size);
    h = detail::strided(h, kStageStride[s]);
    w = detail::strided(w, kStageStride[s]);
    for (int b = 0; b < st.num_blocks; ++b) {
      r.add("stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
            conv_macs(k, b == 0 ? cin : cout, cout, h, w));
    }
    if (st.se_enabled) {
      const std::uint64_t hidden = std::max<std::size_t>(1, cout / kSeReduction);
      r.add("stage" + std::to_string(s + 1) + ".se", cout * hidden * 2 + cout * h * w);
    }
    if (s == 0) {
      stage1_h = h;
      stage1_w = w;
    }
    cin = cout;
  }
  const std::uint64_t positions = h * w;
  std::size_t head_h = h, head_w = w;
  switch (g.head) {
  case HeadType::aspp:
    for (std::size_t i = 0; i < 4; ++i)
      r.add("head.aspp" + std::to_string(i), conv_macs(3, kFeatureChannels, kHeadChannels, h, w));
    break;
  case HeadType::spatial_attention:
    r.add("head.query", conv_macs(1, kFeatureChannels, kAttentionKeyChannels, h, w));
    r.add("head.key", conv_macs(1, kFeatureChannels, kAttentionKeyChannels, h, w));
    r.add("head.value", conv_macs(1, kFeatureChannels, kFeatureChannels, h, w));
    r.add("head.energy", positions * positions * kAttentionKeyChannels);
    r.add("head.aggregate", positions * positions * kFeatureChannels);
    r.add("head.out", conv_macs(3, kFeatureChannels, kHeadChannels, h, w));
    break;
  case HeadType::low_level:
    head_h = stage1_h;
    head_w = stage1_w;
    r.add("head.project", conv_macs(1, kStageChannels[0], kLowLevelProjChannels, head_h, head_w));
    r.add("head.fuse", conv_macs(3, kFeatureChannels + kLowLevelProjChannels, kHeadChannels,
                                 head_h, head_w));
    break;
  }
  r.add("classifier", conv_macs(1, kHeadChannels, num_classes, head_h, head_w));
  return r;
}

/// Trainable parameter count of the segmentation network (weights + biases),
/// including the auxiliary classifier when present.
inline std::uint64_t parameter_count(const Genome &g, std::size_t num_classes = 4) {
  auto conv = [](std::uint64_t k, std::uint64_t cin, std::uint64_t cout) {
    return k * k * cin * cout + cout;
  };
  std::uint64_t n = conv(3, kInputChannels, kStemChannels);
  std::size_t cin = kStemChannels;
  for (std::size_t s = 0; s < 3; ++s) {
    const StageGene &st = g.stages[s];
    const std::size_t cout = kStageChannels[s];
    for (int b = 0; b < st.num_blocks; ++b)
      n += conv(static_cast<std::uint64_t>(st.kernel_size), b == 0 ? cin : cout, cout);
    if (st.se_enabled) {
      const std::size_t hidden = std::max<std::size_t>(1, cout / kSeReduction);
      n += conv(1, cout, hidden) + conv(1, hidden, cout);
    }
    cin = cout;
  }
  switch (g.head) {
  case HeadType::aspp:
    n += 4 * conv(3, kFeatureChannels, kHeadChannels);
    break;
  case HeadType::spatial_attention:
    n += 2 * conv(1, kFeatureChannels, kAttentionKeyChannels) +
         conv(1, kFeatureChannels, kFeatureChannels) + 1 /* gamma */ +
         conv(3, kFeatureChannels, kHeadChannels);
    break;
  case HeadType::low_level:
    n += conv(1, kStageChannels[0], kLowLevelProjChannels) +
         conv(3, kFeatureChannels + kLowLevelProjChannels, kHeadChannels);
    break;
  }
  n += conv(1, kHeadChannels, num_classes);
  if (g.aux_tap != AuxTap::none)
    n += conv(1, kFeatureChannels, num_classes);
  return n;
}

} // namespace autoadapt

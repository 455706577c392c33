#pragma once

#include "autoadapt/rng.hpp"
#include "autoadapt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace autoadapt {

enum class LayerKind { conv, se_fc, classifier, discriminator_conv };

/// Weights and hyper-parameters of one convolution.
/// weight is (Cout, Cin, k, k); bias is (Cout, 1, 1, 1). Padding is always
/// dilation * (k - 1) / 2 so that stride-1 convolutions keep the spatial extent.
struct LayerParams {
  LayerKind kind = LayerKind::conv;
  Tensor weight;
  Tensor bias;
  int kernel = 1;
  int dilation = 1;
  int stride = 1;

  static LayerParams make(LayerKind kind, std::size_t cin, std::size_t cout, int kernel,
                          int dilation = 1, int stride = 1) {
    if (kernel < 1 || kernel % 2 == 0)
      throw std::invalid_argument("convolution kernel size must be odd and positive, got " +
                                  std::to_string(kernel));
    if (dilation < 1)
      throw std::invalid_argument("dilation must be >= 1, got " + std::to_string(dilation));
    if (stride != 1 && stride != 2)
      throw std::invalid_argument("stride must be 1 or 2, got " + std::to_string(stride));
    LayerParams p;
    p.kind = kind;
    p.kernel = kernel;
    p.dilation = dilation;
    p.stride = stride;
    p.weight = Tensor(cout, cin, static_cast<std::size_t>(kernel), static_cast<std::size_t>(kernel));
    p.bias = Tensor(cout, 1, 1, 1);
    return p;
  }

  std::size_t cin() const { return weight.c(); }
  std::size_t cout() const { return weight.n(); }
  int padding() const { return dilation * (kernel - 1) / 2; }
  std::size_t out_extent(std::size_t in) const {
    return (in + static_cast<std::size_t>(stride) - 1) / static_cast<std::size_t>(stride);
  }

  /// He-normal weights, zero bias.
  void init_he(Rng &rng) {
    const double fan_in = static_cast<double>(cin()) * kernel * kernel;
    const double sd = std::sqrt(2.0 / fan_in);
    for (double &v : weight.data())
      v = rng.normal(0.0, sd);
    bias.fill(0.0);
  }
};

namespace detail {

/// Output positions o in [0, out_len) for which o*stride + offset lands in [0, in_len).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out_len, std::size_t in_len,
                                                       long offset, long stride) {
  long lo = 0;
  if (offset < 0)
    lo = (-offset + stride - 1) / stride;
  const long last_in = static_cast<long>(in_len) - 1 - offset;
  if (last_in < 0)
    return {0, 0};
  long hi = std::min<long>(static_cast<long>(out_len), last_in / stride + 1);
  if (hi < lo)
    hi = lo;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

} // namespace detail

inline Tensor conv2d(const Tensor &input, const LayerParams &p) {
  if (input.c() != p.cin())
    throw ShapeError("conv2d: input " + input.shape().str() + " vs weight " +
                     p.weight.shape().str());
  const std::size_t N = input.n(), Cin = p.cin(), Cout = p.cout();
  const std::size_t H = input.h(), W = input.w();
  const std::size_t Ho = p.out_extent(H), Wo = p.out_extent(W);
  const long s = p.stride, d = p.dilation, pad = p.padding();
  const std::size_t k = static_cast<std::size_t>(p.kernel);
  Tensor out(N, Cout, Ho, Wo);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Cout; ++co) {
      double *o = out.plane(n, co);
      std::fill(o, o + Ho * Wo, p.bias[co]);
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double *x = input.plane(n, ci);
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long hoff = static_cast<long>(kh) * d - pad;
          const auto [h0, h1] = detail::valid_range(Ho, H, hoff, s);
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = p.weight.at(co, ci, kh, kw);
            if (wv == 0.0)
              continue;
            const long woff = static_cast<long>(kw) * d - pad;
            const auto [w0, w1] = detail::valid_range(Wo, W, woff, s);
            for (std::size_t oh = h0; oh < h1; ++oh) {
              const double *xr = x + static_cast<std::size_t>(static_cast<long>(oh) * s + hoff) * W;
              double *orow = o + oh * Wo;
              if (s == 1) {
                const double *xs = xr + woff;
                for (std::size_t ow = w0; ow < w1; ++ow)
                  orow[ow] += wv * xs[ow];
              } else {
                for (std::size_t ow = w0; ow < w1; ++ow)
                  orow[ow] += wv * xr[static_cast<long>(ow) * s + woff];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

struct ConvGrads {
  Tensor grad_input;
  Tensor grad_weight;
  Tensor grad_bias;
};

/// Gradients of sum(grad_out * conv2d(input, p)) with respect to input, weight and bias.
/// When need_input is false, grad_input is left empty.
inline ConvGrads conv2d_backward(const Tensor &input, const LayerParams &p, const Tensor &grad_out,
                                 bool need_input = true) {
  if (input.c() != p.cin())
    throw ShapeError("conv2d_backward: input " + input.shape().str() + " vs weight " +
                     p.weight.shape().str());
  const std::size_t N = input.n(), Cin = p.cin(), Cout = p.cout();
  const std::size_t H = input.h(), W = input.w();
  const std::size_t Ho = p.out_extent(H), Wo = p.out_extent(W);
  const Shape expected{N, Cout, Ho, Wo};
  if (grad_out.shape() != expected)
    throw ShapeError("conv2d_backward: grad_out " + grad_out.shape().str() + " vs output " +
                     expected.str());
  const long s = p.stride, d = p.dilation, pad = p.padding();
  const std::size_t k = static_cast<std::size_t>(p.kernel);
  ConvGrads g{need_input ? Tensor(input.shape()) : Tensor(), Tensor(p.weight.shape()),
              Tensor(p.bias.shape())};
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t co = 0; co < Cout; ++co) {
      const double *go = grad_out.plane(n, co);
      double bsum = 0.0;
      for (std::size_t i = 0; i < Ho * Wo; ++i)
        bsum += go[i];
      g.grad_bias[co] += bsum;
      for (std::size_t ci = 0; ci < Cin; ++ci) {
        const double *x = input.plane(n, ci);
        double *gx = need_input ? g.grad_input.plane(n, ci) : nullptr;
        for (std::size_t kh = 0; kh < k; ++kh) {
          const long hoff = static_cast<long>(kh) * d - pad;
          const auto [h0, h1] = detail::valid_range(Ho, H, hoff, s);
          for (std::size_t kw = 0; kw < k; ++kw) {
            const double wv = p.weight.at(co, ci, kh, kw);
            const long woff = static_cast<long>(kw) * d - pad;
            const auto [w0, w1] = detail::valid_range(Wo, W, woff, s);
            double wsum = 0.0;
            for (std::size_t oh = h0; oh < h1; ++oh) {
              const std::size_t row = static_cast<std::size_t>(static_cast<long>(oh) * s + hoff) * W;
              const double *xr = x + row;
              const double *gor = go + oh * Wo;
              if (s == 1) {
                const double *xs = xr + woff;
                for (std::size_t ow = w0; ow < w1; ++ow)
                  wsum += gor[ow] * xs[ow];
                if (gx) {
                  double *gs = gx + row + woff;
                  for (std::size_t ow = w0; ow < w1; ++ow)
                    gs[ow] += wv * gor[ow];
                }
              } else {
                for (std::size_t ow = w0; ow < w1; ++ow) {
                  const long iw = static_cast<long>(ow) * s + woff;
                  wsum += gor[ow] * xr[iw];
                  if (gx)
                    gx[row + static_cast<std::size_t>(iw)] += wv * gor[ow];
                }
              }
            }
            g.grad_weight.at(co, ci, kh, kw) += wsum;
          }
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// Pointwise activations
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor &x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

/// Uses the forward output: relu(x) > 0 iff x > 0.
inline Tensor relu_backward(const Tensor &y, const Tensor &grad_out) {
  require_same_shape(y, grad_out, "relu_backward");
  Tensor g(y.shape());
  for (std::size_t i = 0; i < y.numel(); ++i)
    g[i] = y[i] > 0.0 ? grad_out[i] : 0.0;
  return g;
}

inline Tensor leaky_relu(const Tensor &x, double slope = 0.2) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    y[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return y;
}

inline Tensor leaky_relu_backward(const Tensor &x, const Tensor &grad_out, double slope = 0.2) {
  require_same_shape(x, grad_out, "leaky_relu_backward");
  Tensor g(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    g[i] = x[i] > 0.0 ? grad_out[i] : slope * grad_out[i];
  return g;
}

inline double sigmoid(double x) {
  if (x >= 0.0)
    return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Bilinear resize, align_corners = false, edge clamped.
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0)
      src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(std::floor(src));
    if (i0 > in - 1)
      i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

} // namespace detail

inline Tensor bilinear_upsample(const Tensor &x, std::size_t target_h, std::size_t target_w) {
  if (target_h == 0 || target_w == 0)
    throw std::invalid_argument("bilinear_upsample: target extent must be >= 1");
  if (x.h() == 0 || x.w() == 0)
    throw ShapeError("bilinear_upsample: empty input " + x.shape().str());
  const auto ty = detail::lerp_taps(x.h(), target_h);
  const auto tx = detail::lerp_taps(x.w(), target_w);
  Tensor y(x.n(), x.c(), target_h, target_w);
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double *src = x.plane(n, c);
      double *dst = y.plane(n, c);
      for (std::size_t oh = 0; oh < target_h; ++oh) {
        const auto &a = ty[oh];
        const double *r0 = src + a.i0 * x.w();
        const double *r1 = src + a.i1 * x.w();
        for (std::size_t ow = 0; ow < target_w; ++ow) {
          const auto &b = tx[ow];
          const double top = r0[b.i0] + b.frac * (r0[b.i1] - r0[b.i0]);
          const double bot = r1[b.i0] + b.frac * (r1[b.i1] - r1[b.i0]);
          dst[oh * target_w + ow] = top + a.frac * (bot - top);
        }
      }
    }
  return y;
}

inline Tensor bilinear_upsample_backward(const Shape &input_shape, const Tensor &grad_out) {
  if (grad_out.n() != input_shape.n || grad_out.c() != input_shape.c)
    throw ShapeError("bilinear_upsample_backward: grad " + grad_out.shape().str() + " vs input " +
                     input_shape.str());
  const auto ty = detail::lerp_taps(input_shape.h, grad_out.h());
  const auto tx = detail::lerp_taps(input_shape.w, grad_out.w());
  Tensor g(input_shape);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      const double *go = grad_out.plane(n, c);
      double *gi = g.plane(n, c);
      for (std::size_t oh = 0; oh < grad_out.h(); ++oh) {
        const auto &a = ty[oh];
        for (std::size_t ow = 0; ow < grad_out.w(); ++ow) {
          const auto &b = tx[ow];
          const double v = go[oh * grad_out.w() + ow];
          const double top = v * (1.0 - a.frac), bot = v * a.frac;
          gi[a.i0 * input_shape.w + b.i0] += top * (1.0 - b.frac);
          gi[a.i0 * input_shape.w + b.i1] += top * b.frac;
          gi[a.i1 * input_shape.w + b.i0] += bot * (1.0 - b.frac);
          gi[a.i1 * input_shape.w + b.i1] += bot * b.frac;
        }
      }
    }
  return g;
}

// ---------------------------------------------------------------------------
// Pooling, channel concat
// ---------------------------------------------------------------------------

/// (N, C, H, W) -> (N, C, 1, 1)
inline Tensor global_avg_pool(const Tensor &x) {
  if (x.h() * x.w() == 0)
    throw ShapeError("global_avg_pool: empty spatial extent " + x.shape().str());
  Tensor y(x.n(), x.c(), 1, 1);
  const double inv = 1.0 / static_cast<double>(x.h() * x.w());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double *p = x.plane(n, c);
      double s = 0.0;
      for (std::size_t i = 0; i < x.h() * x.w(); ++i)
        s += p[i];
      y.at(n, c, 0, 0) = s * inv;
    }
  return y;
}

inline Tensor global_avg_pool_backward(const Shape &input_shape, const Tensor &grad_out) {
  Tensor g(input_shape);
  const double inv = 1.0 / static_cast<double>(input_shape.h * input_shape.w);
  for (std::size_t n = 0; n < input_shape.n; ++n)
    for (std::size_t c = 0; c < input_shape.c; ++c) {
      double *p = g.plane(n, c);
      std::fill(p, p + input_shape.h * input_shape.w, grad_out.at(n, c, 0, 0) * inv);
    }
  return g;
}

inline Tensor concat_channels(const Tensor &a, const Tensor &b) {
  if (a.n() != b.n() || a.h() != b.h() || a.w() != b.w())
    throw ShapeError("concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  Tensor y(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t pa = a.c() * a.h() * a.w(), pb = b.c() * b.h() * b.w();
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy_n(a.vec().begin() + static_cast<long>(n * pa), pa,
                y.vec().begin() + static_cast<long>(n * (pa + pb)));
    std::copy_n(b.vec().begin() + static_cast<long>(n * pb), pb,
                y.vec().begin() + static_cast<long>(n * (pa + pb) + pa));
  }
  return y;
}

inline std::pair<Tensor, Tensor> split_channels(const Tensor &y, std::size_t first) {
  Tensor a(y.n(), first, y.h(), y.w()), b(y.n(), y.c() - first, y.h(), y.w());
  const std::size_t pa = a.c() * a.h() * a.w(), pb = b.c() * b.h() * b.w();
  for (std::size_t n = 0; n < y.n(); ++n) {
    std::copy_n(y.vec().begin() + static_cast<long>(n * (pa + pb)), pa,
                a.vec().begin() + static_cast<long>(n * pa));
    std::copy_n(y.vec().begin() + static_cast<long>(n * (pa + pb) + pa), pb,
                b.vec().begin() + static_cast<long>(n * pb));
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Squeeze-and-excitation
// ---------------------------------------------------------------------------

/// fc1: (C/r, C, 1, 1), fc2: (C, C/r, 1, 1), both kind se_fc.
struct SeParams {
  LayerParams fc1;
  LayerParams fc2;

  static SeParams make(std::size_t channels, std::size_t reduction = 4) {
    const std::size_t hidden = std::max<std::size_t>(1, channels / reduction);
    return {LayerParams::make(LayerKind::se_fc, channels, hidden, 1),
            LayerParams::make(LayerKind::se_fc, hidden, channels, 1)};
  }
};

/// Intermediate values kept for the backward pass.
struct SeCache {
  Tensor pooled;  // (N, C, 1, 1)
  Tensor hidden;  // relu(fc1(pooled))
  Tensor gate;    // sigmoid(fc2(hidden))
};

inline Tensor se_layer(const Tensor &x, const SeParams &p, SeCache *cache = nullptr) {
  if (x.c() != p.fc1.cin() || p.fc2.cout() != x.c())
    throw ShapeError("se_layer: input " + x.shape().str() + " vs fc1 " +
                     p.fc1.weight.shape().str() + " / fc2 " + p.fc2.weight.shape().str());
  Tensor pooled = global_avg_pool(x);
  Tensor hidden = relu(conv2d(pooled, p.fc1));
  Tensor gate = conv2d(hidden, p.fc2);
  for (double &v : gate.data())
    v = sigmoid(v);
  Tensor y(x.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double g = gate.at(n, c, 0, 0);
      const double *src = x.plane(n, c);
      double *dst = y.plane(n, c);
      for (std::size_t i = 0; i < x.h() * x.w(); ++i)
        dst[i] = g * src[i];
    }
  if (cache)
    *cache = {std::move(pooled), std::move(hidden), std::move(gate)};
  return y;
}

struct SeGrads {
  Tensor grad_input;
  ConvGrads fc1;
  ConvGrads fc2;
};

inline SeGrads se_layer_backward(const Tensor &x, const SeParams &p, const SeCache &cache,
                                 const Tensor &grad_out) {
  require_same_shape(x, grad_out, "se_layer_backward");
  const std::size_t plane = x.h() * x.w();
  Tensor grad_x(x.shape());
  Tensor grad_pre_gate(cache.gate.shape());
  for (std::size_t n = 0; n < x.n(); ++n)
    for (std::size_t c = 0; c < x.c(); ++c) {
      const double g = cache.gate.at(n, c, 0, 0);
      const double *src = x.plane(n, c);
      const double *go = grad_out.plane(n, c);
      double *gx = grad_x.plane(n, c);
      double dg = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        gx[i] = g * go[i];
        dg += go[i] * src[i];
      }
      grad_pre_gate.at(n, c, 0, 0) = dg * g * (1.0 - g);
    }
  ConvGrads g2 = conv2d_backward(cache.hidden, p.fc2, grad_pre_gate);
  Tensor grad_hidden_pre = relu_backward(cache.hidden, g2.grad_input);
  ConvGrads g1 = conv2d_backward(cache.pooled, p.fc1, grad_hidden_pre);
  Tensor spread = global_avg_pool_backward(x.shape(), g1.grad_input);
  for (std::size_t i = 0; i < grad_x.numel(); ++i)
    grad_x[i] += spread[i];
  return {std::move(grad_x), std::move(g1), std::move(g2)};
}

// ---------------------------------------------------------------------------
// Softmax and losses
// ---------------------------------------------------------------------------

/// Softmax over the channel axis at every (n, h, w).
inline Tensor softmax_channels(const Tensor &logits) {
  Tensor p(logits.shape());
  const std::size_t C = logits.c(), plane = logits.h() * logits.w();
  for (std::size_t n = 0; n < logits.n(); ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c)
        mx = std::max(mx, logits.plane(n, c)[i]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double e = std::exp(logits.plane(n, c)[i] - mx);
        p.plane(n, c)[i] = e;
        z += e;
      }
      for (std::size_t c = 0; c < C; ++c)
        p.plane(n, c)[i] /= z;
    }
  return p;
}

/// Vector-Jacobian product of the channel softmax, given its output p.
inline Tensor softmax_channels_backward(const Tensor &p, const Tensor &grad_p) {
  require_same_shape(p, grad_p, "softmax_channels_backward");
  Tensor g(p.shape());
  const std::size_t C = p.c(), plane = p.h() * p.w();
  for (std::size_t n = 0; n < p.n(); ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        dot += p.plane(n, c)[i] * grad_p.plane(n, c)[i];
      for (std::size_t c = 0; c < C; ++c)
        g.plane(n, c)[i] = p.plane(n, c)[i] * (grad_p.plane(n, c)[i] - dot);
    }
  return g;
}

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;
};

inline constexpr int kIgnoreIndex = 255;

/// Mean over non-ignored pixels of -log softmax(logits)[label].
/// labels is N*H*W, row-major per image.
inline LossAndGrad softmax_cross_entropy(const Tensor &logits, std::span<const int> labels,
                                         int ignore_index = kIgnoreIndex) {
  const std::size_t C = logits.c(), plane = logits.h() * logits.w();
  if (labels.size() != logits.n() * plane)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for logits " + logits.shape().str());
  for (int y : labels)
    if (y != ignore_index && (y < 0 || static_cast<std::size_t>(y) >= C))
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(y) +
                                  " outside [0," + std::to_string(C) + ")");
  LossAndGrad out{0.0, softmax_channels(logits)};
  std::size_t count = 0;
  for (int y : labels)
    count += (y != ignore_index);
  const double inv = count ? 1.0 / static_cast<double>(count) : 0.0;
  for (std::size_t n = 0; n < logits.n(); ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      const int y = labels[n * plane + i];
      if (y == ignore_index) {
        for (std::size_t c = 0; c < C; ++c)
          out.grad.plane(n, c)[i] = 0.0;
        continue;
      }
      // log-softmax computed from logits directly for accuracy near 0/1
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < C; ++c)
        mx = std::max(mx, logits.plane(n, c)[i]);
      double z = 0.0;
      for (std::size_t c = 0; c < C; ++c)
        z += std::exp(logits.plane(n, c)[i] - mx);
      out.loss += -(logits.plane(n, static_cast<std::size_t>(y))[i] - mx - std::log(z));
      for (std::size_t c = 0; c < C; ++c) {
        double &g = out.grad.plane(n, c)[i];
        g = (g - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0)) * inv;
      }
    }
  out.loss *= inv;
  return out;
}

/// Mean binary cross entropy of every logit against the constant label z.
inline LossAndGrad bce_with_logits(const Tensor &logits, int z) {
  if (z != 0 && z != 1)
    throw std::invalid_argument("bce_with_logits: domain label must be 0 or 1, got " +
                                std::to_string(z));
  LossAndGrad out{0.0, Tensor(logits.shape())};
  if (logits.numel() == 0)
    return out;
  const double inv = 1.0 / static_cast<double>(logits.numel());
  const double zd = z;
  for (std::size_t i = 0; i < logits.numel(); ++i) {
    const double x = logits[i];
    out.loss += std::max(x, 0.0) - x * zd + std::log1p(std::exp(-std::abs(x)));
    out.grad[i] = (sigmoid(x) - zd) * inv;
  }
  out.loss *= inv;
  return out;
}

} // namespace autoadapt

#pragma once

#include "autoadapt/ops.hpp"
#include "autoadapt/optim.hpp"

#include <optional>
#include <string>
#include <vector>

namespace autoadapt {

/// Convolution that remembers its last input for the backward pass.
struct Conv {
  std::string path;
  LayerParams p;
  Tensor input;

  Conv() = default;
  Conv(std::string path, LayerParams params) : path(std::move(path)), p(std::move(params)) {}

  Tensor forward(const Tensor &x) {
    input = x;
    return conv2d(x, p);
  }

  Tensor backward(const Tensor &grad_out, bool need_input = true) {
    ConvGrads g = conv2d_backward(input, p, grad_out, need_input);
    accumulate(p.weight, g.grad_weight);
    accumulate(p.bias, g.grad_bias);
    return std::move(g.grad_input);
  }

  void collect(std::vector<ParamRef> &out) {
    out.push_back({path + ".weight", &p.weight});
    out.push_back({path + ".bias", &p.bias});
  }
};

/// conv -> ReLU
struct ConvRelu {
  Conv conv;
  Tensor out;

  Tensor forward(const Tensor &x) {
    out = relu(conv.forward(x));
    return out;
  }
  Tensor backward(const Tensor &grad_out, bool need_input = true) {
    return conv.backward(relu_backward(out, grad_out), need_input);
  }
};

struct SeBlock {
  std::string path;
  SeParams p;
  Tensor input;
  SeCache cache;

  Tensor forward(const Tensor &x) {
    input = x;
    return se_layer(x, p, &cache);
  }
  Tensor backward(const Tensor &grad_out) {
    SeGrads g = se_layer_backward(input, p, cache, grad_out);
    accumulate(p.fc1.weight, g.fc1.grad_weight);
    accumulate(p.fc1.bias, g.fc1.grad_bias);
    accumulate(p.fc2.weight, g.fc2.grad_weight);
    accumulate(p.fc2.bias, g.fc2.grad_bias);
    return std::move(g.grad_input);
  }
  void collect(std::vector<ParamRef> &out) {
    out.push_back({path + ".fc1.weight", &p.fc1.weight});
    out.push_back({path + ".fc1.bias", &p.fc1.bias});
    out.push_back({path + ".fc2.weight", &p.fc2.weight});
    out.push_back({path + ".fc2.bias", &p.fc2.bias});
  }
};

/// Non-local attention over spatial positions:
///   A = softmax_j(q_i . k_j),  y = x + gamma * sum_j A_ij v_j
/// followed by a 3x3 conv + ReLU down to the head width.
struct SpatialAttention {
  Conv query, key, value;
  Tensor gamma{1, 1, 1, 1};
  ConvRelu out;

  // forward caches
  Tensor x, q, k, v, attended;
  std::vector<double> attn; // N * P * P, row i = query position

  std::string path;

  Tensor forward(const Tensor &input) {
    x = input;
    q = query.forward(input);
    k = key.forward(input);
    v = value.forward(input);
    const std::size_t N = input.n(), P = input.h() * input.w();
    const std::size_t Ck = q.c(), Cv = v.c();
    attn.assign(N * P * P, 0.0);
    attended = Tensor(v.shape());
    for (std::size_t n = 0; n < N; ++n) {
      double *A = attn.data() + n * P * P;
      for (std::size_t i = 0; i < P; ++i) {
        double *row = A + i * P;
        for (std::size_t j = 0; j < P; ++j) {
          double e = 0.0;
          for (std::size_t c = 0; c < Ck; ++c)
            e += q.plane(n, c)[i] * k.plane(n, c)[j];
          row[j] = e;
        }
        double mx = row[0];
        for (std::size_t j = 1; j < P; ++j)
          mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < P; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        for (std::size_t j = 0; j < P; ++j)
          row[j] /= z;
      }
      for (std::size_t c = 0; c < Cv; ++c) {
        const double *vc = v.plane(n, c);
        double *oc = attended.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) {
          const double *row = A + i * P;
          double s = 0.0;
          for (std::size_t j = 0; j < P; ++j)
            s += row[j] * vc[j];
          oc[i] = s;
        }
      }
    }
    Tensor y = input;
    const double g = gamma[0];
    for (std::size_t i = 0; i < y.numel(); ++i)
      y[i] += g * attended[i];
    return out.forward(y);
  }

  Tensor backward(const Tensor &grad_out) {
    Tensor gy = out.backward(grad_out);
    const std::size_t N = x.n(), P = x.h() * x.w();
    const std::size_t Ck = q.c(), Cv = v.c();
    const double g = gamma[0];
    double dgamma = 0.0;
    for (std::size_t i = 0; i < gy.numel(); ++i)
      dgamma += gy[i] * attended[i];
    gamma.grad()[0] += dgamma;

    Tensor gq(q.shape()), gk(k.shape()), gv(v.shape());
    std::vector<double> dA(P * P);
    for (std::size_t n = 0; n < N; ++n) {
      const double *A = attn.data() + n * P * P;
      // dO = g * dY ; dV[c][j] = sum_i dO[c][i] A[i][j] ; dA[i][j] = sum_c dO[c][i] V[c][j]
      std::fill(dA.begin(), dA.end(), 0.0);
      for (std::size_t c = 0; c < Cv; ++c) {
        const double *dy = gy.plane(n, c);
        const double *vc = v.plane(n, c);
        double *gvc = gv.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) {
          const double dO = g * dy[i];
          if (dO == 0.0)
            continue;
          const double *row = A + i * P;
          double *drow = dA.data() + i * P;
          for (std::size_t j = 0; j < P; ++j) {
            gvc[j] += dO * row[j];
            drow[j] += dO * vc[j];
          }
        }
      }
      // softmax backward per row, then dE[i][j] -> dQ, dK
      for (std::size_t i = 0; i < P; ++i) {
        const double *row = A + i * P;
        double *drow = dA.data() + i * P;
        double dot = 0.0;
        for (std::size_t j = 0; j < P; ++j)
          dot += row[j] * drow[j];
        for (std::size_t j = 0; j < P; ++j)
          drow[j] = row[j] * (drow[j] - dot);
      }
      for (std::size_t c = 0; c < Ck; ++c) {
        const double *qc = q.plane(n, c);
        const double *kc = k.plane(n, c);
        double *gqc = gq.plane(n, c);
        double *gkc = gk.plane(n, c);
        for (std::size_t i = 0; i < P; ++i) {
          const double *drow = dA.data() + i * P;
          double s = 0.0;
          for (std::size_t j = 0; j < P; ++j) {
            s += drow[j] * kc[j];
            gkc[j] += drow[j] * qc[i];
          }
          gqc[i] += s;
        }
      }
    }
    Tensor gx = gy;
    for (Conv *c : {&query, &key, &value}) {
      Tensor part = c->backward(c == &query ? gq : c == &key ? gk : gv);
      for (std::size_t i = 0; i < gx.numel(); ++i)
        gx[i] += part[i];
    }
    return gx;
  }

  /// Attention weights for image n as a P x P row-major matrix (rows sum to 1).
  std::span<const double> attention(std::size_t n) const {
    const std::size_t P = x.h() * x.w();
    return {attn.data() + n * P * P, P * P};
  }

  void collect(std::vector<ParamRef> &o) {
    query.collect(o);
    key.collect(o);
    value.collect(o);
    o.push_back({path + ".gamma", &gamma});
    out.conv.collect(o);
  }
};

} // namespace autoadapt

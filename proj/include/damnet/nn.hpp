#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "damnet/kernels.hpp"
#include "damnet/rng.hpp"
#include "damnet/tensor.hpp"

// Differentiable operations. Each op is a forward function plus an explicit
// backward that consumes the cached forward inputs; layers below own their
// parameters and caches and chain the calls. Parameter gradients always
// ACCUMULATE, so a parameter used twice in one forward pass (the shared MLP
// in the attention module) ends up with the sum of both path gradients.

namespace damnet::nn {

template <typename S>
struct Parameter {
  std::string name;
  TensorT<S> value;
  TensorT<S> grad;
  bool has_grad = false;

  Parameter() = default;
  Parameter(std::string n, TensorT<S> v) : name(std::move(n)), value(std::move(v)), grad(value.dims) {}

  void accumulate(const TensorT<S>& g) {
    add_inplace(grad, g);
    has_grad = true;
  }
  void zero_grad() {
    std::fill(grad.data.begin(), grad.data.end(), S(0));
    has_grad = false;
  }
};

// He-scaled normal init, std = sqrt(2 / fan_in), drawn sequentially from the
// model stream so builds are bit-reproducible.
template <typename S>
void he_init(TensorT<S>& t, int64_t fan_in, SplitMix64& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (S& v : t.data) v = static_cast<S>(stddev * rng.next_normal());
}

// ---- activations ----

template <typename S>
TensorT<S> relu(const TensorT<S>& x) {
  TensorT<S> out(x.dims);
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > S(0) ? x[i] : S(0);
  return out;
}

// Subgradient at 0 is 0.
template <typename S>
TensorT<S> relu_backward(const TensorT<S>& x, const TensorT<S>& gout) {
  TensorT<S> gx(x.dims);
  for (int64_t i = 0; i < x.numel(); ++i) gx[i] = x[i] > S(0) ? gout[i] : S(0);
  return gx;
}

template <typename S>
S sigmoid_scalar(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

template <typename S>
TensorT<S> sigmoid(const TensorT<S>& x) {
  TensorT<S> out(x.dims);
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = sigmoid_scalar(x[i]);
  return out;
}

// gx from the op's own output y: sigma' = y * (1 - y)
template <typename S>
TensorT<S> sigmoid_backward(const TensorT<S>& y, const TensorT<S>& gout) {
  TensorT<S> gx(y.dims);
  for (int64_t i = 0; i < y.numel(); ++i) gx[i] = gout[i] * y[i] * (S(1) - y[i]);
  return gx;
}

// ---- pooling ----

template <typename S>
TensorT<S> global_avg_pool(const TensorT<S>& x) {
  const int64_t N = x.dims[0], C = x.dims[1];
  const int64_t V = x.dims[2] * x.dims[3] * x.dims[4];
  TensorT<S> out({N, C, 1, 1, 1});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double acc = 0.0;
    const S* p = x.data.data() + nc * V;
    for (int64_t i = 0; i < V; ++i) acc += static_cast<double>(p[i]);
    out[nc] = static_cast<S>(acc / static_cast<double>(V));
  }
  return out;
}

template <typename S>
TensorT<S> global_avg_pool_backward(const TensorT<S>& gout, const Shape& xdims) {
  const int64_t V = xdims[2] * xdims[3] * xdims[4];
  TensorT<S> gx(xdims);
  for (int64_t nc = 0; nc < xdims[0] * xdims[1]; ++nc) {
    const S g = static_cast<S>(static_cast<double>(gout[nc]) / static_cast<double>(V));
    S* p = gx.data.data() + nc * V;
    for (int64_t i = 0; i < V; ++i) p[i] = g;
  }
  return gx;
}

// argmax (first hit in row-major order) is recorded for the backward route
template <typename S>
TensorT<S> global_max_pool(const TensorT<S>& x, std::vector<int64_t>& argmax) {
  const int64_t N = x.dims[0], C = x.dims[1];
  const int64_t V = x.dims[2] * x.dims[3] * x.dims[4];
  TensorT<S> out({N, C, 1, 1, 1});
  argmax.assign(static_cast<size_t>(N * C), 0);
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* p = x.data.data() + nc * V;
    S best = p[0];
    int64_t bi = 0;
    for (int64_t i = 1; i < V; ++i)
      if (p[i] > best) { best = p[i]; bi = i; }
    out[nc] = best;
    argmax[static_cast<size_t>(nc)] = bi;
  }
  return out;
}

template <typename S>
TensorT<S> global_max_pool_backward(const TensorT<S>& gout, const Shape& xdims,
                                    const std::vector<int64_t>& argmax) {
  const int64_t V = xdims[2] * xdims[3] * xdims[4];
  TensorT<S> gx(xdims);
  for (int64_t nc = 0; nc < xdims[0] * xdims[1]; ++nc)
    gx[nc * V + argmax[static_cast<size_t>(nc)]] = gout[nc];
  return gx;
}

template <typename S>
TensorT<S> channel_mean_pool(const TensorT<S>& x) {
  const int64_t N = x.dims[0], C = x.dims[1];
  const int64_t V = x.dims[2] * x.dims[3] * x.dims[4];
  TensorT<S> out({N, 1, x.dims[2], x.dims[3], x.dims[4]});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < V; ++i) {
      double acc = 0.0;
      for (int64_t c = 0; c < C; ++c) acc += static_cast<double>(x[(n * C + c) * V + i]);
      out[n * V + i] = static_cast<S>(acc / static_cast<double>(C));
    }
  return out;
}

template <typename S>
TensorT<S> channel_mean_pool_backward(const TensorT<S>& gout, const Shape& xdims) {
  const int64_t N = xdims[0], C = xdims[1];
  const int64_t V = xdims[2] * xdims[3] * xdims[4];
  TensorT<S> gx(xdims);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t i = 0; i < V; ++i)
        gx[(n * C + c) * V + i] = static_cast<S>(static_cast<double>(gout[n * V + i]) / static_cast<double>(C));
  return gx;
}

template <typename S>
TensorT<S> channel_max_pool(const TensorT<S>& x, std::vector<int64_t>& argmax) {
  const int64_t N = x.dims[0], C = x.dims[1];
  const int64_t V = x.dims[2] * x.dims[3] * x.dims[4];
  TensorT<S> out({N, 1, x.dims[2], x.dims[3], x.dims[4]});
  argmax.assign(static_cast<size_t>(N * V), 0);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < V; ++i) {
      S best = x[n * C * V + i];
      int64_t bc = 0;
      for (int64_t c = 1; c < C; ++c) {
        const S v = x[(n * C + c) * V + i];
        if (v > best) { best = v; bc = c; }
      }
      out[n * V + i] = best;
      argmax[static_cast<size_t>(n * V + i)] = bc;
    }
  return out;
}

template <typename S>
TensorT<S> channel_max_pool_backward(const TensorT<S>& gout, const Shape& xdims,
                                     const std::vector<int64_t>& argmax) {
  const int64_t N = xdims[0], C = xdims[1];
  const int64_t V = xdims[2] * xdims[3] * xdims[4];
  TensorT<S> gx(xdims);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < V; ++i)
      gx[(n * C + argmax[static_cast<size_t>(n * V + i)]) * V + i] = gout[n * V + i];
  return gx;
}

// ---- channel concat ----

template <typename S>
TensorT<S> concat_channel(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 5 || b.rank() != 5 || a.dims[0] != b.dims[0] || a.dims[2] != b.dims[2] ||
      a.dims[3] != b.dims[3] || a.dims[4] != b.dims[4])
    throw std::invalid_argument("concat_channel: incompatible shapes " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  const int64_t N = a.dims[0], Ca = a.dims[1], Cb = b.dims[1];
  const int64_t V = a.dims[2] * a.dims[3] * a.dims[4];
  TensorT<S> out({N, Ca + Cb, a.dims[2], a.dims[3], a.dims[4]});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(a.data.data() + n * Ca * V, Ca * V, out.data.data() + n * (Ca + Cb) * V);
    std::copy_n(b.data.data() + n * Cb * V, Cb * V, out.data.data() + (n * (Ca + Cb) + Ca) * V);
  }
  return out;
}

template <typename S>
std::pair<TensorT<S>, TensorT<S>> split_channel(const TensorT<S>& g, int64_t Ca) {
  const int64_t N = g.dims[0], C = g.dims[1], Cb = C - Ca;
  const int64_t V = g.dims[2] * g.dims[3] * g.dims[4];
  TensorT<S> ga({N, Ca, g.dims[2], g.dims[3], g.dims[4]});
  TensorT<S> gb({N, Cb, g.dims[2], g.dims[3], g.dims[4]});
  for (int64_t n = 0; n < N; ++n) {
    std::copy_n(g.data.data() + n * C * V, Ca * V, ga.data.data() + n * Ca * V);
    std::copy_n(g.data.data() + (n * C + Ca) * V, Cb * V, gb.data.data() + n * Cb * V);
  }
  return {std::move(ga), std::move(gb)};
}

// ---- linear (out = x * w^T + bias) ----

template <typename S>
TensorT<S> linear_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.dims[1] != w.dims[1])
    throw std::invalid_argument("linear: input " + shape_str(x.dims) + " incompatible with weight " + shape_str(w.dims));
  const int64_t N = x.dims[0], Fin = x.dims[1], Fout = w.dims[0];
  TensorT<S> out({N, Fout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Fout; ++o) {
      S acc = b[o];
      const S* xr = x.data.data() + n * Fin;
      const S* wr = w.data.data() + o * Fin;
      for (int64_t i = 0; i < Fin; ++i) acc += xr[i] * wr[i];
      out.at2(n, o) = acc;
    }
  return out;
}

// Accumulates into wp/bp, returns grad wrt x.
template <typename S>
TensorT<S> linear_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& gout,
                           Parameter<S>& wp, Parameter<S>& bp) {
  const int64_t N = x.dims[0], Fin = x.dims[1], Fout = w.dims[0];
  TensorT<S> gx({N, Fin});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Fout; ++o) {
      const S g = gout.at2(n, o);
      const S* wr = w.data.data() + o * Fin;
      S* gr = gx.data.data() + n * Fin;
      for (int64_t i = 0; i < Fin; ++i) gr[i] += g * wr[i];
    }
  TensorT<S> gw(w.dims);
  TensorT<S> gb({Fout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Fout; ++o) {
      const S g = gout.at2(n, o);
      gb[o] += g;
      const S* xr = x.data.data() + n * Fin;
      S* gwr = gw.data.data() + o * Fin;
      for (int64_t i = 0; i < Fin; ++i) gwr[i] += g * xr[i];
    }
  wp.accumulate(gw);
  bp.accumulate(gb);
  return gx;
}

// ---- layers ----

template <typename S>
struct Conv3dLayer {
  Parameter<S> weight;  // [Cout, Cin, k, k, k]
  Parameter<S> bias;    // [Cout]
  int64_t stride = 1;
  int64_t pad = 0;
  TensorT<S> cached_x;

  Conv3dLayer() = default;
  Conv3dLayer(const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t pad_,
              SplitMix64& rng)
      : weight(name + ".weight", TensorT<S>({cout, cin, k, k, k})),
        bias(name + ".bias", TensorT<S>({cout})),
        stride(stride_), pad(pad_) {
    he_init(weight.value, cin * k * k * k, rng);
  }

  TensorT<S> forward(const TensorT<S>& x) {
    cached_x = x;
    return kernels::conv3d_forward(x, weight.value, bias.value, stride, pad);
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    TensorT<S> gx, gw, gb;
    kernels::conv3d_backward(cached_x, weight.value, gout, stride, pad, gx, gw, gb);
    weight.accumulate(gw);
    bias.accumulate(gb);
    return gx;
  }
};

template <typename S>
struct LinearLayer {
  Parameter<S> weight;  // [Fout, Fin]
  Parameter<S> bias;    // [Fout]
  TensorT<S> cached_x;

  LinearLayer() = default;
  LinearLayer(const std::string& name, int64_t fin, int64_t fout, SplitMix64& rng)
      : weight(name + ".weight", TensorT<S>({fout, fin})), bias(name + ".bias", TensorT<S>({fout})) {
    he_init(weight.value, fin, rng);
  }

  TensorT<S> forward(const TensorT<S>& x) {
    cached_x = x;
    return linear_forward(x, weight.value, bias.value);
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    return linear_backward(cached_x, weight.value, gout, weight, bias);
  }
};

// Per-channel batch normalization over (N, D, H, W). Train mode normalizes
// with biased batch statistics and updates the running estimates with
// momentum 0.1; eval mode normalizes with the running estimates.
template <typename S>
struct BatchNorm3d {
  Parameter<S> gamma;  // [C]
  Parameter<S> beta;   // [C]
  TensorT<S> running_mean;  // [C]
  TensorT<S> running_var;   // [C]
  double eps = 1e-5;
  double momentum = 0.1;

  TensorT<S> cached_xhat;
  std::vector<double> cached_invstd;
  bool cached_train = false;

  BatchNorm3d() = default;
  explicit BatchNorm3d(const std::string& name, int64_t c)
      : gamma(name + ".gamma", TensorT<S>::full({c}, S(1))),
        beta(name + ".beta", TensorT<S>({c})),
        running_mean({c}),
        running_var(TensorT<S>::full({c}, S(1))) {}

  TensorT<S> forward(const TensorT<S>& x, bool train) {
    const int64_t N = x.dims[0], C = x.dims[1];
    const int64_t V = x.dims[2] * x.dims[3] * x.dims[4];
    const int64_t M = N * V;  // elements per channel
    if (train && M < 2)
      throw std::invalid_argument("batchnorm3d: train mode needs >= 2 elements per channel, got " + shape_str(x.dims));
    TensorT<S> out(x.dims);
    cached_xhat = TensorT<S>(x.dims);
    cached_invstd.assign(static_cast<size_t>(C), 0.0);
    cached_train = train;
    for (int64_t c = 0; c < C; ++c) {
      double mean, var;
      if (train) {
        double sum = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const S* p = x.data.data() + (n * C + c) * V;
          for (int64_t i = 0; i < V; ++i) sum += static_cast<double>(p[i]);
        }
        mean = sum / static_cast<double>(M);
        double sq = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const S* p = x.data.data() + (n * C + c) * V;
          for (int64_t i = 0; i < V; ++i) {
            const double d = static_cast<double>(p[i]) - mean;
            sq += d * d;
          }
        }
        var = sq / static_cast<double>(M);
        running_mean[c] = static_cast<S>((1.0 - momentum) * static_cast<double>(running_mean[c]) + momentum * mean);
        running_var[c] = static_cast<S>((1.0 - momentum) * static_cast<double>(running_var[c]) + momentum * var);
      } else {
        mean = static_cast<double>(running_mean[c]);
        var = static_cast<double>(running_var[c]);
      }
      const double invstd = 1.0 / std::sqrt(var + eps);
      cached_invstd[static_cast<size_t>(c)] = invstd;
      const double g = static_cast<double>(gamma.value[c]);
      const double bt = static_cast<double>(beta.value[c]);
      for (int64_t n = 0; n < N; ++n) {
        const S* p = x.data.data() + (n * C + c) * V;
        S* xh = cached_xhat.data.data() + (n * C + c) * V;
        S* po = out.data.data() + (n * C + c) * V;
        for (int64_t i = 0; i < V; ++i) {
          const double h = (static_cast<double>(p[i]) - mean) * invstd;
          xh[i] = static_cast<S>(h);
          po[i] = static_cast<S>(g * h + bt);
        }
      }
    }
    return out;
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    const int64_t N = gout.dims[0], C = gout.dims[1];
    const int64_t V = gout.dims[2] * gout.dims[3] * gout.dims[4];
    const int64_t M = N * V;
    TensorT<S> gx(gout.dims);
    TensorT<S> ggamma({C});
    TensorT<S> gbeta({C});
    for (int64_t c = 0; c < C; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const S* go = gout.data.data() + (n * C + c) * V;
        const S* xh = cached_xhat.data.data() + (n * C + c) * V;
        for (int64_t i = 0; i < V; ++i) {
          sum_g += static_cast<double>(go[i]);
          sum_gx += static_cast<double>(go[i]) * static_cast<double>(xh[i]);
        }
      }
      ggamma[c] = static_cast<S>(sum_gx);
      gbeta[c] = static_cast<S>(sum_g);
      const double g = static_cast<double>(gamma.value[c]);
      const double invstd = cached_invstd[static_cast<size_t>(c)];
      if (cached_train) {
        // dx = gamma*invstd * (dout - mean(dout) - xhat * mean(dout*xhat))
        const double mg = sum_g / static_cast<double>(M);
        const double mgx = sum_gx / static_cast<double>(M);
        for (int64_t n = 0; n < N; ++n) {
          const S* go = gout.data.data() + (n * C + c) * V;
          const S* xh = cached_xhat.data.data() + (n * C + c) * V;
          S* gp = gx.data.data() + (n * C + c) * V;
          for (int64_t i = 0; i < V; ++i)
            gp[i] = static_cast<S>(g * invstd * (static_cast<double>(go[i]) - mg - static_cast<double>(xh[i]) * mgx));
        }
      } else {
        // running statistics are constants in eval mode
        for (int64_t n = 0; n < N; ++n) {
          const S* go = gout.data.data() + (n * C + c) * V;
          S* gp = gx.data.data() + (n * C + c) * V;
          for (int64_t i = 0; i < V; ++i) gp[i] = static_cast<S>(g * invstd * static_cast<double>(go[i]));
        }
      }
    }
    gamma.accumulate(ggamma);
    beta.accumulate(gbeta);
    return gx;
  }
};

// ---- loss ----

template <typename S>
TensorT<S> softmax(const TensorT<S>& logits) {
  const int64_t N = logits.dims[0], K = logits.dims[1];
  TensorT<S> out(logits.dims);
  for (int64_t n = 0; n < N; ++n) {
    const S* row = logits.data.data() + n * K;
    double m = static_cast<double>(row[0]);
    for (int64_t k = 1; k < K; ++k) m = std::max(m, static_cast<double>(row[k]));
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - m);
    for (int64_t k = 0; k < K; ++k) out.at2(n, k) = static_cast<S>(std::exp(static_cast<double>(row[k]) - m) / z);
  }
  return out;
}

// Mean cross-entropy with log-sum-exp stabilization.
// Returns (loss, dloss/dlogits) with gradient (softmax - onehot) / N.
template <typename S>
std::pair<double, TensorT<S>> softmax_cross_entropy(const TensorT<S>& logits, const std::vector<int>& labels) {
  const int64_t N = logits.dims[0], K = logits.dims[1];
  if (static_cast<int64_t>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(N));
  for (int lab : labels)
    if (lab < 0 || lab >= K)
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(lab) + " outside [0, " + std::to_string(K) + ")");
  TensorT<S> grad(logits.dims);
  double loss = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const S* row = logits.data.data() + n * K;
    double m = static_cast<double>(row[0]);
    for (int64_t k = 1; k < K; ++k) m = std::max(m, static_cast<double>(row[k]));
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(static_cast<double>(row[k]) - m);
    const double lse = m + std::log(z);
    loss += lse - static_cast<double>(row[labels[static_cast<size_t>(n)]]);
    for (int64_t k = 0; k < K; ++k) {
      const double p = std::exp(static_cast<double>(row[k]) - m) / z;
      const double onehot = (k == labels[static_cast<size_t>(n)]) ? 1.0 : 0.0;
      grad.at2(n, k) = static_cast<S>((p - onehot) / static_cast<double>(N));
    }
  }
  return {loss / static_cast<double>(N), std::move(grad)};
}

}  // namespace damnet::nn

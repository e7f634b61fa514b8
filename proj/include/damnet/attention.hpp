#pragma once

#include "damnet/nn.hpp"

// Dual attention: a channel gate computed from globally pooled features,
// followed by a spatial gate computed from channel-pooled maps. Both gates
// are sigmoid outputs applied multiplicatively to the feature map.

namespace damnet::attention {

using nn::Parameter;

// gate = sigmoid(MLP(avgpool(F)) + MLP(maxpool(F))), F' = F (*) gate.
// The two-layer MLP (w1 * relu(w0 * v + b0) + b1) is shared between the two
// pooled vectors, so its gradients accumulate across both branches.
template <typename S>
struct ChannelAttention {
  Parameter<S> w0, b0;  // [hidden, C], [hidden]
  Parameter<S> w1, b1;  // [C, hidden], [C]
  int64_t channels = 0;
  int64_t hidden = 0;

  // forward caches
  TensorT<S> cached_x;
  TensorT<S> pooled_avg, pooled_max;      // [N, C]
  TensorT<S> hidden_avg_pre, hidden_max_pre;  // [N, hidden]
  TensorT<S> gate2;                        // [N, C]
  TensorT<S> gate5;                        // [N, C, 1, 1, 1]
  std::vector<int64_t> max_argmax;

  ChannelAttention() = default;
  ChannelAttention(const std::string& name, int64_t c, int64_t reduction, SplitMix64& rng)
      : w0(name + ".mlp_w0", TensorT<S>({std::max<int64_t>(1, c / reduction), c})),
        b0(name + ".mlp_b0", TensorT<S>({std::max<int64_t>(1, c / reduction)})),
        w1(name + ".mlp_w1", TensorT<S>({c, std::max<int64_t>(1, c / reduction)})),
        b1(name + ".mlp_b1", TensorT<S>({c})),
        channels(c),
        hidden(std::max<int64_t>(1, c / reduction)) {
    nn::he_init(w0.value, c, rng);
    nn::he_init(w1.value, hidden, rng);
  }

  // Runs the shared MLP on a pooled [N, C] vector; stores the hidden
  // pre-activation for the branch's backward pass.
  TensorT<S> mlp_forward(const TensorT<S>& v, TensorT<S>& hidden_pre) {
    hidden_pre = nn::linear_forward(v, w0.value, b0.value);
    return nn::linear_forward(nn::relu(hidden_pre), w1.value, b1.value);
  }

  TensorT<S> mlp_backward(const TensorT<S>& v, const TensorT<S>& hidden_pre, const TensorT<S>& gout) {
    TensorT<S> gh = nn::linear_backward(nn::relu(hidden_pre), w1.value, gout, w1, b1);
    gh = nn::relu_backward(hidden_pre, gh);
    return nn::linear_backward(v, w0.value, gh, w0, b0);
  }

  TensorT<S> forward(const TensorT<S>& x) {
    if (x.dims[1] != channels)
      throw std::invalid_argument("channel_attention: built for " + std::to_string(channels) +
                                  " channels, input has " + std::to_string(x.dims[1]));
    cached_x = x;
    const int64_t N = x.dims[0];
    pooled_avg = nn::global_avg_pool(x).reshaped({N, channels});
    pooled_max = nn::global_max_pool(x, max_argmax).reshaped({N, channels});
    const TensorT<S> ya = mlp_forward(pooled_avg, hidden_avg_pre);
    const TensorT<S> ym = mlp_forward(pooled_max, hidden_max_pre);
    gate2 = nn::sigmoid(add(ya, ym));
    gate5 = gate2.reshaped({N, channels, 1, 1, 1});
    return broadcast_mul_channel(x, gate5);
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    const int64_t N = gout.dims[0];
    const int64_t V = gout.dims[2] * gout.dims[3] * gout.dims[4];
    // product rule: gate branch and direct branch
    TensorT<S> ggate({N, channels});
    TensorT<S> gx(gout.dims);
    for (int64_t nc = 0; nc < N * channels; ++nc) {
      const S g = gate5[nc];
      double acc = 0.0;
      for (int64_t i = 0; i < V; ++i) {
        acc += static_cast<double>(gout[nc * V + i]) * static_cast<double>(cached_x[nc * V + i]);
        gx[nc * V + i] = gout[nc * V + i] * g;
      }
      ggate[nc] = static_cast<S>(acc);
    }
    const TensorT<S> gpre = nn::sigmoid_backward(gate2, ggate);
    const TensorT<S> gpa = mlp_backward(pooled_avg, hidden_avg_pre, gpre);
    const TensorT<S> gpm = mlp_backward(pooled_max, hidden_max_pre, gpre);
    add_inplace(gx, nn::global_avg_pool_backward(gpa.reshaped({N, channels, 1, 1, 1}), gout.dims));
    add_inplace(gx, nn::global_max_pool_backward(gpm.reshaped({N, channels, 1, 1, 1}), gout.dims, max_argmax));
    return gx;
  }
};

enum class SpatialCombine { concat, sum };

// gate = sigmoid(Conv3D(channel-mean || channel-max)), F'' = F' (*) gate.
// The sum variant (mean + max fed as one channel) is kept as an ablation.
template <typename S>
struct SpatialAttention {
  Parameter<S> conv_w;  // [1, 2, ks, ks, ks] (concat) or [1, 1, ks, ks, ks] (sum)
  Parameter<S> conv_b;  // [1]
  int64_t ks = 7;
  SpatialCombine combine = SpatialCombine::concat;

  TensorT<S> cached_x;
  TensorT<S> cached_conv_in;
  TensorT<S> gate;  // [N, 1, D, H, W]
  std::vector<int64_t> max_argmax;

  SpatialAttention() = default;
  SpatialAttention(const std::string& name, int64_t ks_, SpatialCombine combine_, SplitMix64& rng)
      : conv_w(name + ".conv.weight",
               TensorT<S>({1, combine_ == SpatialCombine::concat ? 2 : 1, ks_, ks_, ks_})),
        conv_b(name + ".conv.bias", TensorT<S>({1})),
        ks(ks_),
        combine(combine_) {
    if (ks_ % 2 == 0) throw std::invalid_argument("spatial attention kernel must be odd, got " + std::to_string(ks_));
    nn::he_init(conv_w.value, conv_w.value.dims[1] * ks_ * ks_ * ks_, rng);
  }

  TensorT<S> forward(const TensorT<S>& x) {
    cached_x = x;
    const TensorT<S> m = nn::channel_mean_pool(x);
    const TensorT<S> mx = nn::channel_max_pool(x, max_argmax);
    cached_conv_in = combine == SpatialCombine::concat ? nn::concat_channel(m, mx) : add(m, mx);
    const TensorT<S> pre = kernels::conv3d_forward(cached_conv_in, conv_w.value, conv_b.value, 1, (ks - 1) / 2);
    gate = nn::sigmoid(pre);
    return broadcast_mul_spatial(x, gate);
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    const int64_t N = gout.dims[0], C = gout.dims[1];
    const int64_t V = gout.dims[2] * gout.dims[3] * gout.dims[4];
    TensorT<S> ggate({N, 1, gout.dims[2], gout.dims[3], gout.dims[4]});
    TensorT<S> gx(gout.dims);
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < V; ++i) {
        double acc = 0.0;
        for (int64_t c = 0; c < C; ++c) {
          const int64_t idx = (n * C + c) * V + i;
          acc += static_cast<double>(gout[idx]) * static_cast<double>(cached_x[idx]);
          gx[idx] = gout[idx] * gate[n * V + i];
        }
        ggate[n * V + i] = static_cast<S>(acc);
      }
    const TensorT<S> gpre = nn::sigmoid_backward(gate, ggate);
    TensorT<S> gconv_in, gw, gb;
    kernels::conv3d_backward(cached_conv_in, conv_w.value, gpre, 1, (ks - 1) / 2, gconv_in, gw, gb);
    conv_w.accumulate(gw);
    conv_b.accumulate(gb);
    TensorT<S> gm, gmx;
    if (combine == SpatialCombine::concat) {
      auto parts = nn::split_channel(gconv_in, 1);
      gm = std::move(parts.first);
      gmx = std::move(parts.second);
    } else {
      gm = gconv_in;
      gmx = gconv_in;
    }
    add_inplace(gx, nn::channel_mean_pool_backward(gm, gout.dims));
    add_inplace(gx, nn::channel_max_pool_backward(gmx, gout.dims, max_argmax));
    return gx;
  }
};

// Channel attention first, then spatial attention on its output.
template <typename S>
struct DualAttention {
  ChannelAttention<S> channel;
  SpatialAttention<S> spatial;

  DualAttention() = default;
  DualAttention(const std::string& name, int64_t c, int64_t reduction, int64_t ks, SpatialCombine combine,
                SplitMix64& rng)
      : channel(name + ".ca", c, reduction, rng), spatial(name + ".sa", ks, combine, rng) {}

  TensorT<S> forward(const TensorT<S>& x) { return spatial.forward(channel.forward(x)); }
  TensorT<S> backward(const TensorT<S>& gout) { return channel.backward(spatial.backward(gout)); }
  const TensorT<S>& channel_out() const { return spatial.cached_x; }
};

}  // namespace damnet::attention

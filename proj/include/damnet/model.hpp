#pragma once

#include <map>
#include <memory>

#include "damnet/attention.hpp"
#include "damnet/nn.hpp"

namespace damnet {

// Declarative architecture description. Two builds from the same config are
// bit-identical.
struct ModelConfig {
  std::vector<int64_t> widths = {8, 16, 32, 64};
  int64_t conv_kernel = 3;
  int64_t spatial_attn_kernel = 7;
  int64_t reduction = 8;
  int64_t num_classes = 2;
  int64_t input_channels = 1;
  uint64_t seed = 0;
  bool spatial_attn_sum = false;  // ablation: sum the channel-pooled maps instead of concatenating
};

inline void validate(const ModelConfig& c) {
  if (c.widths.size() != 4) throw std::invalid_argument("model: exactly 4 widths required");
  for (int64_t w : c.widths)
    if (w < 1) throw std::invalid_argument("model: widths must be positive");
  if (c.conv_kernel < 1 || c.conv_kernel % 2 == 0) throw std::invalid_argument("model: conv_kernel must be odd and positive");
  if (c.spatial_attn_kernel < 1 || c.spatial_attn_kernel % 2 == 0)
    throw std::invalid_argument("model: spatial_attn_kernel must be odd and positive");
  if (c.reduction < 1) throw std::invalid_argument("model: reduction must be >= 1");
  if (c.num_classes < 2) throw std::invalid_argument("model: num_classes must be >= 2");
  if (c.input_channels < 1) throw std::invalid_argument("model: input_channels must be >= 1");
}

// conv(s=2) -> BN -> ReLU -> conv(s=1) -> BN, plus a 1x1x1 stride-2
// projection skip with its own BN; ReLU after the addition.
template <typename S>
struct ResidualBlock {
  nn::Conv3dLayer<S> conv1, conv2, proj;
  nn::BatchNorm3d<S> bn1, bn2, bn_proj;
  TensorT<S> cached_pre1;  // bn1 output, pre-ReLU
  TensorT<S> cached_sum;   // main + skip, pre-ReLU

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int64_t cin, int64_t cout, int64_t k, SplitMix64& rng)
      : conv1(name + ".conv1", cin, cout, k, 2, (k - 1) / 2, rng),
        conv2(name + ".conv2", cout, cout, k, 1, (k - 1) / 2, rng),
        proj(name + ".proj", cin, cout, 1, 2, 0, rng),
        bn1(name + ".bn1", cout),
        bn2(name + ".bn2", cout),
        bn_proj(name + ".bn_proj", cout) {}

  TensorT<S> forward(const TensorT<S>& x, bool train) {
    cached_pre1 = bn1.forward(conv1.forward(x), train);
    TensorT<S> main = bn2.forward(conv2.forward(nn::relu(cached_pre1)), train);
    TensorT<S> skip = bn_proj.forward(proj.forward(x), train);
    cached_sum = add(main, skip);
    return nn::relu(cached_sum);
  }

  TensorT<S> backward(const TensorT<S>& gout) {
    const TensorT<S> gsum = nn::relu_backward(cached_sum, gout);
    TensorT<S> g = bn2.backward(gsum);
    g = conv2.backward(g);
    g = nn::relu_backward(cached_pre1, g);
    g = bn1.backward(g);
    TensorT<S> gx = conv1.backward(g);
    add_inplace(gx, proj.backward(bn_proj.backward(gsum)));
    return gx;
  }

  void collect(std::vector<nn::Parameter<S>*>& out) {
    out.push_back(&conv1.weight); out.push_back(&conv1.bias);
    out.push_back(&bn1.gamma); out.push_back(&bn1.beta);
    out.push_back(&conv2.weight); out.push_back(&conv2.bias);
    out.push_back(&bn2.gamma); out.push_back(&bn2.beta);
    out.push_back(&proj.weight); out.push_back(&proj.bias);
    out.push_back(&bn_proj.gamma); out.push_back(&bn_proj.beta);
  }
};

template <typename S>
using TapMap = std::map<std::string, TensorT<S>>;

// The full network: stem conv -> residual blocks A, B -> dual attention ->
// residual block C -> dual attention -> global average pool -> FC head.
// Residual blocks downsample by 2, so an input extent E reaches the head at
// ceil(E/8); the minimum legal extent keeps that >= 2.
template <typename S>
struct BackboneT {
  ModelConfig cfg;
  nn::Conv3dLayer<S> stem_conv;
  nn::BatchNorm3d<S> stem_bn;
  ResidualBlock<S> rb_a, rb_b, rb_c;
  attention::DualAttention<S> dam1, dam2;
  nn::LinearLayer<S> fc;

  TensorT<S> cached_stem_pre;  // stem BN output, pre-ReLU
  Shape cached_gap_in_dims;

  static constexpr int64_t kDownsampleStages = 3;
  static constexpr int64_t kMinExtent = (1 << kDownsampleStages) + 1;  // final stage extent >= 2

  explicit BackboneT(const ModelConfig& c) : cfg(c) {
    validate(c);
    SplitMix64 rng(c.seed);
    const auto combine = c.spatial_attn_sum ? attention::SpatialCombine::sum : attention::SpatialCombine::concat;
    const int64_t k = c.conv_kernel;
    stem_conv = nn::Conv3dLayer<S>("stem.conv", c.input_channels, c.widths[0], k, 1, (k - 1) / 2, rng);
    stem_bn = nn::BatchNorm3d<S>("stem.bn", c.widths[0]);
    rb_a = ResidualBlock<S>("rb_a", c.widths[0], c.widths[1], k, rng);
    rb_b = ResidualBlock<S>("rb_b", c.widths[1], c.widths[2], k, rng);
    dam1 = attention::DualAttention<S>("dam1", c.widths[2], c.reduction, c.spatial_attn_kernel, combine, rng);
    rb_c = ResidualBlock<S>("rb_c", c.widths[2], c.widths[3], k, rng);
    dam2 = attention::DualAttention<S>("dam2", c.widths[3], c.reduction, c.spatial_attn_kernel, combine, rng);
    fc = nn::LinearLayer<S>("fc", c.widths[3], c.num_classes, rng);
  }

  void check_input(const TensorT<S>& x) const {
    if (x.rank() != 5 || x.dims[1] != cfg.input_channels)
      throw std::invalid_argument("forward: expected input [N, " + std::to_string(cfg.input_channels) +
                                  ", D, H, W], got " + shape_str(x.dims));
    if (x.dims[2] < kMinExtent || x.dims[3] < kMinExtent || x.dims[4] < kMinExtent)
      throw std::invalid_argument("forward: input " + shape_str(x.dims) + " too small; minimum spatial extents are [" +
                                  std::to_string(kMinExtent) + ", " + std::to_string(kMinExtent) + ", " +
                                  std::to_string(kMinExtent) + "] so the final stage keeps >= 2 voxels per axis");
  }

  TensorT<S> forward_impl(const TensorT<S>& x, bool train, TapMap<S>* taps) {
    check_input(x);
    cached_stem_pre = stem_bn.forward(stem_conv.forward(x), train);
    TensorT<S> t = nn::relu(cached_stem_pre);
    if (taps) (*taps)["stem.out"] = t;
    t = rb_a.forward(t, train);
    if (taps) (*taps)["rb_a.out"] = t;
    t = rb_b.forward(t, train);
    if (taps) (*taps)["rb_b.out"] = t;
    t = dam1.forward(t);
    if (taps) {
      (*taps)["dam1.gate_channel"] = dam1.channel.gate5;
      (*taps)["dam1.channel_out"] = dam1.channel_out();
      (*taps)["dam1.gate_spatial"] = dam1.spatial.gate;
      (*taps)["dam1.out"] = t;
    }
    t = rb_c.forward(t, train);
    if (taps) (*taps)["rb_c.out"] = t;
    t = dam2.forward(t);
    if (taps) {
      (*taps)["dam2.gate_channel"] = dam2.channel.gate5;
      (*taps)["dam2.channel_out"] = dam2.channel_out();
      (*taps)["dam2.gate_spatial"] = dam2.spatial.gate;
      (*taps)["dam2.out"] = t;
    }
    cached_gap_in_dims = t.dims;
    TensorT<S> pooled = nn::global_avg_pool(t).reshaped({t.dims[0], cfg.widths[3]});
    if (taps) (*taps)["gap.out"] = pooled;
    TensorT<S> logits = fc.forward(pooled);
    if (!all_finite(logits)) throw std::runtime_error("forward: non-finite logits");
    return logits;
  }

  TensorT<S> forward(const TensorT<S>& x, bool train) { return forward_impl(x, train, nullptr); }

  TensorT<S> forward_with_taps(const TensorT<S>& x, bool train, TapMap<S>& taps) {
    return forward_impl(x, train, &taps);
  }

  // Chains the stage backwards in reverse order; optionally records the
  // gradient arriving at each tapped stage output (used by grad-cam).
  TensorT<S> backward(const TensorT<S>& dlogits, TapMap<S>* grad_taps = nullptr) {
    TensorT<S> g = fc.backward(dlogits);
    g = nn::global_avg_pool_backward(g.reshaped({g.dims[0], g.dims[1], 1, 1, 1}), cached_gap_in_dims);
    if (grad_taps) (*grad_taps)["dam2.out"] = g;
    g = dam2.backward(g);
    if (grad_taps) (*grad_taps)["rb_c.out"] = g;
    g = rb_c.backward(g);
    if (grad_taps) (*grad_taps)["dam1.out"] = g;
    g = dam1.backward(g);
    if (grad_taps) (*grad_taps)["rb_b.out"] = g;
    g = rb_b.backward(g);
    if (grad_taps) (*grad_taps)["rb_a.out"] = g;
    g = rb_a.backward(g);
    if (grad_taps) (*grad_taps)["stem.out"] = g;
    g = nn::relu_backward(cached_stem_pre, g);
    g = stem_bn.backward(g);
    return stem_conv.backward(g);
  }

  std::vector<nn::Parameter<S>*> parameters() {
    std::vector<nn::Parameter<S>*> out;
    out.push_back(&stem_conv.weight); out.push_back(&stem_conv.bias);
    out.push_back(&stem_bn.gamma); out.push_back(&stem_bn.beta);
    rb_a.collect(out);
    rb_b.collect(out);
    collect_dam(dam1, out);
    rb_c.collect(out);
    collect_dam(dam2, out);
    out.push_back(&fc.weight); out.push_back(&fc.bias);
    return out;
  }

  // Non-learnable named state (BN running statistics), in registry order.
  std::vector<std::pair<std::string, TensorT<S>*>> buffers() {
    std::vector<std::pair<std::string, TensorT<S>*>> out;
    auto bn = [&out](nn::BatchNorm3d<S>& b, const std::string& prefix) {
      out.emplace_back(prefix + ".running_mean", &b.running_mean);
      out.emplace_back(prefix + ".running_var", &b.running_var);
    };
    bn(stem_bn, "stem.bn");
    auto rb = [&bn](ResidualBlock<S>& r, const std::string& prefix) {
      bn(r.bn1, prefix + ".bn1");
      bn(r.bn2, prefix + ".bn2");
      bn(r.bn_proj, prefix + ".bn_proj");
    };
    rb(rb_a, "rb_a");
    rb(rb_b, "rb_b");
    rb(rb_c, "rb_c");
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (const auto* p : parameters()) n += p->value.numel();
    return n;
  }

  void zero_grads() {
    for (auto* p : parameters()) p->zero_grad();
  }

 private:
  static void collect_dam(attention::DualAttention<S>& d, std::vector<nn::Parameter<S>*>& out) {
    out.push_back(&d.channel.w0); out.push_back(&d.channel.b0);
    out.push_back(&d.channel.w1); out.push_back(&d.channel.b1);
    out.push_back(&d.spatial.conv_w); out.push_back(&d.spatial.conv_b);
  }
};

using Backbone = BackboneT<float>;

}  // namespace damnet

#pragma once

#include <map>
#include <string>
#include <vector>

#include "damnet/nn.hpp"

namespace damnet {

enum class OptimKind { sgd_momentum, adam };

struct OptimConfig {
  OptimKind kind = OptimKind::adam;
  double lr = 1e-3;
  double momentum = 0.9;  // beta1 for adam
  double beta2 = 0.999;
  double weight_decay = 1e-6;
  double eps = 1e-8;
};

inline void validate(const OptimConfig& c) {
  if (c.lr <= 0) throw std::invalid_argument("optimizer: lr must be > 0");
  if (c.momentum < 0 || c.momentum >= 1) throw std::invalid_argument("optimizer: momentum/beta1 must be in [0, 1)");
  if (c.beta2 < 0 || c.beta2 >= 1) throw std::invalid_argument("optimizer: beta2 must be in [0, 1)");
  if (c.weight_decay < 0) throw std::invalid_argument("optimizer: weight_decay must be >= 0");
}

// Per-parameter state, keyed by parameter name: velocity for SGD-momentum,
// first/second moment estimates for Adam.
template <typename S>
struct OptimState {
  std::map<std::string, TensorT<S>> slot1;  // velocity or m
  std::map<std::string, TensorT<S>> slot2;  // v (adam only)
  int64_t step_count = 0;
};

template <typename S>
void zero_grads(const std::vector<nn::Parameter<S>*>& params) {
  for (auto* p : params) p->zero_grad();
}

// L2 regularization enters as a gradient term: g = grad + wd * value.
template <typename S>
void optim_step(const std::vector<nn::Parameter<S>*>& params, OptimState<S>& state, const OptimConfig& cfg) {
  validate(cfg);
  for (auto* p : params)
    if (!p->has_grad) throw std::runtime_error("optimizer step: missing gradient for parameter '" + p->name + "'");
  state.step_count += 1;
  for (auto* p : params) {
    TensorT<S>& s1 = state.slot1.try_emplace(p->name, TensorT<S>(p->value.dims)).first->second;
    if (s1.dims != p->value.dims)
      throw std::runtime_error("optimizer state shape mismatch for '" + p->name + "'");
    const int64_t n = p->value.numel();
    if (cfg.kind == OptimKind::sgd_momentum) {
      for (int64_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(p->grad[i]) + cfg.weight_decay * static_cast<double>(p->value[i]);
        const double v = cfg.momentum * static_cast<double>(s1[i]) + g;
        s1[i] = static_cast<S>(v);
        p->value[i] = static_cast<S>(static_cast<double>(p->value[i]) - cfg.lr * v);
      }
    } else {
      TensorT<S>& s2 = state.slot2.try_emplace(p->name, TensorT<S>(p->value.dims)).first->second;
      const double bc1 = 1.0 - std::pow(cfg.momentum, static_cast<double>(state.step_count));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
      for (int64_t i = 0; i < n; ++i) {
        const double g = static_cast<double>(p->grad[i]) + cfg.weight_decay * static_cast<double>(p->value[i]);
        const double m = cfg.momentum * static_cast<double>(s1[i]) + (1.0 - cfg.momentum) * g;
        const double v = cfg.beta2 * static_cast<double>(s2[i]) + (1.0 - cfg.beta2) * g * g;
        s1[i] = static_cast<S>(m);
        s2[i] = static_cast<S>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p->value[i] = static_cast<S>(static_cast<double>(p->value[i]) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
      }
    }
  }
}

}  // namespace damnet

#pragma once

#include <cmath>

#include "damnet/rng.hpp"
#include "damnet/tensor.hpp"

namespace testutil {

template <typename S>
damnet::TensorT<S> random_tensor(damnet::Shape dims, damnet::SplitMix64& rng, double scale = 1.0) {
  damnet::TensorT<S> t(std::move(dims));
  for (S& v : t.data) v = static_cast<S>(scale * (2.0 * rng.next_unit() - 1.0));
  return t;
}

template <typename S>
double max_abs_diff(const damnet::TensorT<S>& a, const damnet::TensorT<S>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-4});
}

template <typename S>
double max_rel_err(const damnet::TensorT<S>& a, const damnet::TensorT<S>& b) {
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, rel_err(static_cast<double>(a[i]), static_cast<double>(b[i])));
  return m;
}

}  // namespace testutil

#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace damnet {

using Shape = std::vector<int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

// Dense row-major tensor. No views, no strides: every operation produces a
// fresh copy. Canonical feature-map layout is (N, C, D, H, W).
template <typename S>
struct TensorT {
  Shape dims;
  std::vector<S> data;

  TensorT() = default;

  explicit TensorT(Shape d) : dims(std::move(d)) {
    for (int64_t e : dims) {
      if (e <= 0) throw std::invalid_argument("tensor extent must be positive, got " + shape_str(dims));
    }
    data.assign(static_cast<size_t>(shape_numel(dims)), S(0));
  }

  static TensorT full(Shape d, S v) {
    TensorT t(std::move(d));
    for (S& x : t.data) x = v;
    return t;
  }

  static TensorT zeros_like(const TensorT& o) { return TensorT(o.dims); }
  static TensorT ones_like(const TensorT& o) { return full(o.dims, S(1)); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(dims.size()); }
  int64_t dim(int i) const { return dims[static_cast<size_t>(i)]; }

  S& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  const S& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  // Row-major flat index law for the canonical 5-d layout:
  // ((((n*C + c)*D + d)*H + h)*W + w.
  int64_t index5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
    return ((((n * dims[1] + c) * dims[2] + d) * dims[3] + h) * dims[4]) + w;
  }
  S& at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) { return data[static_cast<size_t>(index5(n, c, d, h, w))]; }
  const S& at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const { return data[static_cast<size_t>(index5(n, c, d, h, w))]; }

  int64_t index3(int64_t d, int64_t h, int64_t w) const { return (d * dims[1] + h) * dims[2] + w; }
  S& at3(int64_t d, int64_t h, int64_t w) { return data[static_cast<size_t>(index3(d, h, w))]; }
  const S& at3(int64_t d, int64_t h, int64_t w) const { return data[static_cast<size_t>(index3(d, h, w))]; }

  S& at2(int64_t r, int64_t c) { return data[static_cast<size_t>(r * dims[1] + c)]; }
  const S& at2(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * dims[1] + c)]; }

  // Same data, new dims; element count must match.
  TensorT reshaped(Shape d) const {
    if (shape_numel(d) != numel())
      throw std::invalid_argument("reshape " + shape_str(dims) + " -> " + shape_str(d) + ": element count mismatch");
    TensorT t;
    t.dims = std::move(d);
    t.data = data;
    return t;
  }
};

using Tensor = TensorT<float>;

template <typename S>
bool all_finite(const TensorT<S>& t) {
  for (S v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

enum class Elementwise { add, mul };

template <typename S>
TensorT<S> elementwise(const TensorT<S>& a, const TensorT<S>& b, Elementwise op) {
  if (a.dims != b.dims)
    throw std::invalid_argument("elementwise: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  TensorT<S> out(a.dims);
  const int64_t n = a.numel();
  if (op == Elementwise::add) {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
  } else {
    for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  }
  return out;
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) { return elementwise(a, b, Elementwise::add); }

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) { return elementwise(a, b, Elementwise::mul); }

template <typename S>
void add_inplace(TensorT<S>& a, const TensorT<S>& b) {
  if (a.dims != b.dims)
    throw std::invalid_argument("add_inplace: shape mismatch " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  for (int64_t i = 0; i < a.numel(); ++i) a[i] += b[i];
}

// out[n,c,d,h,w] = x[n,c,d,h,w] * gate[n,c,0,0,0]
template <typename S>
TensorT<S> broadcast_mul_channel(const TensorT<S>& x, const TensorT<S>& gate) {
  if (x.rank() != 5 || gate.rank() != 5)
    throw std::invalid_argument("broadcast_mul_channel expects 5-d tensors, got " + shape_str(x.dims) + " and " + shape_str(gate.dims));
  if (gate.dims[0] != x.dims[0] || gate.dims[1] != x.dims[1] || gate.dims[2] != 1 || gate.dims[3] != 1 || gate.dims[4] != 1)
    throw std::invalid_argument("broadcast_mul_channel: gate " + shape_str(gate.dims) + " incompatible with x " + shape_str(x.dims));
  TensorT<S> out(x.dims);
  const int64_t spatial = x.dims[2] * x.dims[3] * x.dims[4];
  int64_t base = 0;
  for (int64_t n = 0; n < x.dims[0]; ++n) {
    for (int64_t c = 0; c < x.dims[1]; ++c) {
      const S g = gate[n * x.dims[1] + c];
      for (int64_t i = 0; i < spatial; ++i) out[base + i] = x[base + i] * g;
      base += spatial;
    }
  }
  return out;
}

// out[n,c,d,h,w] = x[n,c,d,h,w] * gate[n,0,d,h,w]
template <typename S>
TensorT<S> broadcast_mul_spatial(const TensorT<S>& x, const TensorT<S>& gate) {
  if (x.rank() != 5 || gate.rank() != 5)
    throw std::invalid_argument("broadcast_mul_spatial expects 5-d tensors, got " + shape_str(x.dims) + " and " + shape_str(gate.dims));
  if (gate.dims[0] != x.dims[0] || gate.dims[1] != 1 || gate.dims[2] != x.dims[2] || gate.dims[3] != x.dims[3] || gate.dims[4] != x.dims[4])
    throw std::invalid_argument("broadcast_mul_spatial: gate " + shape_str(gate.dims) + " incompatible with x " + shape_str(x.dims));
  TensorT<S> out(x.dims);
  const int64_t spatial = x.dims[2] * x.dims[3] * x.dims[4];
  int64_t base = 0;
  for (int64_t n = 0; n < x.dims[0]; ++n) {
    const S* g = gate.data.data() + n * spatial;
    for (int64_t c = 0; c < x.dims[1]; ++c) {
      for (int64_t i = 0; i < spatial; ++i) out[base + i] = x[base + i] * g[i];
      base += spatial;
    }
  }
  return out;
}

enum class Reduce { mean, max };

// Collapses the given axes to extent 1. Mean accumulates in double with a
// fixed (row-major) order, so results are deterministic.
template <typename S>
TensorT<S> reduce(const TensorT<S>& x, const std::vector<int>& axes, Reduce mode) {
  if (x.numel() == 0) throw std::invalid_argument("reduce: empty tensor");
  std::vector<bool> reduced(x.dims.size(), false);
  for (int a : axes) {
    if (a < 0 || a >= x.rank()) throw std::invalid_argument("reduce: invalid axis " + std::to_string(a) + " for shape " + shape_str(x.dims));
    reduced[static_cast<size_t>(a)] = true;
  }
  Shape odims = x.dims;
  int64_t count = 1;
  for (size_t i = 0; i < odims.size(); ++i) {
    if (reduced[i]) {
      count *= odims[i];
      odims[i] = 1;
    }
  }
  TensorT<S> out(odims);
  std::vector<double> acc;
  if (mode == Reduce::mean) acc.assign(static_cast<size_t>(out.numel()), 0.0);
  std::vector<bool> seen(static_cast<size_t>(out.numel()), false);

  const int r = x.rank();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  for (int64_t flat = 0; flat < x.numel(); ++flat) {
    // decompose flat index, zero reduced coordinates, recompose
    int64_t rem = flat;
    for (int i = r - 1; i >= 0; --i) {
      idx[static_cast<size_t>(i)] = rem % x.dims[static_cast<size_t>(i)];
      rem /= x.dims[static_cast<size_t>(i)];
    }
    int64_t oflat = 0;
    for (int i = 0; i < r; ++i) {
      const int64_t coord = reduced[static_cast<size_t>(i)] ? 0 : idx[static_cast<size_t>(i)];
      oflat = oflat * odims[static_cast<size_t>(i)] + coord;
    }
    if (mode == Reduce::mean) {
      acc[static_cast<size_t>(oflat)] += static_cast<double>(x[flat]);
    } else {
      if (!seen[static_cast<size_t>(oflat)] || x[flat] > out[oflat]) out[oflat] = x[flat];
      seen[static_cast<size_t>(oflat)] = true;
    }
  }
  if (mode == Reduce::mean) {
    for (int64_t i = 0; i < out.numel(); ++i) out[i] = static_cast<S>(acc[static_cast<size_t>(i)] / static_cast<double>(count));
  }
  return out;
}

}  // namespace damnet

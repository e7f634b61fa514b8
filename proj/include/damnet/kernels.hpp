#pragma once

#include <algorithm>

#include "damnet/tensor.hpp"

// OpenMP kernels for the two compute hotspots, 3-d convolution and matmul.
// Parallelism is always over disjoint output (or gradient) slices and every
// per-element reduction runs in a fixed serial order, so results are
// bit-identical for any thread count. reference.hpp holds the serial
// counterparts used by tests and the benchmark.

namespace damnet::kernels {

struct Conv3dGeom {
  int64_t N, Cin, D, H, W;
  int64_t Cout, k;
  int64_t stride, pad;
  int64_t Dout, Hout, Wout;
};

inline Conv3dGeom conv3d_geometry(const Shape& x, const Shape& w, int64_t stride, int64_t pad) {
  if (x.size() != 5 || w.size() != 5)
    throw std::invalid_argument("conv3d: expected 5-d input and weight, got " + shape_str(x) + " and " + shape_str(w));
  if (w[2] != w[3] || w[2] != w[4])
    throw std::invalid_argument("conv3d: kernel must be cubic, got " + shape_str(w));
  if (x[1] != w[1])
    throw std::invalid_argument("conv3d: channel mismatch, input " + shape_str(x) + " vs weight " + shape_str(w));
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv3d: stride must be >= 1 and padding >= 0");
  Conv3dGeom g;
  g.N = x[0]; g.Cin = x[1]; g.D = x[2]; g.H = x[3]; g.W = x[4];
  g.Cout = w[0]; g.k = w[2];
  g.stride = stride; g.pad = pad;
  g.Dout = (g.D + 2 * pad - g.k) / stride + 1;
  g.Hout = (g.H + 2 * pad - g.k) / stride + 1;
  g.Wout = (g.W + 2 * pad - g.k) / stride + 1;
  if (g.D + 2 * pad < g.k || g.H + 2 * pad < g.k || g.W + 2 * pad < g.k || g.Dout < 1 || g.Hout < 1 || g.Wout < 1)
    throw std::invalid_argument("conv3d: output extent < 1 for input " + shape_str(x) + ", kernel " + shape_str(w) +
                                ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
  return g;
}

// Cross-correlation (no kernel flip), zero padding.
// out[n,o,od,oh,ow] = b[o] + sum_{c,i,j,l} x[n,c,od*s-p+i,oh*s-p+j,ow*s-p+l] * w[o,c,i,j,l]
template <typename S>
TensorT<S> conv3d_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                          int64_t stride, int64_t pad) {
  const Conv3dGeom g = conv3d_geometry(x.dims, w.dims, stride, pad);
  if (b.dims != Shape{g.Cout})
    throw std::invalid_argument("conv3d: bias " + shape_str(b.dims) + " must be [" + std::to_string(g.Cout) + "]");
  TensorT<S> out({g.N, g.Cout, g.Dout, g.Hout, g.Wout});
  const S* xd = x.data.data();
  const S* wd = w.data.data();
  S* od_ = out.data.data();

  const int64_t plane = g.H * g.W;
  const int64_t xstride_c = g.D * plane;

#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t n = 0; n < g.N; ++n)
    for (int64_t o = 0; o < g.Cout; ++o)
      for (int64_t dd = 0; dd < g.Dout; ++dd) {
        std::vector<S> row(static_cast<size_t>(g.Wout));
        for (int64_t hh = 0; hh < g.Hout; ++hh) {
          std::fill(row.begin(), row.end(), b[o]);
          for (int64_t c = 0; c < g.Cin; ++c) {
            const S* xc = xd + (n * g.Cin + c) * xstride_c;
            const S* wc = wd + ((o * g.Cin + c) * g.k) * g.k * g.k;
            for (int64_t i = 0; i < g.k; ++i) {
              const int64_t id = dd * stride - pad + i;
              if (id < 0 || id >= g.D) continue;
              for (int64_t j = 0; j < g.k; ++j) {
                const int64_t ih = hh * stride - pad + j;
                if (ih < 0 || ih >= g.H) continue;
                const S* xrow = xc + id * plane + ih * g.W;
                const S* wrow = wc + (i * g.k + j) * g.k;
                for (int64_t l = 0; l < g.k; ++l) {
                  // valid ow range so that iw = ow*stride - pad + l lands in [0, W)
                  const int64_t off = l - pad;
                  int64_t lo = 0;
                  if (off < 0) lo = (-off + stride - 1) / stride;
                  int64_t hi = (g.W - 1 - off) / stride;
                  hi = std::min(hi, g.Wout - 1);
                  const S wv = wrow[l];
                  for (int64_t ow = lo; ow <= hi; ++ow) row[static_cast<size_t>(ow)] += xrow[ow * stride + off] * wv;
                }
              }
            }
          }
          S* orow = od_ + (((n * g.Cout + o) * g.Dout + dd) * g.Hout + hh) * g.Wout;
          for (int64_t ow = 0; ow < g.Wout; ++ow) orow[ow] = row[static_cast<size_t>(ow)];
        }
      }
  return out;
}

// Fills gx, gw, gb with fresh gradients (callers accumulate where needed).
template <typename S>
void conv3d_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& gout,
                     int64_t stride, int64_t pad,
                     TensorT<S>& gx, TensorT<S>& gw, TensorT<S>& gb) {
  const Conv3dGeom g = conv3d_geometry(x.dims, w.dims, stride, pad);
  gx = TensorT<S>(x.dims);
  gw = TensorT<S>(w.dims);
  gb = TensorT<S>({g.Cout});
  const int64_t k3 = g.k * g.k * g.k;
  const int64_t oplane = g.Hout * g.Wout;
  const int64_t ostride_c = g.Dout * oplane;

  // input gradient, gather form: each thread owns a disjoint gx slice
#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t n = 0; n < g.N; ++n)
    for (int64_t c = 0; c < g.Cin; ++c)
      for (int64_t id = 0; id < g.D; ++id)
        for (int64_t ih = 0; ih < g.H; ++ih)
          for (int64_t iw = 0; iw < g.W; ++iw) {
            S acc = S(0);
            for (int64_t i = 0; i < g.k; ++i) {
              const int64_t td = id + pad - i;
              if (td < 0 || td % stride != 0) continue;
              const int64_t od = td / stride;
              if (od >= g.Dout) continue;
              for (int64_t j = 0; j < g.k; ++j) {
                const int64_t th = ih + pad - j;
                if (th < 0 || th % stride != 0) continue;
                const int64_t oh = th / stride;
                if (oh >= g.Hout) continue;
                for (int64_t l = 0; l < g.k; ++l) {
                  const int64_t tw = iw + pad - l;
                  if (tw < 0 || tw % stride != 0) continue;
                  const int64_t ow = tw / stride;
                  if (ow >= g.Wout) continue;
                  const int64_t kidx = (i * g.k + j) * g.k + l;
                  for (int64_t o = 0; o < g.Cout; ++o)
                    acc += gout[((n * g.Cout + o) * g.Dout + od) * oplane + oh * g.Wout + ow] *
                           w[(o * g.Cin + c) * k3 + kidx];
                }
              }
            }
            gx.at5(n, c, id, ih, iw) = acc;
          }

  // weight and bias gradients: each thread owns one output channel
#pragma omp parallel for schedule(static)
  for (int64_t o = 0; o < g.Cout; ++o) {
    S* gwo = gw.data.data() + o * g.Cin * k3;
    S gbacc = S(0);
    for (int64_t n = 0; n < g.N; ++n) {
      const S* gon = gout.data.data() + (n * g.Cout + o) * ostride_c;
      for (int64_t od = 0; od < g.Dout; ++od)
        for (int64_t oh = 0; oh < g.Hout; ++oh)
          for (int64_t ow = 0; ow < g.Wout; ++ow) {
            const S gv = gon[od * oplane + oh * g.Wout + ow];
            gbacc += gv;
            for (int64_t c = 0; c < g.Cin; ++c)
              for (int64_t i = 0; i < g.k; ++i) {
                const int64_t id = od * stride - pad + i;
                if (id < 0 || id >= g.D) continue;
                for (int64_t j = 0; j < g.k; ++j) {
                  const int64_t ih = oh * stride - pad + j;
                  if (ih < 0 || ih >= g.H) continue;
                  for (int64_t l = 0; l < g.k; ++l) {
                    const int64_t iw = ow * stride - pad + l;
                    if (iw < 0 || iw >= g.W) continue;
                    gwo[(c * g.k + i) * g.k * g.k + j * g.k + l] += gv * x.at5(n, c, id, ih, iw);
                  }
                }
              }
          }
    }
    gb[o] = gbacc;
  }
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw std::invalid_argument("matmul expects 2-d tensors, got " + shape_str(a.dims) + " and " + shape_str(b.dims));
  if (a.dims[1] != b.dims[0])
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.dims) + " vs " + shape_str(b.dims));
  const int64_t M = a.dims[0], K = a.dims[1], P = b.dims[1];
  TensorT<S> out({M, P});
#pragma omp parallel for schedule(static)
  for (int64_t m = 0; m < M; ++m) {
    S* orow = out.data.data() + m * P;
    for (int64_t kk = 0; kk < K; ++kk) {
      const S av = a[m * K + kk];
      const S* brow = b.data.data() + kk * P;
      for (int64_t p = 0; p < P; ++p) orow[p] += av * brow[p];
    }
  }
  return out;
}

}  // namespace damnet::kernels

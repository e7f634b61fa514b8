#pragma once

#include "damnet/tensor.hpp"

// Naive serial kernels, written as the plainest possible nested loops.
// These are the correctness reference: tests compare the OpenMP kernels in
// kernels.hpp against them, and the benchmark tool reports the speedup of
// the parallel versions over these. Nothing on the production path calls
// into this header.

namespace damnet::reference {

template <typename S>
TensorT<S> conv3d_forward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& b,
                          int64_t stride, int64_t pad) {
  const int64_t N = x.dims[0], Cin = x.dims[1], D = x.dims[2], H = x.dims[3], W = x.dims[4];
  const int64_t Cout = w.dims[0], k = w.dims[2];
  const int64_t Dout = (D + 2 * pad - k) / stride + 1;
  const int64_t Hout = (H + 2 * pad - k) / stride + 1;
  const int64_t Wout = (W + 2 * pad - k) / stride + 1;
  TensorT<S> out({N, Cout, Dout, Hout, Wout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Cout; ++o)
      for (int64_t od = 0; od < Dout; ++od)
        for (int64_t oh = 0; oh < Hout; ++oh)
          for (int64_t ow = 0; ow < Wout; ++ow) {
            S acc = b.numel() > 0 ? b[o] : S(0);
            for (int64_t c = 0; c < Cin; ++c)
              for (int64_t i = 0; i < k; ++i)
                for (int64_t j = 0; j < k; ++j)
                  for (int64_t l = 0; l < k; ++l) {
                    const int64_t id = od * stride - pad + i;
                    const int64_t ih = oh * stride - pad + j;
                    const int64_t iw = ow * stride - pad + l;
                    if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                    acc += x.at5(n, c, id, ih, iw) * w.at5(o, c, i, j, l);
                  }
            out.at5(n, o, od, oh, ow) = acc;
          }
  return out;
}

template <typename S>
void conv3d_backward(const TensorT<S>& x, const TensorT<S>& w, const TensorT<S>& gout,
                     int64_t stride, int64_t pad,
                     TensorT<S>& gx, TensorT<S>& gw, TensorT<S>& gb) {
  const int64_t N = x.dims[0], Cin = x.dims[1], D = x.dims[2], H = x.dims[3], W = x.dims[4];
  const int64_t Cout = w.dims[0], k = w.dims[2];
  const int64_t Dout = gout.dims[2], Hout = gout.dims[3], Wout = gout.dims[4];
  gx = TensorT<S>(x.dims);
  gw = TensorT<S>(w.dims);
  gb = TensorT<S>({Cout});
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < Cout; ++o)
      for (int64_t od = 0; od < Dout; ++od)
        for (int64_t oh = 0; oh < Hout; ++oh)
          for (int64_t ow = 0; ow < Wout; ++ow) {
            const S g = gout.at5(n, o, od, oh, ow);
            gb[o] += g;
            for (int64_t c = 0; c < Cin; ++c)
              for (int64_t i = 0; i < k; ++i)
                for (int64_t j = 0; j < k; ++j)
                  for (int64_t l = 0; l < k; ++l) {
                    const int64_t id = od * stride - pad + i;
                    const int64_t ih = oh * stride - pad + j;
                    const int64_t iw = ow * stride - pad + l;
                    if (id < 0 || id >= D || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                    gw.at5(o, c, i, j, l) += g * x.at5(n, c, id, ih, iw);
                    gx.at5(n, c, id, ih, iw) += g * w.at5(o, c, i, j, l);
                  }
          }
}

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  const int64_t M = a.dims[0], K = a.dims[1], P = b.dims[1];
  TensorT<S> out({M, P});
  for (int64_t m = 0; m < M; ++m)
    for (int64_t p = 0; p < P; ++p) {
      S acc = S(0);
      for (int64_t kk = 0; kk < K; ++kk) acc += a.at2(m, kk) * b.at2(kk, p);
      out.at2(m, p) = acc;
    }
  return out;
}

}  // namespace damnet::reference

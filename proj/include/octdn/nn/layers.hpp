#pragma once

#include <cmath>
#include <vector>

#include "octdn/common.hpp"
#include "octdn/nn/tensor.hpp"

namespace octdn::nn {

inline int ceil_div(int a, int b) { return a >= 0 ? (a + b - 1) / b : -((-a) / b); }

// Convolution geometry. Weight layout is [out_ch][in_ch][k][k].
struct ConvGeom {
  int in_ch = 0, out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
  int pad = 0;

  int out_dim(int in) const { return (in + 2 * pad - dilation * (kernel - 1) - 1) / stride + 1; }
};

// out[n][oc][oh][ow] = bias[oc] + sum_{ic,kh,kw} w * in[n][ic][oh*s-p+kh*d][ow*s-p+kw*d]
// Each (n, oc) plane is owned by one iteration, so the accumulation order per
// output element is fixed and results are identical for any thread count.
template <typename T>
void conv2d_forward(const Tensor<T>& in, const T* w, const T* bias, const ConvGeom& g,
                    Tensor<T>& out, bool accumulate = false) {
  const int H = in.h, W = in.w, OH = out.h, OW = out.w;
  const int k = g.kernel, s = g.stride, d = g.dilation, p = g.pad;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < in.n; ++n) {
    for (int oc = 0; oc < g.out_ch; ++oc) {
      T* out_plane = out.plane(n, oc);
      if (!accumulate) {
        T b = bias ? bias[oc] : T(0);
        for (int i = 0; i < OH * OW; ++i) out_plane[i] = b;
      }
      const T* wkc = w + static_cast<size_t>(oc) * g.in_ch * k * k;
      if (s == 1) {
        // row-major sweep keeps each output row hot across the whole
        // (ic, kh, kw) accumulation
        for (int oh = 0; oh < OH; ++oh) {
          T* out_row = out_plane + static_cast<size_t>(oh) * OW;
          for (int ic = 0; ic < g.in_ch; ++ic) {
            const T* in_plane = in.plane(n, ic);
            const T* wk = wkc + static_cast<size_t>(ic) * k * k;
            for (int kh = 0; kh < k; ++kh) {
              int ih = oh - p + kh * d;
              if (ih < 0 || ih >= H) continue;
              const T* in_row = in_plane + static_cast<size_t>(ih) * W;
              for (int kw = 0; kw < k; ++kw) {
                T wv = wk[kh * k + kw];
                if (wv == T(0)) continue;
                int coff = kw * d - p;
                int ow_lo = std::max(0, -coff);
                int ow_hi = std::min(OW, W - coff);
                const T* src = in_row + coff;
#pragma omp simd
                for (int ow = ow_lo; ow < ow_hi; ++ow) out_row[ow] += wv * src[ow];
              }
            }
          }
        }
        continue;
      }
      for (int ic = 0; ic < g.in_ch; ++ic) {
        const T* in_plane = in.plane(n, ic);
        const T* wk = wkc + static_cast<size_t>(ic) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          int oh_lo = std::max(0, ceil_div(p - kh * d, s));
          int oh_hi = std::min(OH, ceil_div(H + p - kh * d, s));
          for (int kw = 0; kw < k; ++kw) {
            T wv = wk[kh * k + kw];
            if (wv == T(0)) continue;
            int ow_lo = std::max(0, ceil_div(p - kw * d, s));
            int ow_hi = std::min(OW, ceil_div(W + p - kw * d, s));
            int coff = kw * d - p;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const T* in_row = in_plane + static_cast<size_t>(oh * s - p + kh * d) * W;
              T* out_row = out_plane + static_cast<size_t>(oh) * OW;
              for (int ow = ow_lo; ow < ow_hi; ++ow) out_row[ow] += wv * in_row[ow * s + coff];
            }
          }
        }
      }
    }
  }
}

// Accumulates dL/d(in) given dL/d(out). Caller zero-fills g_in (or carries an
// existing partial sum). One (n, ic) plane per iteration.
template <typename T>
void conv2d_backward_data_acc(const Tensor<T>& g_out, const T* w, const ConvGeom& g,
                              Tensor<T>& g_in) {
  const int H = g_in.h, W = g_in.w, OH = g_out.h, OW = g_out.w;
  const int k = g.kernel, s = g.stride, d = g.dilation, p = g.pad;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < g_in.n; ++n) {
    for (int ic = 0; ic < g.in_ch; ++ic) {
      T* gi_plane = g_in.plane(n, ic);
      if (s == 1) {
        for (int ih = 0; ih < H; ++ih) {
          T* gi_row = gi_plane + static_cast<size_t>(ih) * W;
          for (int oc = 0; oc < g.out_ch; ++oc) {
            const T* go_plane = g_out.plane(n, oc);
            const T* wk = w + (static_cast<size_t>(oc) * g.in_ch + ic) * k * k;
            for (int kh = 0; kh < k; ++kh) {
              int oh = ih + p - kh * d;
              if (oh < 0 || oh >= OH) continue;
              const T* go_row = go_plane + static_cast<size_t>(oh) * OW;
              for (int kw = 0; kw < k; ++kw) {
                T wv = wk[kh * k + kw];
                if (wv == T(0)) continue;
                int coff = p - kw * d;
                int iw_lo = std::max(0, -coff);
                int iw_hi = std::min(W, OW - coff);
                const T* src = go_row + coff;
#pragma omp simd
                for (int iw = iw_lo; iw < iw_hi; ++iw) gi_row[iw] += wv * src[iw];
              }
            }
          }
        }
        continue;
      }
      for (int oc = 0; oc < g.out_ch; ++oc) {
        const T* go_plane = g_out.plane(n, oc);
        const T* wk = w + (static_cast<size_t>(oc) * g.in_ch + ic) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          int oh_lo = std::max(0, ceil_div(p - kh * d, s));
          int oh_hi = std::min(OH, ceil_div(H + p - kh * d, s));
          for (int kw = 0; kw < k; ++kw) {
            T wv = wk[kh * k + kw];
            if (wv == T(0)) continue;
            int ow_lo = std::max(0, ceil_div(p - kw * d, s));
            int ow_hi = std::min(OW, ceil_div(W + p - kw * d, s));
            int coff = kw * d - p;
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              T* gi_row = gi_plane + static_cast<size_t>(oh * s - p + kh * d) * W;
              const T* go_row = go_plane + static_cast<size_t>(oh) * OW;
              for (int ow = ow_lo; ow < ow_hi; ++ow) gi_row[ow * s + coff] += wv * go_row[ow];
            }
          }
        }
      }
    }
  }
}

// Accumulates dL/dw and dL/db. Each oc owns its filter slab and bias entry.
template <typename T>
void conv2d_backward_params_acc(const Tensor<T>& in, const Tensor<T>& g_out, const ConvGeom& g,
                                T* g_w, T* g_b) {
  const int H = in.h, W = in.w, OH = g_out.h, OW = g_out.w;
  const int k = g.kernel, s = g.stride, d = g.dilation, p = g.pad;
#pragma omp parallel for schedule(static)
  for (int oc = 0; oc < g.out_ch; ++oc) {
    for (int n = 0; n < in.n; ++n) {
      const T* go_plane = g_out.plane(n, oc);
      for (int ic = 0; ic < g.in_ch; ++ic) {
        const T* in_plane = in.plane(n, ic);
        T* gw = g_w + (static_cast<size_t>(oc) * g.in_ch + ic) * k * k;
        for (int kh = 0; kh < k; ++kh) {
          int oh_lo = std::max(0, ceil_div(p - kh * d, s));
          int oh_hi = std::min(OH, ceil_div(H + p - kh * d, s));
          for (int kw = 0; kw < k; ++kw) {
            int ow_lo = std::max(0, ceil_div(p - kw * d, s));
            int ow_hi = std::min(OW, ceil_div(W + p - kw * d, s));
            int coff = kw * d - p;
            T acc = T(0);
            for (int oh = oh_lo; oh < oh_hi; ++oh) {
              const T* in_row = in_plane + static_cast<size_t>(oh * s - p + kh * d) * W;
              const T* go_row = go_plane + static_cast<size_t>(oh) * OW;
              if (s == 1) {
                const T* src = in_row + coff;
#pragma omp simd reduction(+ : acc)
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += src[ow] * go_row[ow];
              } else {
#pragma omp simd reduction(+ : acc)
                for (int ow = ow_lo; ow < ow_hi; ++ow) acc += in_row[ow * s + coff] * go_row[ow];
              }
            }
            gw[kh * k + kw] += acc;
          }
        }
      }
      if (g_b) {
        T acc = T(0);
#pragma omp simd reduction(+ : acc)
        for (int i = 0; i < OH * OW; ++i) acc += go_plane[i];
        g_b[oc] += acc;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Transpose convolution: out = (in-1)*s - 2p + k + out_pad. Weight layout is
// [in_ch][out_ch][k][k]. Forward/backward reuse the convolution kernels with
// input/output roles swapped (the transpose conv is the data-gradient of the
// convolution that maps its output back to its input).

struct ConvTGeom {
  int in_ch = 0, out_ch = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int out_pad = 0;

  int out_dim(int in) const { return (in - 1) * stride - 2 * pad + kernel + out_pad; }

  ConvGeom dual() const {
    // the convolution going out -> in
    return ConvGeom{out_ch, in_ch, kernel, stride, 1, pad};
  }
};

template <typename T>
void convt2d_forward(const Tensor<T>& in, const T* w, const T* bias, const ConvTGeom& g,
                     Tensor<T>& out) {
  const int OH = out.h, OW = out.w;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < out.n; ++n) {
    for (int oc = 0; oc < g.out_ch; ++oc) {
      T* plane = out.plane(n, oc);
      T b = bias ? bias[oc] : T(0);
      for (int i = 0; i < OH * OW; ++i) plane[i] = b;
    }
  }
  conv2d_backward_data_acc(in, w, g.dual(), out);
}

template <typename T>
void convt2d_backward_data_acc(const Tensor<T>& g_out, const T* w, const ConvTGeom& g,
                               Tensor<T>& g_in) {
  conv2d_forward(g_out, w, static_cast<const T*>(nullptr), g.dual(), g_in, /*accumulate=*/true);
}

template <typename T>
void convt2d_backward_params_acc(const Tensor<T>& in, const Tensor<T>& g_out, const ConvTGeom& g,
                                 T* g_w, T* g_b) {
  conv2d_backward_params_acc(g_out, in, g.dual(), g_w, static_cast<T*>(nullptr));
  if (g_b) {
    const int OH = g_out.h, OW = g_out.w;
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < g.out_ch; ++oc) {
      T acc = T(0);
      for (int n = 0; n < g_out.n; ++n) {
        const T* plane = g_out.plane(n, oc);
        for (int i = 0; i < OH * OW; ++i) acc += plane[i];
      }
      g_b[oc] += acc;
    }
  }
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel, population variance.

template <typename T>
struct BnCache {
  std::vector<T> mean, invstd;
  bool used_batch_stats = false;
};

template <typename T>
void bn_forward(const Tensor<T>& in, const T* gamma, const T* beta, T* running_mean,
                T* running_var, T eps, T momentum, bool use_batch_stats, bool update_running,
                Tensor<T>& out, BnCache<T>& cache) {
  const int C = in.c;
  const size_t plane = static_cast<size_t>(in.h) * in.w;
  const T m_count = static_cast<T>(static_cast<double>(in.n) * in.h * in.w);
  cache.mean.assign(C, T(0));
  cache.invstd.assign(C, T(0));
  cache.used_batch_stats = use_batch_stats;
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    T mean, var;
    if (use_batch_stats) {
      T sum = T(0), sumsq = T(0);
      for (int n = 0; n < in.n; ++n) {
        const T* p = in.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          sum += p[i];
          sumsq += p[i] * p[i];
        }
      }
      mean = sum / m_count;
      var = sumsq / m_count - mean * mean;
      if (var < T(0)) var = T(0);
      if (update_running) {
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * mean;
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * var;
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    T invstd = T(1) / std::sqrt(var + eps);
    cache.mean[c] = mean;
    cache.invstd[c] = invstd;
    T a = gamma[c] * invstd;
    T b = beta[c] - a * mean;
    for (int n = 0; n < in.n; ++n) {
      const T* p = in.plane(n, c);
      T* q = out.plane(n, c);
      for (size_t i = 0; i < plane; ++i) q[i] = a * p[i] + b;
    }
  }
}

template <typename T>
void bn_backward_acc(const Tensor<T>& in, const Tensor<T>& g_out, const T* gamma,
                     const BnCache<T>& cache, Tensor<T>& g_in, T* g_gamma, T* g_beta) {
  const int C = in.c;
  const size_t plane = static_cast<size_t>(in.h) * in.w;
  const T m_count = static_cast<T>(static_cast<double>(in.n) * in.h * in.w);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    T mean = cache.mean[c], invstd = cache.invstd[c];
    T sum_gy = T(0), sum_gy_xhat = T(0);
    for (int n = 0; n < in.n; ++n) {
      const T* gy = g_out.plane(n, c);
      const T* x = in.plane(n, c);
      for (size_t i = 0; i < plane; ++i) {
        sum_gy += gy[i];
        sum_gy_xhat += gy[i] * (x[i] - mean) * invstd;
      }
    }
    g_gamma[c] += sum_gy_xhat;
    g_beta[c] += sum_gy;
    T a = gamma[c] * invstd;
    if (cache.used_batch_stats) {
      T mg = sum_gy / m_count;
      T mgx = sum_gy_xhat / m_count;
      for (int n = 0; n < in.n; ++n) {
        const T* gy = g_out.plane(n, c);
        const T* x = in.plane(n, c);
        T* gi = g_in.plane(n, c);
        for (size_t i = 0; i < plane; ++i) {
          T xhat = (x[i] - mean) * invstd;
          gi[i] += a * (gy[i] - mg - xhat * mgx);
        }
      }
    } else {
      for (int n = 0; n < in.n; ++n) {
        const T* gy = g_out.plane(n, c);
        T* gi = g_in.plane(n, c);
        for (size_t i = 0; i < plane; ++i) gi[i] += a * gy[i];
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Activations.

template <typename T>
void elu_forward(const Tensor<T>& in, Tensor<T>& out) {
  const size_t n = in.size();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    T x = in.v[i];
    out.v[i] = x > T(0) ? x : std::expm1(x);
  }
}

template <typename T>
void elu_backward_acc(const Tensor<T>& in, const Tensor<T>& out, const Tensor<T>& g_out,
                      Tensor<T>& g_in) {
  const size_t n = in.size();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    g_in.v[i] += g_out.v[i] * (in.v[i] > T(0) ? T(1) : out.v[i] + T(1));
  }
}

// tanh with the result nudged strictly inside (-1, 1): extreme pre-activations
// round to exactly +/-1 in finite precision otherwise.
template <typename T>
void tanh_forward(const Tensor<T>& in, Tensor<T>& out) {
  const T lim = std::nextafter(T(1), T(0));
  const size_t n = in.size();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    T y = std::tanh(in.v[i]);
    if (y > lim) y = lim;
    if (y < -lim) y = -lim;
    out.v[i] = y;
  }
}

template <typename T>
void tanh_backward_acc(const Tensor<T>& out, const Tensor<T>& g_out, Tensor<T>& g_in) {
  const size_t n = out.size();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    g_in.v[i] += g_out.v[i] * (T(1) - out.v[i] * out.v[i]);
  }
}

}  // namespace octdn::nn

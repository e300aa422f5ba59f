#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>
#include <vector>

#include "mde/common.hpp"
#include "mde/tape.hpp"
#include "mde/tensor.hpp"

namespace mde {

namespace detail {

// Row-major GEMM kernels. C is [M,N]; accum=false overwrites, true adds.

// C (+)= A[M,K] * B[K,N]
template <typename S>
void gemm_nn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accum) {
  for (int64_t i = 0; i < M; ++i) {
    S* c = C + i * N;
    if (!accum) std::fill(c, c + N, S(0));
    const S* a = A + i * K;
    for (int64_t k = 0; k < K; ++k) {
      const S av = a[k];
      const S* b = B + k * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C (+)= A^T * B with A stored [K,M]
template <typename S>
void gemm_tn(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accum) {
  if (!accum) std::fill(C, C + M * N, S(0));
  for (int64_t k = 0; k < K; ++k) {
    const S* a = A + k * M;
    const S* b = B + k * N;
    for (int64_t i = 0; i < M; ++i) {
      const S av = a[i];
      S* c = C + i * N;
      for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// C (+)= A * B^T with B stored [N,K]. Dot-product form; the unrolled
// accumulators keep the reduction vectorizable without reordering math
// across runs.
template <typename S>
void gemm_nt(int64_t M, int64_t N, int64_t K, const S* A, const S* B, S* C, bool accum) {
  constexpr int64_t U = 8;
  for (int64_t i = 0; i < M; ++i) {
    const S* a = A + i * K;
    S* c = C + i * N;
    for (int64_t j = 0; j < N; ++j) {
      const S* b = B + j * K;
      S acc[U] = {};
      int64_t k = 0;
      for (; k + U <= K; k += U)
        for (int64_t u = 0; u < U; ++u) acc[u] += a[k + u] * b[k + u];
      S dot = S(0);
      for (; k < K; ++k) dot += a[k] * b[k];
      for (int64_t u = 0; u < U; ++u) dot += acc[u];
      c[j] = (accum ? c[j] : S(0)) + dot;
    }
  }
}

// Unfold one [C,H,W] image into a [C*k*k, Hc*Wc] patch matrix for a square
// kernel k with the given stride/zero-padding. Out-of-bounds taps read 0.
template <typename S>
void im2col(const S* src, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride, int64_t pad,
            int64_t Hc, int64_t Wc, S* cols) {
  for (int64_t c = 0; c < C; ++c) {
    const S* plane = src + c * H * W;
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v) {
        S* row = cols + ((c * k + u) * k + v) * (Hc * Wc);
        for (int64_t i = 0; i < Hc; ++i) {
          const int64_t ih = i * stride - pad + u;
          S* out = row + i * Wc;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + Wc, S(0));
            continue;
          }
          const S* in = plane + ih * W;
          for (int64_t j = 0; j < Wc; ++j) {
            const int64_t iw = j * stride - pad + v;
            out[j] = (iw >= 0 && iw < W) ? in[iw] : S(0);
          }
        }
      }
  }
}

// Adjoint of im2col: fold the patch matrix back, accumulating into dst.
template <typename S>
void col2im_acc(const S* cols, int64_t C, int64_t H, int64_t W, int64_t k, int64_t stride,
                int64_t pad, int64_t Hc, int64_t Wc, S* dst) {
  for (int64_t c = 0; c < C; ++c) {
    S* plane = dst + c * H * W;
    for (int64_t u = 0; u < k; ++u)
      for (int64_t v = 0; v < k; ++v) {
        const S* row = cols + ((c * k + u) * k + v) * (Hc * Wc);
        for (int64_t i = 0; i < Hc; ++i) {
          const int64_t ih = i * stride - pad + u;
          if (ih < 0 || ih >= H) continue;
          S* out = plane + ih * W;
          const S* in = row + i * Wc;
          for (int64_t j = 0; j < Wc; ++j) {
            const int64_t iw = j * stride - pad + v;
            if (iw >= 0 && iw < W) out[iw] += in[j];
          }
        }
      }
  }
}

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <typename S>
void require_same_shape(const Tape<S>& t, Var a, Var b, const char* op) {
  MDE_CHECK(t.value(a).same_shape(t.value(b)), DimensionError, op, ": shape mismatch ",
            shape_str(t.value(a).shape), " vs ", shape_str(t.value(b).shape));
}

}  // namespace detail

// ---- elementwise and structural primitives ----

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "add");
  Tensor<S> out = t.value(a);
  const Tensor<S>& vb = t.value(b);
  for (int64_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "add");
  if (needs)
    t.set_backward(y, [a, b, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      if (tt.needs_grad(a)) {
        Tensor<S>& ga = tt.grad_buf(a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tt.needs_grad(b)) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  return y;
}

template <typename S>
Var sub(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "sub");
  Tensor<S> out = t.value(a);
  const Tensor<S>& vb = t.value(b);
  for (int64_t i = 0; i < out.size(); ++i) out[i] -= vb[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "sub");
  if (needs)
    t.set_backward(y, [a, b, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      if (tt.needs_grad(a)) {
        Tensor<S>& ga = tt.grad_buf(a);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (tt.needs_grad(b)) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  return y;
}

template <typename S>
Var mul(Tape<S>& t, Var a, Var b) {
  detail::require_same_shape(t, a, b, "mul");
  Tensor<S> out = t.value(a);
  const Tensor<S>& vb = t.value(b);
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= vb[i];
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "mul");
  if (needs)
    t.set_backward(y, [a, b, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      if (tt.needs_grad(a)) {
        Tensor<S>& ga = tt.grad_buf(a);
        const Tensor<S>& vb2 = tt.value(b);
        for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (tt.needs_grad(b)) {
        Tensor<S>& gb = tt.grad_buf(b);
        const Tensor<S>& va2 = tt.value(a);
        for (int64_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va2[i];
      }
    });
  return y;
}

// y = scale * a + shift, elementwise with scalar coefficients
template <typename S>
Var affine(Tape<S>& t, Var a, double scale, double shift) {
  Tensor<S> out = t.value(a);
  const S sc = static_cast<S>(scale), sh = static_cast<S>(shift);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = sc * out[i] + sh;
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "affine");
  if (needs)
    t.set_backward(y, [a, y, sc](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += sc * g[i];
    });
  return y;
}

template <typename S>
Var abs_val(Tape<S>& t, Var a) {
  Tensor<S> out = t.value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(out[i]);
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "abs");
  if (needs)
    t.set_backward(y, [a, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& va = tt.value(a);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) {
        if (va[i] > S(0))
          ga[i] += g[i];
        else if (va[i] < S(0))
          ga[i] -= g[i];
      }
    });
  return y;
}

// Natural log; inputs must already be positive (clamp upstream).
template <typename S>
Var log_val(Tape<S>& t, Var a) {
  Tensor<S> out = t.value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "log");
  if (needs)
    t.set_backward(y, [a, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& va = tt.value(a);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i] / va[i];
    });
  return y;
}

template <typename S>
Var sqrt_val(Tape<S>& t, Var a) {
  Tensor<S> out = t.value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(out[i]);
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "sqrt");
  if (needs)
    t.set_backward(y, [a, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& vy = tt.value(y);
      const Tensor<S>& va = tt.value(a);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i)
        if (va[i] > S(0)) ga[i] += g[i] * S(0.5) / vy[i];
    });
  return y;
}

// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
template <typename S>
Var clamp(Tape<S>& t, Var a, double lo, double hi) {
  MDE_CHECK(lo <= hi, ParameterError, "clamp: lo > hi");
  const S l = static_cast<S>(lo), h = static_cast<S>(hi);
  Tensor<S> out = t.value(a);
  for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(out[i], l), h);
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "clamp");
  if (needs)
    t.set_backward(y, [a, y, l, h](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& va = tt.value(a);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i)
        if (va[i] > l && va[i] < h) ga[i] += g[i];
    });
  return y;
}

template <typename S>
Var sum(Tape<S>& t, Var a) {
  const Tensor<S>& va = t.value(a);
  S total = S(0);
  for (int64_t i = 0; i < va.size(); ++i) total += va[i];
  bool needs = t.needs_grad(a);
  Var y = t.push(Tensor<S>::scalar(total), needs);
  t.finite_or_throw(y, "sum");
  if (needs)
    t.set_backward(y, [a, y](Tape<S>& tt) {
      const S g = tt.grad(y)[0];
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  return y;
}

template <typename S>
Var mean(Tape<S>& t, Var a) {
  const int64_t n = t.value(a).size();
  return affine(t, sum(t, a), 1.0 / static_cast<double>(n), 0.0);
}

// Sum over the last axis of a 2-D tensor: [R,C] -> [R]
template <typename S>
Var row_sum(Tape<S>& t, Var a) {
  const Tensor<S>& va = t.value(a);
  MDE_CHECK(va.ndim() == 2, DimensionError, "row_sum expects a 2-D tensor, got ",
            shape_str(va.shape));
  const int64_t R = va.dim(0), C = va.dim(1);
  Tensor<S> out = Tensor<S>::zeros({R});
  for (int64_t r = 0; r < R; ++r) {
    S acc = S(0);
    for (int64_t c = 0; c < C; ++c) acc += va[r * C + c];
    out[r] = acc;
  }
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "row_sum");
  if (needs)
    t.set_backward(y, [a, y, R, C](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t r = 0; r < R; ++r)
        for (int64_t c = 0; c < C; ++c) ga[r * C + c] += g[r];
    });
  return y;
}

template <typename S>
Var reshape(Tape<S>& t, Var a, Shape shape) {
  const Tensor<S>& va = t.value(a);
  MDE_CHECK(shape_numel(shape) == va.size(), DimensionError, "reshape: ", shape_str(va.shape),
            " has ", va.size(), " elements, target ", shape_str(shape), " has ",
            shape_numel(shape));
  Tensor<S> out = va;
  out.shape = std::move(shape);
  bool needs = t.needs_grad(a);
  Var y = t.push(std::move(out), needs);
  if (needs)
    t.set_backward(y, [a, y](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      Tensor<S>& ga = tt.grad_buf(a);
      for (int64_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  return y;
}

// Concatenate two [N,C,H,W] tensors along the channel axis.
template <typename S>
Var concat_channels(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& va = t.value(a);
  const Tensor<S>& vb = t.value(b);
  MDE_CHECK(va.ndim() == 4 && vb.ndim() == 4, DimensionError,
            "concat_channels expects 4-D tensors");
  MDE_CHECK(va.dim(0) == vb.dim(0) && va.dim(2) == vb.dim(2) && va.dim(3) == vb.dim(3),
            DimensionError, "concat_channels: incompatible shapes ", shape_str(va.shape), " vs ",
            shape_str(vb.shape));
  const int64_t N = va.dim(0), Ca = va.dim(1), Cb = vb.dim(1), H = va.dim(2), W = va.dim(3);
  const int64_t plane = H * W;
  Tensor<S> out = Tensor<S>::zeros({N, Ca + Cb, H, W});
  for (int64_t n = 0; n < N; ++n) {
    std::memcpy(out.data.data() + n * (Ca + Cb) * plane, va.data.data() + n * Ca * plane,
                sizeof(S) * static_cast<size_t>(Ca * plane));
    std::memcpy(out.data.data() + (n * (Ca + Cb) + Ca) * plane, vb.data.data() + n * Cb * plane,
                sizeof(S) * static_cast<size_t>(Cb * plane));
  }
  bool needs = t.needs_grad(a) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  if (needs)
    t.set_backward(y, [a, b, y, N, Ca, Cb, plane](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      if (tt.needs_grad(a)) {
        Tensor<S>& ga = tt.grad_buf(a);
        for (int64_t n = 0; n < N; ++n) {
          const S* src = g.data.data() + n * (Ca + Cb) * plane;
          S* dst = ga.data.data() + n * Ca * plane;
          for (int64_t i = 0; i < Ca * plane; ++i) dst[i] += src[i];
        }
      }
      if (tt.needs_grad(b)) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t n = 0; n < N; ++n) {
          const S* src = g.data.data() + (n * (Ca + Cb) + Ca) * plane;
          S* dst = gb.data.data() + n * Cb * plane;
          for (int64_t i = 0; i < Cb * plane; ++i) dst[i] += src[i];
        }
      }
    });
  return y;
}

// ---- activations ----

enum class Act { Relu, LeakyRelu, Sigmoid };

template <typename S>
Var activation(Tape<S>& t, Var x, Act kind, double alpha = 0.2) {
  const Tensor<S>& vx = t.value(x);
  const S a = static_cast<S>(alpha);
  Tensor<S> out = vx;
  switch (kind) {
    case Act::Relu:
      for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > S(0) ? out[i] : S(0);
      break;
    case Act::LeakyRelu:
      for (int64_t i = 0; i < out.size(); ++i) out[i] = out[i] > S(0) ? out[i] : a * out[i];
      break;
    case Act::Sigmoid:
      for (int64_t i = 0; i < out.size(); ++i) {
        const S v = out[i];
        if (v >= S(0)) {
          out[i] = S(1) / (S(1) + std::exp(-v));
        } else {
          const S e = std::exp(v);
          out[i] = e / (S(1) + e);
        }
      }
      break;
  }
  bool needs = t.needs_grad(x);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "activation");
  if (needs)
    t.set_backward(y, [x, y, kind, a](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& vx2 = tt.value(x);
      const Tensor<S>& vy = tt.value(y);
      Tensor<S>& gx = tt.grad_buf(x);
      switch (kind) {
        case Act::Relu:
          for (int64_t i = 0; i < g.size(); ++i)
            if (vx2[i] > S(0)) gx[i] += g[i];
          break;
        case Act::LeakyRelu:
          for (int64_t i = 0; i < g.size(); ++i) gx[i] += vx2[i] > S(0) ? g[i] : a * g[i];
          break;
        case Act::Sigmoid:
          for (int64_t i = 0; i < g.size(); ++i) gx[i] += g[i] * vy[i] * (S(1) - vy[i]);
          break;
      }
    });
  return y;
}

template <typename S>
Var relu(Tape<S>& t, Var x) {
  return activation(t, x, Act::Relu);
}
template <typename S>
Var leaky_relu(Tape<S>& t, Var x, double alpha = 0.2) {
  return activation(t, x, Act::LeakyRelu, alpha);
}
template <typename S>
Var sigmoid(Tape<S>& t, Var x) {
  return activation(t, x, Act::Sigmoid);
}

// ---- dense / pooling ----

// x[N,D] * w[D,E] + b[E] -> [N,E]
template <typename S>
Var fully_connected(Tape<S>& t, Var x, Var w, Var b) {
  const Tensor<S>& vx = t.value(x);
  const Tensor<S>& vw = t.value(w);
  const Tensor<S>& vb = t.value(b);
  MDE_CHECK(vx.ndim() == 2 && vw.ndim() == 2 && vb.ndim() == 1, DimensionError,
            "fully_connected expects x[N,D], w[D,E], b[E]");
  const int64_t N = vx.dim(0), D = vx.dim(1), E = vw.dim(1);
  MDE_CHECK(vw.dim(0) == D, DimensionError, "fully_connected: x has ", D, " features but w is ",
            shape_str(vw.shape));
  MDE_CHECK(vb.dim(0) == E, DimensionError, "fully_connected: bias length ", vb.dim(0),
            " does not match output width ", E);
  Tensor<S> out = Tensor<S>::zeros({N, E});
  detail::gemm_nn(N, E, D, vx.data.data(), vw.data.data(), out.data.data(), false);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t e = 0; e < E; ++e) out[n * E + e] += vb[e];
  bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "fully_connected");
  if (needs)
    t.set_backward(y, [x, w, b, y, N, D, E](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      if (tt.needs_grad(x)) {
        // dx = g * w^T
        detail::gemm_nt(N, D, E, g.data.data(), tt.value(w).data.data(),
                        tt.grad_buf(x).data.data(), true);
      }
      if (tt.needs_grad(w)) {
        // dw = x^T * g
        detail::gemm_tn(D, E, N, tt.value(x).data.data(), g.data.data(),
                        tt.grad_buf(w).data.data(), true);
      }
      if (tt.needs_grad(b)) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t e = 0; e < E; ++e) gb[e] += g[n * E + e];
      }
    });
  return y;
}

// [N,C,H,W] -> [N,C], mean over each spatial plane
template <typename S>
Var global_avg_pool(Tape<S>& t, Var x) {
  const Tensor<S>& vx = t.value(x);
  MDE_CHECK(vx.ndim() == 4, DimensionError, "global_avg_pool expects a 4-D tensor, got ",
            shape_str(vx.shape));
  const int64_t N = vx.dim(0), C = vx.dim(1), plane = vx.dim(2) * vx.dim(3);
  Tensor<S> out = Tensor<S>::zeros({N, C});
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const S* p = vx.data.data() + nc * plane;
    S acc = S(0);
    for (int64_t i = 0; i < plane; ++i) acc += p[i];
    out[nc] = acc / static_cast<S>(plane);
  }
  bool needs = t.needs_grad(x);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "global_avg_pool");
  if (needs)
    t.set_backward(y, [x, y, N, C, plane](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      Tensor<S>& gx = tt.grad_buf(x);
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const S gv = g[nc] / static_cast<S>(plane);
        S* p = gx.data.data() + nc * plane;
        for (int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
    });
  return y;
}

// ---- convolutions ----

// x[N,C,H,W] (*) w[F,C,k,k] + b[F], square kernel, zero padding.
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var w, Var b, int64_t stride, int64_t pad) {
  const Tensor<S>& vx = t.value(x);
  const Tensor<S>& vw = t.value(w);
  const Tensor<S>& vb = t.value(b);
  MDE_CHECK(vx.ndim() == 4, DimensionError, "conv2d expects x[N,C,H,W], got ",
            shape_str(vx.shape));
  MDE_CHECK(vw.ndim() == 4 && vw.dim(2) == vw.dim(3), DimensionError,
            "conv2d expects w[F,C,k,k] with square kernel, got ", shape_str(vw.shape));
  MDE_CHECK(stride >= 1, ParameterError, "conv2d: stride must be >= 1, got ", stride);
  MDE_CHECK(pad >= 0, ParameterError, "conv2d: padding must be >= 0, got ", pad);
  const int64_t N = vx.dim(0), C = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int64_t F = vw.dim(0), k = vw.dim(2);
  MDE_CHECK(vw.dim(1) == C, DimensionError, "conv2d: input has ", C, " channels but w is ",
            shape_str(vw.shape));
  MDE_CHECK(vb.ndim() == 1 && vb.dim(0) == F, DimensionError,
            "conv2d: bias must be [F] = [", F, "], got ", shape_str(vb.shape));
  MDE_CHECK(H + 2 * pad >= k && W + 2 * pad >= k, DimensionError,
            "conv2d: kernel ", k, " exceeds padded input ", H + 2 * pad, "x", W + 2 * pad);
  const int64_t Hc = detail::conv_out_extent(H, k, stride, pad);
  const int64_t Wc = detail::conv_out_extent(W, k, stride, pad);
  const int64_t CKK = C * k * k, P = Hc * Wc;

  Tensor<S> out = Tensor<S>::zeros({N, F, Hc, Wc});
  {
    std::vector<S> cols(static_cast<size_t>(CKK * P));
    for (int64_t n = 0; n < N; ++n) {
      detail::im2col(vx.data.data() + n * C * H * W, C, H, W, k, stride, pad, Hc, Wc, cols.data());
      S* on = out.data.data() + n * F * P;
      detail::gemm_nn(F, P, CKK, vw.data.data(), cols.data(), on, false);
      for (int64_t f = 0; f < F; ++f) {
        const S bias = vb[f];
        S* row = on + f * P;
        for (int64_t i = 0; i < P; ++i) row[i] += bias;
      }
    }
  }
  bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "conv2d");
  if (needs)
    t.set_backward(y, [x, w, b, y, N, C, H, W, F, k, stride, pad, Hc, Wc, CKK, P](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const bool nx = tt.needs_grad(x), nw = tt.needs_grad(w), nb = tt.needs_grad(b);
      if (nb) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t f = 0; f < F; ++f) {
            const S* row = g.data.data() + (n * F + f) * P;
            S acc = S(0);
            for (int64_t i = 0; i < P; ++i) acc += row[i];
            gb[f] += acc;
          }
      }
      if (!nx && !nw) return;
      std::vector<S> cols(static_cast<size_t>(CKK * P));
      const Tensor<S>& vx2 = tt.value(x);
      const Tensor<S>& vw2 = tt.value(w);
      for (int64_t n = 0; n < N; ++n) {
        const S* gn = g.data.data() + n * F * P;
        if (nw) {
          detail::im2col(vx2.data.data() + n * C * H * W, C, H, W, k, stride, pad, Hc, Wc,
                         cols.data());
          // dw[F,CKK] += g_n[F,P] * cols[CKK,P]^T
          detail::gemm_nt(F, CKK, P, gn, cols.data(), tt.grad_buf(w).data.data(), true);
        }
        if (nx) {
          // dcols[CKK,P] = w[F,CKK]^T * g_n[F,P], then fold back
          detail::gemm_tn(CKK, P, F, vw2.data.data(), gn, cols.data(), false);
          detail::col2im_acc(cols.data(), C, H, W, k, stride, pad, Hc, Wc,
                             tt.grad_buf(x).data.data() + n * C * H * W);
        }
      }
    });
  return y;
}

// Transposed convolution, the adjoint of conv2d on the spatial map.
// x[N,Cin,H,W] with w[Cin,Cout,k,k]; output extent (H-1)*stride + k - 2*pad
// + output_padding.
template <typename S>
Var conv2d_transpose(Tape<S>& t, Var x, Var w, Var b, int64_t stride, int64_t pad,
                     int64_t output_padding = 0) {
  const Tensor<S>& vx = t.value(x);
  const Tensor<S>& vw = t.value(w);
  const Tensor<S>& vb = t.value(b);
  MDE_CHECK(vx.ndim() == 4, DimensionError, "conv2d_transpose expects x[N,C,H,W], got ",
            shape_str(vx.shape));
  MDE_CHECK(vw.ndim() == 4 && vw.dim(2) == vw.dim(3), DimensionError,
            "conv2d_transpose expects w[Cin,Cout,k,k] with square kernel, got ",
            shape_str(vw.shape));
  MDE_CHECK(stride >= 1, ParameterError, "conv2d_transpose: stride must be >= 1, got ", stride);
  MDE_CHECK(pad >= 0, ParameterError, "conv2d_transpose: padding must be >= 0, got ", pad);
  MDE_CHECK(output_padding >= 0 && output_padding < stride, ParameterError,
            "conv2d_transpose: output_padding must lie in [0, stride), got ", output_padding);
  const int64_t N = vx.dim(0), Cin = vx.dim(1), H = vx.dim(2), W = vx.dim(3);
  const int64_t Cout = vw.dim(1), k = vw.dim(2);
  MDE_CHECK(vw.dim(0) == Cin, DimensionError, "conv2d_transpose: input has ", Cin,
            " channels but w is ", shape_str(vw.shape));
  MDE_CHECK(vb.ndim() == 1 && vb.dim(0) == Cout, DimensionError,
            "conv2d_transpose: bias must be [Cout] = [", Cout, "], got ", shape_str(vb.shape));
  const int64_t Ho = (H - 1) * stride + k - 2 * pad + output_padding;
  const int64_t Wo = (W - 1) * stride + k - 2 * pad + output_padding;
  MDE_CHECK(Ho >= 1 && Wo >= 1, DimensionError, "conv2d_transpose: output extent ", Ho, "x", Wo,
            " is empty");
  const int64_t CKK = Cout * k * k, P = H * W;

  Tensor<S> out = Tensor<S>::zeros({N, Cout, Ho, Wo});
  {
    std::vector<S> cols(static_cast<size_t>(CKK * P));
    for (int64_t n = 0; n < N; ++n) {
      // cols[CKK,P] = w[Cin,CKK]^T * x_n[Cin,P]
      detail::gemm_tn(CKK, P, Cin, vw.data.data(), vx.data.data() + n * Cin * P, cols.data(),
                      false);
      S* on = out.data.data() + n * Cout * Ho * Wo;
      detail::col2im_acc(cols.data(), Cout, Ho, Wo, k, stride, pad, H, W, on);
      for (int64_t c = 0; c < Cout; ++c) {
        const S bias = vb[c];
        S* row = on + c * Ho * Wo;
        for (int64_t i = 0; i < Ho * Wo; ++i) row[i] += bias;
      }
    }
  }
  bool needs = t.needs_grad(x) || t.needs_grad(w) || t.needs_grad(b);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "conv2d_transpose");
  if (needs)
    t.set_backward(y, [x, w, b, y, N, Cin, H, W, Cout, k, stride, pad, Ho, Wo, CKK,
                       P](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const bool nx = tt.needs_grad(x), nw = tt.needs_grad(w), nb = tt.needs_grad(b);
      if (nb) {
        Tensor<S>& gb = tt.grad_buf(b);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < Cout; ++c) {
            const S* row = g.data.data() + (n * Cout + c) * Ho * Wo;
            S acc = S(0);
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += row[i];
            gb[c] += acc;
          }
      }
      if (!nx && !nw) return;
      std::vector<S> cols(static_cast<size_t>(CKK * P));
      const Tensor<S>& vx2 = tt.value(x);
      const Tensor<S>& vw2 = tt.value(w);
      for (int64_t n = 0; n < N; ++n) {
        detail::im2col(g.data.data() + n * Cout * Ho * Wo, Cout, Ho, Wo, k, stride, pad, H, W,
                       cols.data());
        if (nx) {
          // dx_n[Cin,P] += w[Cin,CKK] * cols[CKK,P]
          detail::gemm_nn(Cin, P, CKK, vw2.data.data(), cols.data(),
                          tt.grad_buf(x).data.data() + n * Cin * P, true);
        }
        if (nw) {
          // dw[Cin,CKK] += x_n[Cin,P] * cols[CKK,P]^T
          detail::gemm_nt(Cin, CKK, P, vx2.data.data() + n * Cin * P, cols.data(),
                          tt.grad_buf(w).data.data(), true);
        }
      }
    });
  return y;
}

// ---- batch normalization ----

// Per-channel batch norm over [N,C,H,W]. In training mode the batch mean and
// biased variance normalize the activations and, when update_running_stats is
// set, blend into the running buffers (unbiased variance there). In eval mode
// the running buffers normalize and are never written.
template <typename S>
Var batchnorm2d(Tape<S>& t, Var x, Var gamma, Var beta, Tensor<S>& running_mean,
                Tensor<S>& running_var, bool train, bool update_running_stats,
                double momentum = 0.1, double eps = 1e-5) {
  const Tensor<S>& vx = t.value(x);
  MDE_CHECK(vx.ndim() == 4, DimensionError, "batchnorm2d expects a 4-D tensor, got ",
            shape_str(vx.shape));
  const int64_t N = vx.dim(0), C = vx.dim(1), HW = vx.dim(2) * vx.dim(3);
  const Tensor<S>& vg = t.value(gamma);
  const Tensor<S>& vbeta = t.value(beta);
  MDE_CHECK(vg.ndim() == 1 && vg.dim(0) == C, DimensionError, "batchnorm2d: gamma must be [", C,
            "], got ", shape_str(vg.shape));
  MDE_CHECK(vbeta.ndim() == 1 && vbeta.dim(0) == C, DimensionError, "batchnorm2d: beta must be [",
            C, "], got ", shape_str(vbeta.shape));
  MDE_CHECK(running_mean.ndim() == 1 && running_mean.dim(0) == C && running_var.ndim() == 1 &&
                running_var.dim(0) == C,
            DimensionError, "batchnorm2d: running stats must be [", C, "]");
  const int64_t m = N * HW;
  MDE_CHECK(!train || m >= 2, DimensionError,
            "batchnorm2d: training mode needs at least 2 values per channel, got ", m);

  Tensor<S> mean_c = Tensor<S>::zeros({C});
  Tensor<S> invstd_c = Tensor<S>::zeros({C});
  if (train) {
    for (int64_t c = 0; c < C; ++c) {
      S acc = S(0);
      for (int64_t n = 0; n < N; ++n) {
        const S* p = vx.data.data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) acc += p[i];
      }
      const S mu = acc / static_cast<S>(m);
      S var = S(0);
      for (int64_t n = 0; n < N; ++n) {
        const S* p = vx.data.data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const S d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<S>(m);
      mean_c[c] = mu;
      invstd_c[c] = S(1) / std::sqrt(var + static_cast<S>(eps));
      if (update_running_stats) {
        const S mom = static_cast<S>(momentum);
        const S unbiased = var * static_cast<S>(m) / static_cast<S>(m - 1);
        running_mean[c] = (S(1) - mom) * running_mean[c] + mom * mu;
        running_var[c] = (S(1) - mom) * running_var[c] + mom * unbiased;
      }
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      mean_c[c] = running_mean[c];
      invstd_c[c] = S(1) / std::sqrt(running_var[c] + static_cast<S>(eps));
    }
  }

  Tensor<S> out = Tensor<S>::zeros(vx.shape);
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const S mu = mean_c[c], is = invstd_c[c], ga = vg[c], be = vbeta[c];
      const S* p = vx.data.data() + (n * C + c) * HW;
      S* q = out.data.data() + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) q[i] = ga * (p[i] - mu) * is + be;
    }

  bool needs = t.needs_grad(x) || t.needs_grad(gamma) || t.needs_grad(beta);
  Var y = t.push(std::move(out), needs);
  t.finite_or_throw(y, "batchnorm2d");
  if (needs)
    t.set_backward(y, [x, gamma, beta, y, N, C, HW, m, train, mean_c, invstd_c](Tape<S>& tt) {
      const Tensor<S>& g = tt.grad(y);
      const Tensor<S>& vx2 = tt.value(x);
      const Tensor<S>& vg2 = tt.value(gamma);
      // per-channel Σdy and Σdy·x̂
      Tensor<S> sum_dy = Tensor<S>::zeros({C});
      Tensor<S> sum_dy_xhat = Tensor<S>::zeros({C});
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          const S mu = mean_c[c], is = invstd_c[c];
          const S* gp = g.data.data() + (n * C + c) * HW;
          const S* xp = vx2.data.data() + (n * C + c) * HW;
          S s0 = S(0), s1 = S(0);
          for (int64_t i = 0; i < HW; ++i) {
            s0 += gp[i];
            s1 += gp[i] * (xp[i] - mu) * is;
          }
          sum_dy[c] += s0;
          sum_dy_xhat[c] += s1;
        }
      if (tt.needs_grad(gamma)) {
        Tensor<S>& gg = tt.grad_buf(gamma);
        for (int64_t c = 0; c < C; ++c) gg[c] += sum_dy_xhat[c];
      }
      if (tt.needs_grad(beta)) {
        Tensor<S>& gb = tt.grad_buf(beta);
        for (int64_t c = 0; c < C; ++c) gb[c] += sum_dy[c];
      }
      if (tt.needs_grad(x)) {
        Tensor<S>& gx = tt.grad_buf(x);
        const S inv_m = S(1) / static_cast<S>(m);
        for (int64_t n = 0; n < N; ++n)
          for (int64_t c = 0; c < C; ++c) {
            const S mu = mean_c[c], is = invstd_c[c], ga = vg2[c];
            const S* gp = g.data.data() + (n * C + c) * HW;
            const S* xp = vx2.data.data() + (n * C + c) * HW;
            S* dx = gx.data.data() + (n * C + c) * HW;
            if (train) {
              const S k0 = sum_dy[c] * inv_m, k1 = sum_dy_xhat[c] * inv_m;
              for (int64_t i = 0; i < HW; ++i) {
                const S xhat = (xp[i] - mu) * is;
                dx[i] += ga * is * (gp[i] - k0 - xhat * k1);
              }
            } else {
              for (int64_t i = 0; i < HW; ++i) dx[i] += ga * is * gp[i];
            }
          }
      }
    });
  return y;
}

}  // namespace mde

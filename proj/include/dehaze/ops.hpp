// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations on NCHW tensors. Spatial ops pad by
// replicating border pixels.
#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"

namespace dehaze {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

namespace detail {

// Left-to-right sum. Eigen's vectorised reductions peel by address, so their
// rounding would depend on where the heap placed a buffer.
template <class T>
T ordered_sum(const T* p, std::size_t n, std::size_t stride) {
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) s += p[i * stride];
  return s;
}

template <class T>
void require_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

template <class T, class Fwd, class Deriv>
Var<T> unary(const Var<T>& a, Fwd fwd, Deriv deriv) {
  Tensor<T> out(a.shape());
  const Tensor<T>& x = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(x[i]);
  return make_result<T>(std::move(out), {a}, [deriv](Node<T>& self) {
    Tensor<T>* gx = input_grad(self, 0);
    if (!gx) return;
    const Tensor<T>& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < x.numel(); ++i) (*gx)[i] += self.grad[i] * deriv(x[i], self.value[i]);
  });
}

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "add");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor<T>* g = input_grad(self, k))
        for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "sub");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
    if (Tensor<T>* g = input_grad(self, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] -= self.grad[i];
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mul");
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const Tensor<T>& av = self.inputs[0]->value;
    const Tensor<T>& bv = self.inputs[1]->value;
    if (Tensor<T>* g = input_grad(self, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * bv[i];
    if (Tensor<T>* g = input_grad(self, 1))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * av[i];
  });
}

/// alpha * a + beta
template <class T>
Var<T> affine(const Var<T>& a, T alpha, T beta) {
  return detail::unary<T>(
      a, [=](T x) { return alpha * x + beta; }, [=](T, T) { return alpha; });
}

// ---------------------------------------------------------------------------
// Activations

template <class T>
Var<T> leaky_relu(const Var<T>& a, T slope = T(0.2)) {
  return detail::unary<T>(
      a, [=](T x) { return x > 0 ? x : slope * x; }, [=](T x, T) { return x > 0 ? T(1) : slope; });
}

template <class T>
T sigmoid_scalar(T x) {
  return x >= 0 ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <class T>
T silu_scalar(T x) {
  return x * sigmoid_scalar(x);
}

template <class T>
T silu_derivative(T x) {
  const T s = sigmoid_scalar(x);
  return s * (T(1) + x * (T(1) - s));
}

template <class T>
Var<T> silu(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return silu_scalar(x); }, [](T x, T) { return silu_derivative(x); });
}

template <class T>
Var<T> sigmoid(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

/// lo + (hi - lo) * sigmoid(a): a sigmoid squeezed into [lo, hi].
template <class T>
Var<T> sigmoid_range(const Var<T>& a, T lo, T hi) {
  const T span = hi - lo;
  return detail::unary<T>(
      a, [=](T x) { return lo + span * sigmoid_scalar(x); },
      [=](T x, T) {
        const T s = sigmoid_scalar(x);
        return span * s * (T(1) - s);
      });
}

/// Clamp to [0,1]; gradient passes only where the input was inside.
template <class T>
Var<T> clamp01(const Var<T>& a) {
  return detail::unary<T>(
      a, [](T x) { return std::clamp(x, T(0), T(1)); },
      [](T x, T) { return (x >= T(0) && x <= T(1)) ? T(1) : T(0); });
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <class T>
Var<T> mean(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().values()) s += v;
  const T inv = T(1) / static_cast<T>(std::max<std::size_t>(a.value().numel(), 1));
  return make_result<T>(Tensor<T>({1}, s * inv), {a}, [inv](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0)) {
      const T v = self.grad[0] * inv;
      for (auto& x : g->values()) x += v;
    }
  });
}

/// mean |a - b|
template <class T>
Var<T> l1_loss(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "l1_loss");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += std::abs(av[i] - bv[i]);
  const T inv = T(1) / static_cast<T>(av.numel());
  return make_result<T>(Tensor<T>({1}, s * inv), {a, b}, [inv](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T g0 = self.grad[0] * inv;
    Tensor<T>* ga = input_grad(self, 0);
    Tensor<T>* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < av.numel(); ++i) {
      const T d = av[i] - bv[i];
      const T sg = d > 0 ? g0 : (d < 0 ? -g0 : T(0));
      if (ga) (*ga)[i] += sg;
      if (gb) (*gb)[i] -= sg;
    }
  });
}

/// mean (a - b)^2
template <class T>
Var<T> mse_loss(const Var<T>& a, const Var<T>& b) {
  detail::require_same(a, b, "mse_loss");
  const auto& av = a.value();
  const auto& bv = b.value();
  T s = 0;
  for (std::size_t i = 0; i < av.numel(); ++i) s += (av[i] - bv[i]) * (av[i] - bv[i]);
  const T inv = T(1) / static_cast<T>(av.numel());
  return make_result<T>(Tensor<T>({1}, s * inv), {a, b}, [inv](Node<T>& self) {
    const auto& av = self.inputs[0]->value;
    const auto& bv = self.inputs[1]->value;
    const T g0 = T(2) * self.grad[0] * inv;
    Tensor<T>* ga = input_grad(self, 0);
    Tensor<T>* gb = input_grad(self, 1);
    for (std::size_t i = 0; i < av.numel(); ++i) {
      const T d = g0 * (av[i] - bv[i]);
      if (ga) (*ga)[i] += d;
      if (gb) (*gb)[i] -= d;
    }
  });
}

/// mean (a - target)^2 for a scalar target; the least-squares GAN criterion.
template <class T>
Var<T> mse_to(const Var<T>& a, T target) {
  return mse_loss(a, Var<T>(Tensor<T>(a.shape(), target)));
}

/// Weighted sum of scalar losses.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.size() != weights.size()) throw ShapeError("weighted_sum: arity mismatch");
  T s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) s += weights[i] * terms[i].value()[0];
  return make_result<T>(Tensor<T>({1}, s), terms, [weights](Node<T>& self) {
    for (std::size_t k = 0; k < weights.size(); ++k)
      if (Tensor<T>* g = input_grad(self, k)) (*g)[0] += weights[k] * self.grad[0];
  });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace detail {

// Copies one H x W plane into an (H + 2p) x (W + 2p) buffer with replicated borders.
template <class T>
void pad_replicate(const T* src, int h, int w, int pad, T* dst) {
  const int pw = w + 2 * pad;
  for (int y = 0; y < h + 2 * pad; ++y) {
    const T* row = src + static_cast<std::size_t>(clamp_index(y - pad, h)) * w;
    T* out = dst + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < pad; ++x) out[x] = row[0];
    std::copy(row, row + w, out + pad);
    for (int x = 0; x < pad; ++x) out[pad + w + x] = row[w - 1];
  }
}

// Adjoint of pad_replicate: accumulates a padded gradient back onto the plane.
template <class T>
void unpad_replicate_add(const T* src, int h, int w, int pad, T* dst) {
  const int pw = w + 2 * pad;
  for (int y = 0; y < h + 2 * pad; ++y) {
    T* row = dst + static_cast<std::size_t>(clamp_index(y - pad, h)) * w;
    const T* in = src + static_cast<std::size_t>(y) * pw;
    for (int x = 0; x < pad; ++x) row[0] += in[x];
    for (int x = 0; x < w; ++x) row[x] += in[pad + x];
    for (int x = 0; x < pad; ++x) row[w - 1] += in[pad + w + x];
  }
}

/// Gathers replicate-padded receptive fields of sample n into col[K, Ho*Wo].
/// pbuf is scratch for one padded plane.
template <class T>
void im2col(const Tensor<T>& x, int n, int k, int stride, int ho, int wo, T* col, T* pbuf) {
  const int ci_n = x.dim(1), h = x.dim(2), w = x.dim(3), pad = k / 2, pw = w + 2 * pad;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < ci_n; ++ci) {
    pad_replicate(&x.at(n, ci, 0, 0), h, w, pad, pbuf);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const T* src = pbuf + static_cast<std::size_t>(oy * stride + ky) * pw + kx;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            std::copy(src, src + wo, dst);
          } else {
            for (int ox = 0; ox < wo; ++ox) dst[ox] = src[ox * stride];
          }
        }
      }
  }
}

/// Adjoint of im2col: scatters col[K, Ho*Wo] back into sample n of dx.
template <class T>
void col2im(const T* col, int n, int k, int stride, int ho, int wo, Tensor<T>& dx, T* pbuf) {
  const int ci_n = dx.dim(1), h = dx.dim(2), w = dx.dim(3), pad = k / 2, pw = w + 2 * pad;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t plane = static_cast<std::size_t>(h + 2 * pad) * pw;
  for (int ci = 0; ci < ci_n; ++ci) {
    std::fill(pbuf, pbuf + plane, T(0));
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          T* dst = pbuf + static_cast<std::size_t>(oy * stride + ky) * pw + kx;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          if (stride == 1) {
            for (int ox = 0; ox < wo; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = 0; ox < wo; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    unpad_replicate_add(pbuf, h, w, pad, &dx.at(n, ci, 0, 0));
  }
}

}  // namespace detail

/// 2-D convolution. weight [Co, Ci, k, k] (k odd), optional bias [Co].
/// Output extent is ceil(H / stride) x ceil(W / stride).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride = 1) {
  require_rank(x.value(), 4, "conv2d input");
  require_rank(weight.value(), 4, "conv2d weight");
  const int n_b = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != ci)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) +
                     " input channels, got " + std::to_string(ci));
  if (k % 2 == 0 || weight.dim(3) != k) throw ShapeError("conv2d: kernel must be square and odd");
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias) require_shape(bias.value(), {co}, "conv2d bias");
  const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
  const int kk = ci * k * k;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  const std::size_t col_size = static_cast<std::size_t>(kk) * p;
  const std::size_t pad_size = static_cast<std::size_t>(h + k - 1) * (w + k - 1);
  const bool pointwise = (k == 1 && stride == 1);
  // Columns are kept for the weight gradient so backward does not gather twice.
  const bool keep_cols = !pointwise && weight.requires_grad();

  Tensor<T> out({n_b, co, ho, wo});
  std::shared_ptr<T[]> cols, pbuf;
  if (!pointwise) {
    cols.reset(new T[keep_cols ? col_size * n_b : col_size]);
    pbuf.reset(new T[pad_size]);
  }
  ConstMatMap<T> wm(weight.value().data(), co, kk);
  for (int n = 0; n < n_b; ++n) {
    const T* src = &x.value().at(n, 0, 0, 0);
    if (!pointwise) {
      T* col = cols.get() + (keep_cols ? col_size * n : 0);
      detail::im2col(x.value(), n, k, stride, ho, wo, col, pbuf.get());
      src = col;
    }
    MatMap<T> om(&out.at(n, 0, 0, 0), co, static_cast<Eigen::Index>(p));
    om.noalias() = wm * ConstMatMap<T>(src, kk, static_cast<Eigen::Index>(p));
    if (has_bias)
      for (int c = 0; c < co; ++c) om.row(c).array() += bias.value()[c];
  }
  if (!keep_cols) cols.reset();

  std::vector<Var<T>> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(std::move(out), inputs, [=](Node<T>& self) {
    const Tensor<T>& xv = self.inputs[0]->value;
    const Tensor<T>& wv = self.inputs[1]->value;
    Tensor<T>* gx = input_grad(self, 0);
    Tensor<T>* gw = input_grad(self, 1);
    Tensor<T>* gb = has_bias ? input_grad(self, 2) : nullptr;
    ConstMatMap<T> wm(wv.data(), co, kk);
    std::unique_ptr<T[]> dcol;
    if (!pointwise && gx) dcol.reset(new T[col_size]);
    for (int n = 0; n < n_b; ++n) {
      ConstMatMap<T> dout(&self.grad.at(n, 0, 0, 0), co, static_cast<Eigen::Index>(p));
      if (gb)
        for (int c = 0; c < co; ++c) (*gb)[c] += detail::ordered_sum(dout.data() + c * p, p, 1);
      if (gw) {
        const T* src = pointwise ? &xv.at(n, 0, 0, 0) : cols.get() + col_size * n;
        MatMap<T>(gw->data(), co, kk).noalias() +=
            dout * ConstMatMap<T>(src, kk, static_cast<Eigen::Index>(p)).transpose();
      }
      if (gx) {
        if (pointwise) {
          MatMap<T>(&gx->at(n, 0, 0, 0), kk, static_cast<Eigen::Index>(p)).noalias() +=
              wm.transpose() * dout;
        } else {
          MatMap<T>(dcol.get(), kk, static_cast<Eigen::Index>(p)).noalias() = wm.transpose() * dout;
          detail::col2im(dcol.get(), n, k, stride, ho, wo, *gx, pbuf.get());
        }
      }
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, int stride = 1) {
  return conv2d(x, weight, Var<T>(), stride);
}

/// Per-channel convolution: weight [C, 1, k, k]; no taps cross channels.
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& weight) {
  require_rank(x.value(), 4, "depthwise_conv2d input");
  const int n_b = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int k = weight.dim(2);
  require_shape(weight.value(), {c_n, 1, k, k}, "depthwise_conv2d weight");
  if (k % 2 == 0) throw ShapeError("depthwise_conv2d: kernel must be odd");
  const int pad = k / 2;
  const int pw = w + 2 * pad;
  const std::size_t padded = static_cast<std::size_t>(h + 2 * pad) * pw;

  Tensor<T> out({n_b, c_n, h, w});
  {
    std::vector<T> buf(padded);
    for (int n = 0; n < n_b; ++n)
      for (int c = 0; c < c_n; ++c) {
        detail::pad_replicate(&x.value().at(n, c, 0, 0), h, w, pad, buf.data());
        T* dst = &out.at(n, c, 0, 0);
        const T* kern = &weight.value().at(c, 0, 0, 0);
        for (int y = 0; y < h; ++y) {
          T* drow = dst + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            const T* srow = buf.data() + static_cast<std::size_t>(y + ky) * pw;
            for (int kx = 0; kx < k; ++kx) {
              const T kv = kern[ky * k + kx];
              const T* s = srow + kx;
              for (int xo = 0; xo < w; ++xo) drow[xo] += kv * s[xo];
            }
          }
        }
      }
  }

  return make_result<T>(std::move(out), {x, weight}, [=](Node<T>& self) {
    const Tensor<T>& xv = self.inputs[0]->value;
    const Tensor<T>& wv = self.inputs[1]->value;
    Tensor<T>* gx = input_grad(self, 0);
    Tensor<T>* gw = input_grad(self, 1);
    std::vector<T> buf(padded), gbuf(padded);
    for (int n = 0; n < n_b; ++n)
      for (int c = 0; c < c_n; ++c) {
        detail::pad_replicate(&xv.at(n, c, 0, 0), h, w, pad, buf.data());
        if (gx) std::fill(gbuf.begin(), gbuf.end(), T(0));
        const T* g = &self.grad.at(n, c, 0, 0);
        const T* kern = &wv.at(c, 0, 0, 0);
        for (int y = 0; y < h; ++y) {
          const T* grow = g + static_cast<std::size_t>(y) * w;
          for (int ky = 0; ky < k; ++ky) {
            const std::size_t base = static_cast<std::size_t>(y + ky) * pw;
            for (int kx = 0; kx < k; ++kx) {
              if (gw) {
                const T* s = buf.data() + base + kx;
                T acc = 0;
                for (int xo = 0; xo < w; ++xo) acc += grow[xo] * s[xo];
                gw->at(c, 0, ky, kx) += acc;
              }
              if (gx) {
                const T kv = kern[ky * k + kx];
                T* d = gbuf.data() + base + kx;
                for (int xo = 0; xo < w; ++xo) d[xo] += kv * grow[xo];
              }
            }
          }
        }
        if (gx) detail::unpad_replicate_add(gbuf.data(), h, w, pad, &gx->at(n, c, 0, 0));
      }
  });
}

/// y = x W^T + b for x [N, in], W [out, in], b [out].
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.value(), 2, "linear input");
  const int n_b = x.dim(0), in = x.dim(1), out_w = weight.dim(0);
  require_shape(weight.value(), {out_w, in}, "linear weight");
  require_shape(bias.value(), {out_w}, "linear bias");
  Tensor<T> out({n_b, out_w});
  MatMap<T> om(out.data(), n_b, out_w);
  om.noalias() = ConstMatMap<T>(x.value().data(), n_b, in) *
                 ConstMatMap<T>(weight.value().data(), out_w, in).transpose();
  for (int r = 0; r < n_b; ++r)
    for (int c = 0; c < out_w; ++c) om(r, c) += bias.value()[c];
  return make_result<T>(std::move(out), {x, weight, bias}, [=](Node<T>& self) {
    ConstMatMap<T> g(self.grad.data(), n_b, out_w);
    if (Tensor<T>* gx = input_grad(self, 0))
      MatMap<T>(gx->data(), n_b, in).noalias() +=
          g * ConstMatMap<T>(self.inputs[1]->value.data(), out_w, in);
    if (Tensor<T>* gw = input_grad(self, 1))
      MatMap<T>(gw->data(), out_w, in).noalias() +=
          g.transpose() * ConstMatMap<T>(self.inputs[0]->value.data(), n_b, in);
    if (Tensor<T>* gb = input_grad(self, 2))
      for (int c = 0; c < out_w; ++c) (*gb)[c] += detail::ordered_sum(g.data() + c, static_cast<std::size_t>(n_b), static_cast<std::size_t>(out_w));
  });
}

// ---------------------------------------------------------------------------
// Layout

/// Concatenates NCHW tensors along channels.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: nothing to concatenate");
  const int n_b = parts[0].dim(0), h = parts[0].dim(2), w = parts[0].dim(3);
  int c_total = 0;
  for (const auto& p : parts) {
    require_rank(p.value(), 4, "concat_channels");
    if (p.dim(0) != n_b || p.dim(2) != h || p.dim(3) != w)
      throw ShapeError("concat_channels: mismatched batch or spatial extent " +
                       shape_string(p.shape()) + " vs " + shape_string(parts[0].shape()));
    c_total += p.dim(1);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n_b, c_total, h, w});
  for (int n = 0; n < n_b; ++n) {
    int c0 = 0;
    for (const auto& p : parts) {
      std::copy_n(&p.value().at(n, 0, 0, 0), p.dim(1) * plane, &out.at(n, c0, 0, 0));
      c0 += p.dim(1);
    }
  }
  return make_result<T>(std::move(out), parts, [=](Node<T>& self) {
    for (int n = 0; n < n_b; ++n) {
      int c0 = 0;
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        const int c = self.inputs[k]->value.dim(1);
        if (Tensor<T>* g = input_grad(self, k)) {
          const T* src = &self.grad.at(n, c0, 0, 0);
          T* dst = &g->at(n, 0, 0, 0);
          for (std::size_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
        c0 += c;
      }
    }
  });
}

/// Channels [c0, c0 + count) of an NCHW tensor.
template <class T>
Var<T> slice_channels(const Var<T>& x, int c0, int count) {
  require_rank(x.value(), 4, "slice_channels");
  const int n_b = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (c0 < 0 || count < 0 || c0 + count > c_n) throw ShapeError("slice_channels: out of range");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n_b, count, h, w});
  for (int n = 0; n < n_b; ++n)
    std::copy_n(&x.value().at(n, c0, 0, 0), count * plane, &out.at(n, 0, 0, 0));
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0))
      for (int n = 0; n < n_b; ++n) {
        const T* src = &self.grad.at(n, 0, 0, 0);
        T* dst = &g->at(n, c0, 0, 0);
        for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
      }
  });
}

/// Nearest-neighbour 2x upsampling.
template <class T>
Var<T> upsample2x(const Var<T>& x) {
  require_rank(x.value(), 4, "upsample2x");
  const int n_b = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> out({n_b, c_n, 2 * h, 2 * w});
  for (int n = 0; n < n_b; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int y = 0; y < 2 * h; ++y)
        for (int xo = 0; xo < 2 * w; ++xo) out.at(n, c, y, xo) = x.value().at(n, c, y / 2, xo / 2);
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0))
      for (int n = 0; n < n_b; ++n)
        for (int c = 0; c < c_n; ++c)
          for (int y = 0; y < 2 * h; ++y)
            for (int xo = 0; xo < 2 * w; ++xo) g->at(n, c, y / 2, xo / 2) += self.grad.at(n, c, y, xo);
  });
}

/// Spatial mean: [N, C, H, W] -> [N, C].
template <class T>
Var<T> global_avg_pool(const Var<T>& x) {
  require_rank(x.value(), 4, "global_avg_pool");
  const int n_b = x.dim(0), c_n = x.dim(1);
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const T inv = T(1) / static_cast<T>(plane);
  Tensor<T> out({n_b, c_n});
  for (int n = 0; n < n_b; ++n)
    for (int c = 0; c < c_n; ++c) {
      const T* p = &x.value().at(n, c, 0, 0);
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.at(n, c) = s * inv;
    }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    if (Tensor<T>* g = input_grad(self, 0))
      for (int n = 0; n < n_b; ++n)
        for (int c = 0; c < c_n; ++c) {
          const T v = self.grad.at(n, c) * inv;
          T* p = &g->at(n, c, 0, 0);
          for (std::size_t i = 0; i < plane; ++i) p[i] += v;
        }
  });
}

/// Stacks each pixel's (2r+1)^2 replicate-padded neighbourhood into channels:
/// output channel (dy * (2r+1) + dx) * C + c holds input channel c at offset
/// (dy - r, dx - r). Neighbours are therefore in row-major order.
template <class T>
Var<T> feature_unfold(const Var<T>& x, int radius) {
  if (radius < 0) throw DomainError("feature_unfold: radius must be >= 0");
  require_rank(x.value(), 4, "feature_unfold");
  const int n_b = x.dim(0), c_n = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int side = 2 * radius + 1;
  Tensor<T> out({n_b, c_n * side * side, h, w});
  auto src_of = [=](int y, int dy, int xx, int dx) {
    return std::pair{detail::clamp_index(y + dy - radius, h), detail::clamp_index(xx + dx - radius, w)};
  };
  for (int n = 0; n < n_b; ++n)
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx)
        for (int c = 0; c < c_n; ++c) {
          const int oc = (dy * side + dx) * c_n + c;
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) {
              const auto [sy, sx] = src_of(y, dy, xx, dx);
              out.at(n, oc, y, xx) = x.value().at(n, c, sy, sx);
            }
        }
  return make_result<T>(std::move(out), {x}, [=](Node<T>& self) {
    Tensor<T>* g = input_grad(self, 0);
    if (!g) return;
    for (int n = 0; n < n_b; ++n)
      for (int dy = 0; dy < side; ++dy)
        for (int dx = 0; dx < side; ++dx)
          for (int c = 0; c < c_n; ++c) {
            const int oc = (dy * side + dx) * c_n + c;
            for (int y = 0; y < h; ++y)
              for (int xx = 0; xx < w; ++xx) {
                const auto [sy, sx] = src_of(y, dy, xx, dx);
                g->at(n, c, sy, sx) += self.grad.at(n, oc, y, xx);
              }
          }
  });
}

// ---------------------------------------------------------------------------
// Scattering model on batched tensors

/// J * t + A * (1 - t) with J [N,3,H,W], t [N,1,H,W], A [N,3].
template <class T>
Var<T> scatter_haze(const Var<T>& clean, const Var<T>& t, const Var<T>& airlight) {
  const int n_b = clean.dim(0), h = clean.dim(2), w = clean.dim(3);
  require_shape(clean.value(), {n_b, 3, h, w}, "scatter_haze clean");
  require_shape(t.value(), {n_b, 1, h, w}, "scatter_haze transmission");
  require_shape(airlight.value(), {n_b, 3}, "scatter_haze airlight");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({n_b, 3, h, w});
  for (int n = 0; n < n_b; ++n)
    for (int c = 0; c < 3; ++c) {
      const T a = airlight.value().at(n, c);
      const T* j = &clean.value().at(n, c, 0, 0);
      const T* tv = &t.value().at(n, 0, 0, 0);
      T* o = &out.at(n, c, 0, 0);
      for (std::size_t i = 0; i < plane; ++i) o[i] = j[i] * tv[i] + a * (T(1) - tv[i]);
    }
  return make_result<T>(std::move(out), {clean, t, airlight}, [=](Node<T>& self) {
    const auto& jv = self.inputs[0]->value;
    const auto& tv = self.inputs[1]->value;
    const auto& av = self.inputs[2]->value;
    Tensor<T>* gj = input_grad(self, 0);
    Tensor<T>* gt = input_grad(self, 1);
    Tensor<T>* ga = input_grad(self, 2);
    for (int n = 0; n < n_b; ++n)
      for (int c = 0; c < 3; ++c) {
        const T a = av.at(n, c);
        const T* j = &jv.at(n, c, 0, 0);
        const T* tp = &tv.at(n, 0, 0, 0);
        const T* g = &self.grad.at(n, c, 0, 0);
        T ga_acc = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          if (gj) (&gj->at(n, c, 0, 0))[i] += g[i] * tp[i];
          if (gt) (&gt->at(n, 0, 0, 0))[i] += g[i] * (j[i] - a);
          ga_acc += g[i] * (T(1) - tp[i]);
        }
        if (ga) ga->at(n, c) += ga_acc;
      }
  });
}

}  // namespace dehaze

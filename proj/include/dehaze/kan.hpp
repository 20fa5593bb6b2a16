// SPDX-License-Identifier: Apache-2.0
//
// Kolmogorov-Arnold layers. Every edge (q, p) of a layer carries its own
// univariate function
//
//   phi_qp(x) = base_scale_qp * b(x) + spline_scale_qp * sum_i c_qpi B_i(x)
//
// where B_i are B-splines of a fixed order on a uniform knot vector spanning
// [-g, g] and b is a fixed smooth base function. A layer maps
// out_q = sum_p phi_qp(in_p); a stack composes layers in order.
//
// Outside [-g, g] the spline continues linearly along its boundary tangent.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dehaze/autograd.hpp"
#include "dehaze/ops.hpp"
#include "dehaze/rng.hpp"

namespace dehaze {

enum class BaseFunction { kSilu, kIdentity };

template <class T>
T base_value(BaseFunction f, T x) {
  return f == BaseFunction::kSilu ? silu_scalar(x) : x;
}

template <class T>
T base_derivative(BaseFunction f, T x) {
  return f == BaseFunction::kSilu ? silu_derivative(x) : T(1);
}

/// Uniform knots over [-range, range] with `order` extra knots on each side:
/// grid_size + 2 * order + 1 knots, grid_size + order basis functions.
template <class T>
std::vector<T> uniform_knots(int grid_size, int order, T range) {
  const T h = T(2) * range / static_cast<T>(grid_size);
  std::vector<T> knots(static_cast<std::size_t>(grid_size + 2 * order + 1));
  for (int i = 0; i < static_cast<int>(knots.size()); ++i)
    knots[i] = -range + static_cast<T>(i - order) * h;
  return knots;
}

namespace detail {

/// Basis values and first derivatives at a point inside
/// [knots[order], knots[n - order - 1]]. Only the order + 1 functions that are
/// nonzero on the knot span containing x are evaluated (Cox-de Boor on the
/// span's triangle); the others are written as zero.
template <class T>
void bspline_at(std::span<const T> knots, int order, T x, T* values, T* derivs) {
  const int n_knots = static_cast<int>(knots.size());
  const int nb = n_knots - order - 1;
  for (int i = 0; i < nb; ++i) values[i] = T(0);
  if (derivs)
    for (int i = 0; i < nb; ++i) derivs[i] = T(0);
  // Span i with knots[i] <= x < knots[i + 1].
  const int span = static_cast<int>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
  if (span < order || span > nb) return;
  T n[64], lower[64], left[64], right[64];
  n[0] = T(1);
  for (int j = 1; j <= order; ++j) {
    if (j == order)
      for (int r = 0; r < order; ++r) lower[r] = n[r];
    left[j] = x - knots[span + 1 - j];
    right[j] = knots[span + j] - x;
    T saved = T(0);
    for (int r = 0; r < j; ++r) {
      const T tmp = n[r] / (right[r + 1] + left[j - r]);
      n[r] = saved + right[r + 1] * tmp;
      saved = left[j - r] * tmp;
    }
    n[j] = saved;
  }
  for (int r = 0; r <= order; ++r) {
    const int m = span - order + r;
    if (m >= nb) break;
    values[m] = n[r];
    if (!derivs) continue;
    if (order == 0) continue;
    // lower[r'] holds the degree order-1 function with index span - order + 1 + r'.
    const T a = r >= 1 ? lower[r - 1] : T(0);
    const T b = r < order ? lower[r] : T(0);
    derivs[m] = static_cast<T>(order) * (a / (knots[m + order] - knots[m]) -
                                          b / (knots[m + order + 1] - knots[m + 1]));
  }
}

}  // namespace detail

/// Basis "features" at x including linear extrapolation outside the knot
/// domain: values[i] = B_i(x) inside; B_i(e) + B_i'(e) (x - e) beyond edge e.
/// derivs[i] = d values[i] / dx.
template <class T>
void spline_features(std::span<const T> knots, int order, T x, T* values, T* derivs) {
  const int n = static_cast<int>(knots.size());
  const T lo = knots[order];
  const T hi = knots[n - order - 1];
  const int nb = n - order - 1;
  if (x >= lo && x <= hi) {
    detail::bspline_at(knots, order, x, values, derivs);
    return;
  }
  const T edge = x < lo ? lo : hi;
  T d[64];
  detail::bspline_at(knots, order, edge, values, d);
  for (int i = 0; i < nb; ++i) {
    values[i] += d[i] * (x - edge);
    if (derivs) derivs[i] = d[i];
  }
}

namespace detail {

// Cubic B-spline features on a uniform knot vector, with the same linear
// extrapolation as spline_features. u is x in knot units from knots[0].
template <class T>
void uniform_cubic_features(T u, T inv_h, int nb, T* values, T* derivs) {
  constexpr T sixth = T(1) / T(6);
  const T lo = T(3), hi = static_cast<T>(nb);
  const T ue = u < lo ? lo : (u > hi ? hi : u);
  int span = static_cast<int>(ue);
  if (span > nb) span = nb;
  const T t = ue - static_cast<T>(span);
  const T t2 = t * t, t3 = t2 * t, s = T(1) - t;
  const T b[4] = {s * s * s * sixth, (T(3) * t3 - T(6) * t2 + T(4)) * sixth,
                  (T(-3) * t3 + T(3) * t2 + T(3) * t + T(1)) * sixth, t3 * sixth};
  const T db[4] = {T(-0.5) * s * s * inv_h, (T(1.5) * t2 - T(2) * t) * inv_h,
                   (T(-1.5) * t2 + t + T(0.5)) * inv_h, T(0.5) * t2 * inv_h};
  for (int i = 0; i < nb; ++i) values[i] = T(0);
  if (derivs)
    for (int i = 0; i < nb; ++i) derivs[i] = T(0);
  const T dx = (u - ue) / inv_h;  // zero inside the domain
  for (int r = 0; r < 4; ++r) {
    const int m = span - 3 + r;
    if (m >= nb) break;
    values[m] = b[r] + db[r] * dx;
    if (derivs) derivs[m] = db[r];
  }
}

}  // namespace detail

/// One learnable univariate function.
template <class T>
struct SplineActivation {
  std::vector<T> grid;  // knot vector, strictly increasing
  std::vector<T> coefficients;
  int order = 3;
  T base_scale = T(1);
  T spline_scale = T(1);
  BaseFunction base = BaseFunction::kSilu;

  int num_basis() const { return static_cast<int>(grid.size()) - order - 1; }

  void validate() const {
    if (order < 0 || static_cast<int>(grid.size()) < order + 2)
      throw DomainError("SplineActivation: grid needs at least order + 2 knots");
    for (std::size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1])) throw DomainError("SplineActivation: grid not strictly increasing");
    if (static_cast<int>(coefficients.size()) != num_basis())
      throw ShapeError("SplineActivation: expected " + std::to_string(num_basis()) + " coefficients");
  }

  T spline(T x) const {
    T v[64];
    spline_features<T>(grid, order, x, v, nullptr);
    T s = 0;
    for (int i = 0; i < num_basis(); ++i) s += coefficients[i] * v[i];
    return s;
  }
};

template <class T>
T eval_activation(const SplineActivation<T>& act, T x) {
  return act.base_scale * base_value(act.base, x) + act.spline_scale * act.spline(x);
}

template <class T>
std::vector<T> eval_activation(const SplineActivation<T>& act, std::span<const T> xs) {
  std::vector<T> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out[i] = eval_activation(act, xs[i]);
  return out;
}

/// Greville abscissae: spline coefficients that reproduce f(x) = x exactly.
template <class T>
std::vector<T> identity_coefficients(std::span<const T> knots, int order) {
  const int nb = static_cast<int>(knots.size()) - order - 1;
  std::vector<T> c(static_cast<std::size_t>(nb));
  for (int i = 0; i < nb; ++i) {
    T s = 0;
    for (int j = 1; j <= order; ++j) s += knots[i + j];
    c[i] = order > 0 ? s / static_cast<T>(order) : knots[i];
  }
  return c;
}

/// n_out x n_in matrix of activations sharing one knot vector, stored as
/// packed parameter tensors.
template <class T>
class KanLayer {
 public:
  KanLayer() = default;
  KanLayer(int n_in, int n_out, std::vector<T> knots, int order,
           BaseFunction base = BaseFunction::kSilu)
      : n_in_(n_in), n_out_(n_out), order_(order), base_(base), knots_(std::move(knots)) {
    if (n_in <= 0 || n_out <= 0) throw ShapeError("KanLayer: widths must be positive");
    SplineActivation<T> probe{knots_, {}, order_};
    probe.coefficients.assign(static_cast<std::size_t>(std::max(probe.num_basis(), 0)), T(0));
    probe.validate();
    if (num_basis() > 60) throw DomainError("KanLayer: too many basis functions");
    const T h = knots_[1] - knots_[0];
    uniform_cubic_ = order_ == 3;
    for (std::size_t i = 1; i < knots_.size() && uniform_cubic_; ++i)
      uniform_cubic_ = std::abs((knots_[i] - knots_[i - 1]) - h) <= T(1e-5) * h;
    inv_h_ = T(1) / h;
    coef_ = Parameter<T>(Tensor<T>({n_out, n_in, num_basis()}));
    base_scale_ = Parameter<T>(Tensor<T>({n_out, n_in}));
    spline_scale_ = Parameter<T>(Tensor<T>({n_out, n_in}, T(1)));
  }

  int n_in() const { return n_in_; }
  int n_out() const { return n_out_; }
  int order() const { return order_; }
  BaseFunction base() const { return base_; }
  int num_basis() const { return static_cast<int>(knots_.size()) - order_ - 1; }
  int grid_size() const { return static_cast<int>(knots_.size()) - 2 * order_ - 1; }
  const std::vector<T>& knots() const { return knots_; }

  Parameter<T>& coefficients() { return coef_; }
  const Parameter<T>& coefficients() const { return coef_; }
  Parameter<T>& base_scale() { return base_scale_; }
  const Parameter<T>& base_scale() const { return base_scale_; }
  Parameter<T>& spline_scale() { return spline_scale_; }
  const Parameter<T>& spline_scale() const { return spline_scale_; }

  SplineActivation<T> activation(int q, int p) const {
    SplineActivation<T> a;
    a.grid = knots_;
    a.order = order_;
    a.base = base_;
    a.base_scale = base_scale_.value().at(q, p);
    a.spline_scale = spline_scale_.value().at(q, p);
    const T* c = coef_.value().data() + (static_cast<std::size_t>(q) * n_in_ + p) * num_basis();
    a.coefficients.assign(c, c + num_basis());
    return a;
  }

  void set_activation(int q, int p, const SplineActivation<T>& a) {
    if (a.grid != knots_ || a.order != order_ || a.base != base_)
      throw ShapeError("KanLayer::set_activation: activation grid/order/base differ from layer");
    a.validate();
    base_scale_.value().at(q, p) = a.base_scale;
    spline_scale_.value().at(q, p) = a.spline_scale;
    T* c = coef_.value().data() + (static_cast<std::size_t>(q) * n_in_ + p) * num_basis();
    std::copy(a.coefficients.begin(), a.coefficients.end(), c);
  }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    fn(join_name(prefix, "coef"), coef_);
    fn(join_name(prefix, "base_scale"), base_scale_);
    fn(join_name(prefix, "spline_scale"), spline_scale_);
  }

  /// Packed weight [n_out, n_in * (num_basis + 1)]: per input, the base slot
  /// then the scaled spline slots.
  RowMat<T> packed_weight() const {
    const int nb = num_basis(), stride = nb + 1;
    RowMat<T> w(n_out_, static_cast<Eigen::Index>(n_in_) * stride);
    for (int q = 0; q < n_out_; ++q)
      for (int p = 0; p < n_in_; ++p) {
        w(q, p * stride) = base_scale_.value().at(q, p);
        const T s = spline_scale_.value().at(q, p);
        const T* c = coef_.value().data() + (static_cast<std::size_t>(q) * n_in_ + p) * nb;
        for (int i = 0; i < nb; ++i) w(q, p * stride + 1 + i) = s * c[i];
      }
    return w;
  }

  /// Expands column-major inputs x[n_in, P] into features[n_in * (nb + 1), P]
  /// and, when requested, their derivatives with respect to x.
  void expand(const T* x, Eigen::Index points, RowMat<T>& features, RowMat<T>* derivs) const {
    const int nb = num_basis(), stride = nb + 1;
    features.resize(static_cast<Eigen::Index>(n_in_) * stride, points);
    if (derivs) derivs->resize(features.rows(), points);
    if (uniform_cubic_) {
      expand_uniform_cubic(x, points, features, derivs);
      return;
    }
    T v[64], d[64];
    for (int p = 0; p < n_in_; ++p)
      for (Eigen::Index j = 0; j < points; ++j) {
        const T xv = x[p * points + j];
        spline_features<T>(knots_, order_, xv, v, derivs ? d : nullptr);
        features(p * stride, j) = base_value(base_, xv);
        for (int i = 0; i < nb; ++i) features(p * stride + 1 + i, j) = v[i];
        if (derivs) {
          (*derivs)(p * stride, j) = base_derivative(base_, xv);
          for (int i = 0; i < nb; ++i) (*derivs)(p * stride + 1 + i, j) = d[i];
        }
      }
  }

  /// Forward on columns: y[n_out, P] = W * features(x).
  void forward_columns(const T* x, Eigen::Index points, T* y) const {
    RowMat<T> f;
    expand(x, points, f, nullptr);
    MatMap<T>(y, n_out_, points).noalias() = packed_weight() * f;
  }

  /// Backward on columns. Accumulates parameter gradients into the given
  /// tensors (any may be null) and writes dx[n_in, P] when dx is non-null.
  void backward_columns(const T* x, Eigen::Index points, const T* dy, Tensor<T>* g_coef,
                        Tensor<T>* g_base, Tensor<T>* g_spline, T* dx) const {
    const int nb = num_basis(), stride = nb + 1;
    RowMat<T> f, df;
    expand(x, points, f, dx ? &df : nullptr);
    ConstMatMap<T> g(dy, n_out_, points);
    if (g_coef || g_base || g_spline) {
      const RowMat<T> gw = g * f.transpose();
      for (int q = 0; q < n_out_; ++q)
        for (int p = 0; p < n_in_; ++p) {
          if (g_base) g_base->at(q, p) += gw(q, p * stride);
          const T s = spline_scale_.value().at(q, p);
          const T* c = coef_.value().data() + (static_cast<std::size_t>(q) * n_in_ + p) * nb;
          T acc = 0;
          for (int i = 0; i < nb; ++i) {
            const T gi = gw(q, p * stride + 1 + i);
            if (g_coef) (*g_coef)[(static_cast<std::size_t>(q) * n_in_ + p) * nb + i] += s * gi;
            acc += c[i] * gi;
          }
          if (g_spline) g_spline->at(q, p) += acc;
        }
    }
    if (dx) {
      const RowMat<T> gf = packed_weight().transpose() * g;
      for (int p = 0; p < n_in_; ++p)
        for (Eigen::Index j = 0; j < points; ++j) {
          T acc = 0;
          for (int i = 0; i < stride; ++i) acc += gf(p * stride + i, j) * df(p * stride + i, j);
          dx[p * points + j] = acc;
        }
    }
  }

 private:
  // Same features as expand() for a uniform cubic grid, written row by row.
  void expand_uniform_cubic(const T* x, Eigen::Index points, RowMat<T>& features, RowMat<T>* derivs) const {
    const int nb = num_basis(), stride = nb + 1;
    constexpr T sixth = T(1) / T(6);
    const T lo = T(3), hi = static_cast<T>(nb), x0 = knots_[0], inv_h = inv_h_;
    for (int p = 0; p < n_in_; ++p) {
      const T* xr = x + static_cast<std::size_t>(p) * points;
      const Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> xa(xr, points);
      const Eigen::Index r0 = static_cast<Eigen::Index>(p) * stride;
      if (base_ == BaseFunction::kSilu) {
        const auto sig = (T(1) + (-xa).exp()).inverse();
        features.row(r0).array() = xa * sig;
        if (derivs) derivs->row(r0).array() = sig * (T(1) + xa * (T(1) - sig));
      } else {
        features.row(r0).array() = xa;
        if (derivs) derivs->row(r0).setOnes();
      }
      features.middleRows(r0 + 1, nb).setZero();
      if (derivs) derivs->middleRows(r0 + 1, nb).setZero();
      T* frows = &features(r0 + 1, 0);
      T* drows = derivs ? &(*derivs)(r0 + 1, 0) : nullptr;
      for (Eigen::Index j = 0; j < points; ++j) {
        const T u = (xr[j] - x0) * inv_h;
        const T ue = u < lo ? lo : (u > hi ? hi : u);
        const int span = static_cast<int>(ue);
        const T t = ue - static_cast<T>(span);
        const T t2 = t * t, t3 = t2 * t, s = T(1) - t;
        const T b[4] = {s * s * s * sixth, (T(3) * t3 - T(6) * t2 + T(4)) * sixth,
                        (T(-3) * t3 + T(3) * t2 + T(3) * t + T(1)) * sixth, t3 * sixth};
        const T db[4] = {T(-0.5) * s * s * inv_h, (T(1.5) * t2 - T(2) * t) * inv_h,
                         (T(-1.5) * t2 + t + T(0.5)) * inv_h, T(0.5) * t2 * inv_h};
        const T dx = (u - ue) / inv_h;
        const int rmax = std::min(4, nb - span + 3);
        for (int r = 0; r < rmax; ++r) {
          const std::size_t at = static_cast<std::size_t>(span - 3 + r) * points + j;
          frows[at] = b[r] + db[r] * dx;
          if (drows) drows[at] = db[r];
        }
      }
    }
  }

  int n_in_ = 0;
  int n_out_ = 0;
  int order_ = 3;
  BaseFunction base_ = BaseFunction::kSilu;
  std::vector<T> knots_;
  bool uniform_cubic_ = false;
  T inv_h_ = T(1);
  Parameter<T> coef_;
  Parameter<T> base_scale_;
  Parameter<T> spline_scale_;
};

/// Layers composed in order. Widths must chain.
template <class T>
class KanStack {
 public:
  KanStack() = default;
  explicit KanStack(std::vector<KanLayer<T>> layers) : layers_(std::move(layers)) {
    for (std::size_t i = 1; i < layers_.size(); ++i)
      if (layers_[i - 1].n_out() != layers_[i].n_in())
        throw ShapeError("KanStack: layer " + std::to_string(i - 1) + " emits " +
                         std::to_string(layers_[i - 1].n_out()) + " but layer " + std::to_string(i) +
                         " expects " + std::to_string(layers_[i].n_in()));
  }

  std::size_t depth() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  int n_in() const { return layers_.front().n_in(); }
  int n_out() const { return layers_.back().n_out(); }
  KanLayer<T>& layer(std::size_t i) { return layers_[i]; }
  const KanLayer<T>& layer(std::size_t i) const { return layers_[i]; }
  std::vector<KanLayer<T>>& layers() { return layers_; }
  const std::vector<KanLayer<T>>& layers() const { return layers_; }

  template <class F>
  void for_each_param(F&& fn, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].for_each_param(fn, join_name(prefix, "layer" + std::to_string(i)));
  }

 private:
  std::vector<KanLayer<T>> layers_;
};

struct KanInit {
  int grid_size = 5;
  int order = 3;
  double range = 1.0;
  BaseFunction base = BaseFunction::kSilu;
};

/// Spline coefficients ~ U(-0.1/sqrt(n_in), 0.1/sqrt(n_in)), spline_scale = 1,
/// base_scale = 1/sqrt(n_in).
template <class T>
KanLayer<T> init_kan_layer(int n_in, int n_out, const KanInit& cfg, std::uint64_t seed) {
  if (n_in <= 0 || n_out <= 0) throw ShapeError("init_kan_layer: widths must be positive");
  if (cfg.order < 0 || cfg.grid_size < cfg.order + 2)
    throw DomainError("init_kan_layer: grid_size must be >= order + 2");
  if (!(cfg.range > 0.0)) throw DomainError("init_kan_layer: range must be positive");
  KanLayer<T> layer(n_in, n_out, uniform_knots<T>(cfg.grid_size, cfg.order, static_cast<T>(cfg.range)),
                    cfg.order, cfg.base);
  Rng rng(seed);
  const double bound = 0.1 / std::sqrt(static_cast<double>(n_in));
  for (auto& c : layer.coefficients().value().values()) c = static_cast<T>(rng.uniform(-bound, bound));
  layer.base_scale().value().fill(static_cast<T>(1.0 / std::sqrt(static_cast<double>(n_in))));
  layer.spline_scale().value().fill(T(1));
  return layer;
}

template <class T>
KanLayer<T> init_kan_layer(int n_in, int n_out, int grid_size, int order, double range,
                           std::uint64_t seed) {
  return init_kan_layer<T>(n_in, n_out, KanInit{grid_size, order, range}, seed);
}

namespace detail {

template <class T>
Tensor<T> transpose2d(const Tensor<T>& m) {
  const int r = m.dim(0), c = m.dim(1);
  Tensor<T> out({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = m.at(i, j);
  return out;
}

}  // namespace detail

/// Batch forward: input [B, n_in] -> [B, n_out].
template <class T>
Tensor<T> kan_layer_forward(const KanLayer<T>& layer, const Tensor<T>& input) {
  require_rank(input, 2, "kan_layer_forward");
  if (input.dim(1) != layer.n_in())
    throw ShapeError("kan_layer_forward: input width " + std::to_string(input.dim(1)) +
                     " != n_in " + std::to_string(layer.n_in()));
  const int b = input.dim(0);
  const Tensor<T> cols = detail::transpose2d(input);
  Tensor<T> out_cols({layer.n_out(), b});
  if (b > 0) layer.forward_columns(cols.data(), b, out_cols.data());
  return detail::transpose2d(out_cols);
}

template <class T>
std::vector<T> kan_layer_forward(const KanLayer<T>& layer, std::span<const T> input) {
  Tensor<T> in({1, static_cast<int>(input.size())}, std::vector<T>(input.begin(), input.end()));
  return kan_layer_forward(layer, in).values();
}

template <class T>
Tensor<T> kan_forward(const KanStack<T>& stack, const Tensor<T>& input) {
  if (stack.empty()) return input;
  Tensor<T> x = input;
  for (const auto& layer : stack.layers()) x = kan_layer_forward(layer, x);
  return x;
}

template <class T>
struct KanLayerGradients {
  Tensor<T> coef;
  Tensor<T> base_scale;
  Tensor<T> spline_scale;
};

template <class T>
struct KanGradients {
  std::vector<KanLayerGradients<T>> layers;
  Tensor<T> input;  // [B, n_in]
};

/// Gradients of <cotangent, kan_forward(stack, input)> with respect to every
/// parameter and the input.
template <class T>
KanGradients<T> kan_gradients(const KanStack<T>& stack, const Tensor<T>& input,
                              const Tensor<T>& cotangent) {
  require_rank(input, 2, "kan_gradients input");
  if (stack.empty()) throw ShapeError("kan_gradients: empty stack");
  if (input.dim(1) != stack.n_in()) throw ShapeError("kan_gradients: input width mismatch");
  const int b = input.dim(0);
  require_shape(cotangent, {b, stack.n_out()}, "kan_gradients cotangent");

  // Forward, keeping each layer's column-major input.
  std::vector<Tensor<T>> acts{detail::transpose2d(input)};
  for (const auto& layer : stack.layers()) {
    Tensor<T> y({layer.n_out(), b});
    if (b > 0) layer.forward_columns(acts.back().data(), b, y.data());
    acts.push_back(std::move(y));
  }

  KanGradients<T> out;
  out.layers.resize(stack.depth());
  Tensor<T> g = detail::transpose2d(cotangent);
  for (std::size_t li = stack.depth(); li-- > 0;) {
    const auto& layer = stack.layer(li);
    auto& lg = out.layers[li];
    lg.coef = Tensor<T>(layer.coefficients().shape());
    lg.base_scale = Tensor<T>(layer.base_scale().shape());
    lg.spline_scale = Tensor<T>(layer.spline_scale().shape());
    Tensor<T> dx({layer.n_in(), b});
    if (b > 0)
      layer.backward_columns(acts[li].data(), b, g.data(), &lg.coef, &lg.base_scale,
                             &lg.spline_scale, dx.data());
    g = std::move(dx);
  }
  out.input = detail::transpose2d(g);
  return out;
}

// ---------------------------------------------------------------------------
// Graph op: apply a layer independently at every pixel of an NCHW tensor.

template <class T>
Var<T> kan_pointwise(const KanLayer<T>& layer, const Var<T>& x) {
  require_rank(x.value(), 4, "kan_pointwise");
  const int n_b = x.dim(0), h = x.dim(2), w = x.dim(3);
  if (x.dim(1) != layer.n_in())
    throw ShapeError("kan_pointwise: input has " + std::to_string(x.dim(1)) +
                     " channels, layer expects " + std::to_string(layer.n_in()));
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  Tensor<T> out({n_b, layer.n_out(), h, w});
  {
    RowMat<T> f;
    const RowMat<T> wmat = layer.packed_weight();
    for (int n = 0; n < n_b; ++n) {
      layer.expand(&x.value().at(n, 0, 0, 0), plane, f, nullptr);
      MatMap<T>(&out.at(n, 0, 0, 0), layer.n_out(), plane).noalias() = wmat * f;
    }
  }
  const KanLayer<T>* lp = &layer;  // the layer must outlive the graph
  return make_result<T>(
      std::move(out),
      {x, layer.coefficients().var(), layer.base_scale().var(), layer.spline_scale().var()},
      [lp, n_b, plane](Node<T>& self) {
        Tensor<T>* gx = input_grad(self, 0);
        Tensor<T>* gc = input_grad(self, 1);
        Tensor<T>* gb = input_grad(self, 2);
        Tensor<T>* gs = input_grad(self, 3);
        const Tensor<T>& xv = self.inputs[0]->value;
        std::vector<T> dx(gx ? static_cast<std::size_t>(lp->n_in()) * plane : 0);
        for (int n = 0; n < n_b; ++n) {
          lp->backward_columns(&xv.at(n, 0, 0, 0), plane, &self.grad.at(n, 0, 0, 0), gc, gb, gs,
                               gx ? dx.data() : nullptr);
          if (gx) {
            T* dst = &gx->at(n, 0, 0, 0);
            for (std::size_t i = 0; i < dx.size(); ++i) dst[i] += dx[i];
          }
        }
      });
}

template <class T>
Var<T> kan_stack_pointwise(const KanStack<T>& stack, const Var<T>& x) {
  Var<T> y = x;
  for (const auto& layer : stack.layers()) y = kan_pointwise(layer, y);
  return y;
}

}  // namespace dehaze

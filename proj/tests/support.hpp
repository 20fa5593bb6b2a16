// SPDX-License-Identifier: Apache-2.0
//
// Shared oracles for the test suite and the acceptance runner.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dehaze/dehaze.hpp"

namespace dehaze::testing {

#ifdef DEHAZE_TEST_DATA
inline std::string data_path(const std::string& rel) { return std::string(DEHAZE_TEST_DATA) + "/" + rel; }
#endif

/// Textbook Cox-de Boor recursion, evaluated from scratch.
inline double cox_de_boor(const std::vector<double>& t, int i, int k, double x) {
  if (k == 0) return (t[i] <= x && x < t[i + 1]) ? 1.0 : 0.0;
  double a = 0.0, b = 0.0;
  if (t[i + k] != t[i]) a = (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x);
  if (t[i + k + 1] != t[i + 1]) b = (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x);
  return a + b;
}

/// Spline coefficients whose spline reproduces f(x) = x, found by least
/// squares on dense samples of the domain rather than any closed form.
inline std::vector<double> fit_identity_coefficients(const std::vector<double>& t, int order) {
  const int nb = static_cast<int>(t.size()) - order - 1;
  const double lo = t[order], hi = t[t.size() - order - 1];
  const int samples = 20 * nb;
  Eigen::MatrixXd a(samples, nb);
  Eigen::VectorXd y(samples);
  for (int s = 0; s < samples; ++s) {
    const double x = lo + (hi - lo) * (s + 0.5) / samples;
    for (int i = 0; i < nb; ++i) a(s, i) = cox_de_boor(t, i, order, x);
    y(s) = x;
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(y);
  return {c.data(), c.data() + nb};
}

/// ||a - n||_2 / max(||a||_2, ||n||_2); zero when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double scale = std::sqrt(std::max(na, nn));
  return scale == 0.0 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of f with respect to every entry of `x`, which is
/// perturbed in place and restored.
inline std::vector<double> numeric_gradient(std::vector<double*> entries, const std::function<double()>& f,
                                            double h) {
  std::vector<double> g;
  g.reserve(entries.size());
  for (double* e : entries) {
    const double keep = *e;
    *e = keep + h;
    const double up = f();
    *e = keep - h;
    const double down = f();
    *e = keep;
    g.push_back((up - down) / (2.0 * h));
  }
  return g;
}

template <class T>
std::vector<T*> entries_of(Tensor<T>& t) {
  std::vector<T*> out;
  for (auto& v : t.values()) out.push_back(&v);
  return out;
}

/// Random KAN stack with the given widths (double precision).
inline KanStack<double> random_stack(const std::vector<int>& widths, std::uint64_t seed, int grid = 5, int order = 3) {
  std::vector<KanLayer<double>> layers;
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    KanLayer<double> l = init_kan_layer<double>(widths[i], widths[i + 1], KanInit{grid, order, 1.0}, rng.next());
    // Randomise the scales too so every parameter family carries signal.
    for (auto& v : l.base_scale().value().values()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : l.spline_scale().value().values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : l.coefficients().value().values()) v = rng.uniform(-0.5, 0.5);
    layers.push_back(std::move(l));
  }
  return KanStack<double>(std::move(layers));
}

/// Worst relative error between analytic and central-difference gradients of
/// <cotangent, kan_forward(stack, input)> over every parameter family and the input.
inline double kan_gradient_error(KanStack<double>& stack, Tensor<double>& input, const Tensor<double>& cot,
                                 double h) {
  const auto objective = [&] {
    const Tensor<double> y = kan_forward(stack, input);
    double s = 0.0;
    for (std::size_t i = 0; i < y.numel(); ++i) s += y.values()[i] * cot.values()[i];
    return s;
  };
  const KanGradients<double> g = kan_gradients(stack, input, cot);
  double worst = 0.0;
  for (std::size_t li = 0; li < stack.depth(); ++li) {
    auto& layer = stack.layer(li);
    worst = std::max(worst, relative_error(g.layers[li].coef.values(),
                                           numeric_gradient(entries_of(layer.coefficients().value()), objective, h)));
    worst = std::max(worst, relative_error(g.layers[li].base_scale.values(),
                                           numeric_gradient(entries_of(layer.base_scale().value()), objective, h)));
    worst = std::max(worst, relative_error(g.layers[li].spline_scale.values(),
                                           numeric_gradient(entries_of(layer.spline_scale().value()), objective, h)));
  }
  worst = std::max(worst, relative_error(g.input.values(), numeric_gradient(entries_of(input), objective, h)));
  return worst;
}

/// Checks the gradient of <cot, build()> with respect to `p` against central differences.
inline double graph_param_gradient_error(Parameter<double>& p, const std::function<Var<double>()>& build,
                                         std::uint64_t seed, double h = 1e-6) {
  p.zero_grad();
  const Var<double> y = build();
  Tensor<double> cot(y.shape());
  Rng rng(seed);
  for (auto& v : cot.values()) v = rng.uniform(-1.0, 1.0);
  backward(y, &cot);
  const std::vector<double> analytic = p.grad().values();
  const auto objective = [&] {
    NoGradGuard guard;
    const Var<double> out = build();
    double s = 0.0;
    for (std::size_t i = 0; i < out.value().numel(); ++i) s += out.value().values()[i] * cot.values()[i];
    return s;
  };
  return relative_error(analytic, numeric_gradient(entries_of(p.value()), objective, h));
}

/// Checks d<cot, f(x)>/dx from the autograd graph against central differences.
inline double graph_input_gradient_error(const Tensor<double>& x, const std::function<Var<double>(const Var<double>&)>& build,
                                         std::uint64_t seed, double h = 1e-6) {
  Parameter<double> p(x);
  return graph_param_gradient_error(p, [&] { return build(p.var()); }, seed, h);
}

inline Image random_image(int h, int w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

}  // namespace dehaze::testing

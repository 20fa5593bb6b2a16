// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace dehaze;
using namespace dehaze::testing;
using Catch::Approx;

namespace {

Tensor<double> random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor<double> x(shape);
  Rng rng(seed);
  for (auto& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

int clampi(int i, int n) { return std::min(std::max(i, 0), n - 1); }

// Direct convolution with replicate padding, one output at a time.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, int stride) {
  const int n_b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3), co = w.dim(0), k = w.dim(2);
  const int ho = (h + stride - 1) / stride, wo = (wd + stride - 1) / stride, pad = k / 2;
  Tensor<double> out({n_b, co, ho, wo});
  for (int n = 0; n < n_b; ++n)
    for (int o = 0; o < co; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double s = b ? (*b)[o] : 0.0;
          for (int c = 0; c < ci; ++c)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx)
                s += w.at(o, c, ky, kx) *
                     x.at(n, c, clampi(y * stride + ky - pad, h), clampi(xx * stride + kx - pad, wd));
          out.at(n, o, y, xx) = s;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches direct convolution", "[ops]") {
  for (auto [k, stride, h, w] : {std::tuple{3, 1, 6, 7}, std::tuple{1, 1, 5, 4}, std::tuple{5, 1, 4, 6},
                                 std::tuple{3, 2, 7, 8}, std::tuple{1, 2, 5, 5}, std::tuple{7, 1, 3, 3}}) {
    const auto x = random_tensor({2, 3, h, w}, k + 10 * stride);
    const auto wt = random_tensor({4, 3, k, k}, k + 1);
    const auto b = random_tensor({4}, 99);
    const Var<double> y = conv2d(Var<double>(x), Var<double>(wt), Var<double>(b), stride);
    const Tensor<double> ref = naive_conv(x, wt, &b, stride);
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < ref.numel(); ++i) REQUIRE(y.value()[i] == Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d gradients", "[ops]") {
  for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{1, 1}, std::pair{5, 1}}) {
    const auto x = random_tensor({2, 3, 5, 6}, 1);
    Parameter<double> wt(random_tensor({2, 3, k, k}, 2));
    Parameter<double> b(random_tensor({2}, 3));
    const Var<double> xc(x);
    CHECK(graph_input_gradient_error(
              x, [&](const Var<double>& v) { return conv2d(v, wt.var(), b.var(), stride); }, 4) < 1e-8);
    CHECK(graph_param_gradient_error(wt, [&] { return conv2d(xc, wt.var(), b.var(), stride); }, 5) < 1e-8);
    CHECK(graph_param_gradient_error(b, [&] { return conv2d(xc, wt.var(), b.var(), stride); }, 6) < 1e-8);
  }
}

TEST_CASE("conv2d rejects mismatched weights", "[ops]") {
  const Var<double> x(Tensor<double>({1, 3, 4, 4}));
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({2, 2, 3, 3}))), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({2, 3, 2, 2}))), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Var<double>(Tensor<double>({2, 3, 3, 3})), Var<double>(Tensor<double>({3}))),
                  ShapeError);
}

TEST_CASE("depthwise convolution matches per-channel direct convolution", "[ops]") {
  const auto x = random_tensor({2, 3, 6, 5}, 7);
  const auto wt = random_tensor({3, 1, 7, 7}, 8);
  const Var<double> y = depthwise_conv2d(Var<double>(x), Var<double>(wt));
  for (int c = 0; c < 3; ++c) {
    Tensor<double> xc({2, 1, 6, 5}), wc({1, 1, 7, 7});
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 30; ++i) xc.values()[n * 30 + i] = x.values()[(n * 3 + c) * 30 + i];
    for (int i = 0; i < 49; ++i) wc.values()[i] = wt.values()[c * 49 + i];
    const Tensor<double> ref = naive_conv(xc, wc, nullptr, 1);
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 30; ++i) REQUIRE(y.value().values()[(n * 3 + c) * 30 + i] == Approx(ref[n * 30 + i]).epsilon(1e-12));
  }
}

TEST_CASE("depthwise convolution gradients", "[ops]") {
  const auto x = random_tensor({2, 2, 5, 6}, 9);
  Parameter<double> wt(random_tensor({2, 1, 3, 3}, 10));
  const Var<double> xc(x);
  CHECK(graph_input_gradient_error(x, [&](const Var<double>& v) { return depthwise_conv2d(v, wt.var()); }, 1) < 1e-8);
  CHECK(graph_param_gradient_error(wt, [&] { return depthwise_conv2d(xc, wt.var()); }, 2) < 1e-8);
}

TEST_CASE("elementwise activations and their gradients", "[ops]") {
  const auto x = random_tensor({2, 3, 2, 2}, 11, -3.0, 3.0);
  const Var<double> y = silu(Var<double>(x));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.value()[i] == Approx(x[i] / (1.0 + std::exp(-x[i]))));
  const Var<double> s = sigmoid_range(Var<double>(x), 0.001, 0.999);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(s.value()[i] > 0.001);
    CHECK(s.value()[i] < 0.999);
  }
  using F = std::function<Var<double>(const Var<double>&)>;
  for (const F& f : {F([](const Var<double>& v) { return silu(v); }), F([](const Var<double>& v) { return sigmoid(v); }),
                     F([](const Var<double>& v) { return leaky_relu(v, 0.2); }),
                     F([](const Var<double>& v) { return sigmoid_range(v, 0.1, 0.9); }),
                     F([](const Var<double>& v) { return affine(v, 2.5, -1.0); })})
    CHECK(graph_input_gradient_error(x, f, 12) < 1e-7);
  CHECK(sigmoid_scalar(-1000.0) >= 0.0);
  CHECK(std::isfinite(sigmoid_scalar(-1000.0)));
}

TEST_CASE("clamp01 passes gradient only inside the unit interval", "[ops]") {
  Parameter<double> x(Tensor<double>({4}, {-0.5, 0.25, 0.75, 1.5}));
  const Var<double> y = clamp01(x.var());
  CHECK(y.value().values() == std::vector<double>{0.0, 0.25, 0.75, 1.0});
  const Tensor<double> ones({4}, 1.0);
  backward(y, &ones);
  CHECK(x.grad().values() == std::vector<double>{0.0, 1.0, 1.0, 0.0});
}

TEST_CASE("losses", "[ops]") {
  const auto a = random_tensor({2, 3, 2, 2}, 13), b = random_tensor({2, 3, 2, 2}, 14);
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    l1 += std::abs(a[i] - b[i]);
    l2 += (a[i] - b[i]) * (a[i] - b[i]);
  }
  CHECK(l1_loss(Var<double>(a), Var<double>(b)).value()[0] == Approx(l1 / 24));
  CHECK(mse_loss(Var<double>(a), Var<double>(b)).value()[0] == Approx(l2 / 24));
  CHECK(mse_to(Var<double>(a), 1.0).value()[0] >= 0.0);
  CHECK(graph_input_gradient_error(a, [&](const Var<double>& v) { return l1_loss(v, Var<double>(b)); }, 1) < 1e-8);
  CHECK(graph_input_gradient_error(a, [&](const Var<double>& v) { return mse_loss(v, Var<double>(b)); }, 1) < 1e-8);
  CHECK(graph_input_gradient_error(a, [&](const Var<double>& v) { return mean(v); }, 1) < 1e-8);
  CHECK_THROWS_AS(l1_loss(Var<double>(a), Var<double>(Tensor<double>({2, 3, 2, 1}))), ShapeError);
}

TEST_CASE("weighted sum of zero weights is zero", "[ops]") {
  const Var<double> a(Tensor<double>({1}, 3.0)), b(Tensor<double>({1}, -7.0));
  CHECK(weighted_sum<double>({a, b}, {0.0, 0.0}).value()[0] == 0.0);
  CHECK(weighted_sum<double>({a, b}, {2.0, 1.0}).value()[0] == -1.0);
  CHECK_THROWS_AS(weighted_sum<double>({a, b}, {1.0}), ShapeError);
}

TEST_CASE("layout ops and their gradients", "[ops]") {
  const auto x = random_tensor({2, 3, 3, 4}, 15);
  const auto y = random_tensor({2, 2, 3, 4}, 16);
  const Var<double> cat = concat_channels<double>({Var<double>(x), Var<double>(y)});
  REQUIRE(cat.shape() == Shape{2, 5, 3, 4});
  CHECK(cat.value().at(1, 4, 2, 3) == y.at(1, 1, 2, 3));
  CHECK(cat.value().at(1, 2, 0, 1) == x.at(1, 2, 0, 1));
  const Var<double> sl = slice_channels(cat, 3, 2);
  CHECK(sl.value().values() == y.values());
  const Var<double> up = upsample2x(Var<double>(x));
  CHECK(up.value().at(1, 2, 5, 7) == x.at(1, 2, 2, 3));
  const Var<double> gap = global_avg_pool(Var<double>(x));
  double s = 0.0;
  for (int i = 0; i < 12; ++i) s += x.values()[12 * 4 + i];
  CHECK(gap.value().at(1, 1) == Approx(s / 12));
  const Var<double> yc(y);
  CHECK(graph_input_gradient_error(x, [&](const Var<double>& v) { return concat_channels<double>({yc, v}); }, 1) < 1e-9);
  CHECK(graph_input_gradient_error(x, [](const Var<double>& v) { return slice_channels(v, 1, 2); }, 2) < 1e-9);
  CHECK(graph_input_gradient_error(x, [](const Var<double>& v) { return upsample2x(v); }, 3) < 1e-9);
  CHECK(graph_input_gradient_error(x, [](const Var<double>& v) { return global_avg_pool(v); }, 4) < 1e-9);
  CHECK(graph_input_gradient_error(x, [](const Var<double>& v) { return feature_unfold(v, 1); }, 5) < 1e-9);
  CHECK_THROWS_AS(slice_channels(cat, 4, 2), ShapeError);
  CHECK_THROWS_AS(concat_channels<double>({Var<double>(x), Var<double>(Tensor<double>({2, 1, 3, 5}))}), ShapeError);
}

TEST_CASE("linear layer", "[ops]") {
  const auto x = random_tensor({3, 4}, 17);
  Parameter<double> w(random_tensor({2, 4}, 18)), b(random_tensor({2}, 19));
  const Var<double> y = linear(Var<double>(x), w.var(), b.var());
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 2; ++c) {
      double s = b.value()[c];
      for (int i = 0; i < 4; ++i) s += x.at(r, i) * w.value().at(c, i);
      CHECK(y.value().at(r, c) == Approx(s));
    }
  const Var<double> xc(x);
  CHECK(graph_input_gradient_error(x, [&](const Var<double>& v) { return linear(v, w.var(), b.var()); }, 1) < 1e-9);
  CHECK(graph_param_gradient_error(w, [&] { return linear(xc, w.var(), b.var()); }, 2) < 1e-9);
  CHECK(graph_param_gradient_error(b, [&] { return linear(xc, w.var(), b.var()); }, 3) < 1e-9);
}

TEST_CASE("batched scattering matches the per-pixel model", "[ops]") {
  const auto j = random_tensor({2, 3, 3, 3}, 20, 0.0, 1.0);
  Parameter<double> t(random_tensor({2, 1, 3, 3}, 21, 0.1, 1.0));
  Parameter<double> a(random_tensor({2, 3}, 22, 0.5, 1.0));
  const Var<double> out = scatter_haze(Var<double>(j), t.var(), a.var());
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          const double tv = t.value().at(n, 0, y, x);
          CHECK(out.value().at(n, c, y, x) == Approx(j.at(n, c, y, x) * tv + a.value().at(n, c) * (1 - tv)));
        }
  const Var<double> jc(j);
  CHECK(graph_input_gradient_error(j, [&](const Var<double>& v) { return scatter_haze(v, t.var(), a.var()); }, 1) < 1e-9);
  CHECK(graph_param_gradient_error(t, [&] { return scatter_haze(jc, t.var(), a.var()); }, 2) < 1e-9);
  CHECK(graph_param_gradient_error(a, [&] { return scatter_haze(jc, t.var(), a.var()); }, 3) < 1e-9);
}

TEST_CASE("no-grad mode records nothing", "[ops]") {
  Parameter<double> w(random_tensor({2, 3, 3, 3}, 23));
  NoGradGuard guard;
  const Var<double> y = conv2d(Var<double>(random_tensor({1, 3, 4, 4}, 24)), w.var());
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

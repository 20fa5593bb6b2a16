// SPDX-License-Identifier: Apache-2.0
#include <catch_amalgamated.hpp>

#include "support.hpp"

using namespace dehaze;
using namespace dehaze::testing;
using Catch::Approx;

namespace {

Tensor<double> random_planes(int n, int c, int h, int w, std::uint64_t seed) {
  Tensor<double> x({n, c, h, w});
  Rng rng(seed);
  for (auto& v : x.values()) v = rng.uniform(-1.0, 1.0);
  return x;
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// The smoke-test image: a 16x16 crop of the natural test photo.
Image smoke_image() { return crop(load_image(data_path("photo64.png")), 8, 8, 16, 16); }

}  // namespace

TEST_CASE("single-pixel grid sits at the origin", "[inr]") {
  const auto g = make_grid(1, 1);
  REQUIRE(g.coords.size() == 1u);
  CHECK(g.at(0, 0)[0] == 0.0);
  CHECK(g.at(0, 0)[1] == 0.0);
}

TEST_CASE("2x2 grid uses pixel centres", "[inr]") {
  const auto g = make_grid(2, 2);
  CHECK(g.at(0, 0) == std::array<double, 2>{-0.5, -0.5});
  CHECK(g.at(0, 1) == std::array<double, 2>{0.5, -0.5});
  CHECK(g.at(1, 0) == std::array<double, 2>{-0.5, 0.5});
  CHECK(g.at(1, 1) == std::array<double, 2>{0.5, 0.5});
}

TEST_CASE("grid corners and rotational symmetry", "[inr][property]") {
  for (auto [h, w] : {std::pair{3, 5}, std::pair{8, 8}, std::pair{7, 2}}) {
    const auto g = make_grid(h, w);
    CHECK(g.at(0, 0)[0] == Approx(-(1.0 - 1.0 / w)).margin(1e-15));
    CHECK(g.at(0, 0)[1] == Approx(-(1.0 - 1.0 / h)).margin(1e-15));
    CHECK(g.at(h - 1, w - 1)[0] == Approx(1.0 - 1.0 / w).margin(1e-15));
    CHECK(g.at(h - 1, w - 1)[1] == Approx(1.0 - 1.0 / h).margin(1e-15));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        CHECK(g.at(y, x)[0] == Approx(-g.at(h - 1 - y, w - 1 - x)[0]).margin(1e-15));
        CHECK(g.at(y, x)[1] == Approx(-g.at(h - 1 - y, w - 1 - x)[1]).margin(1e-15));
      }
  }
  CHECK_THROWS_AS(make_grid(0, 3), DomainError);
}

TEST_CASE("encoding of the origin", "[inr]") {
  const std::array<double, 2> p{0.0, 0.0};
  const auto e = positional_encode(p, 4);
  REQUIRE(e.size() == 16u);
  for (std::size_t i = 0; i < e.size(); i += 2) {
    CHECK(e[i] == 0.0);
    CHECK(e[i + 1] == 1.0);
  }
}

TEST_CASE("encoding of (1, 0) at one frequency", "[inr]") {
  const std::array<double, 2> p{1.0, 0.0};
  const auto e = positional_encode(p, 1);
  REQUIRE(e.size() == 4u);
  CHECK(e[0] == Approx(0.0).margin(1e-15));
  CHECK(e[1] == Approx(-1.0).margin(1e-15));
  CHECK(e[2] == 0.0);
  CHECK(e[3] == 1.0);
}

TEST_CASE("encoding width law and Pythagorean pairs", "[inr][property]") {
  Rng rng(3);
  for (int l = 1; l <= 8; ++l) {
    for (int d = 1; d <= 3; ++d) {
      std::vector<double> p(d);
      for (auto& v : p) v = rng.uniform(-1.0, 1.0);
      CHECK(positional_encode(p, l).size() == static_cast<std::size_t>(2 * l * d));
    }
    CHECK(encoded_width(2, l) == 4 * l);
  }
  CHECK(encoded_width(2, InrConfig{}.frequencies) == 16);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const std::array<double, 2> p{rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    const auto e = positional_encode(p, 4);
    for (std::size_t k = 0; k < e.size(); k += 2) worst = std::max(worst, std::abs(e[k] * e[k] + e[k + 1] * e[k + 1] - 1.0));
  }
  CHECK(worst < 1e-6);
  CHECK_THROWS_AS(positional_encode(std::vector<double>{0.0, 0.0}, 0), DomainError);
}

TEST_CASE("encoded grid planes match per-point encoding", "[inr]") {
  const auto g = make_grid(3, 4);
  const auto t = encode_grid<double>(g, 2);
  REQUIRE(t.shape() == Shape{1, 8, 3, 4});
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 4; ++x) {
      const auto e = positional_encode(g.at(y, x), 2);
      for (int k = 0; k < 8; ++k) CHECK(t.at(0, k, y, x) == e[k]);
    }
}

TEST_CASE("unfold with radius 0 is the identity", "[inr]") {
  const auto x = random_planes(2, 3, 4, 5, 1);
  CHECK(feature_unfold(Var<double>(x), 0).value().values() == x.values());
}

TEST_CASE("unfold of a constant repeats it", "[inr]") {
  Tensor<double> x({1, 2, 4, 4});
  for (int i = 0; i < 16; ++i) {
    x.values()[i] = 0.25;
    x.values()[16 + i] = -3.0;
  }
  const auto y = feature_unfold(Var<double>(x), 1).value();
  REQUIRE(y.shape() == Shape{1, 18, 4, 4});
  for (int b = 0; b < 9; ++b)
    for (int i = 0; i < 16; ++i) {
      CHECK(y.values()[(2 * b) * 16 + i] == 0.25);
      CHECK(y.values()[(2 * b + 1) * 16 + i] == -3.0);
    }
}

TEST_CASE("unfold of a 3x3 image gathers the centre neighbourhood in row-major order", "[inr]") {
  Tensor<double> x({1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) x.values()[i] = 10.0 + i;
  const auto y = feature_unfold(Var<double>(x), 1).value();
  for (int k = 0; k < 9; ++k) CHECK(y.at(0, k, 1, 1) == 10.0 + k);
  // Replicate padding at the top-left corner.
  const double corner[9] = {10, 10, 11, 10, 10, 11, 13, 13, 14};
  for (int k = 0; k < 9; ++k) CHECK(y.at(0, k, 0, 0) == corner[k]);
  CHECK_THROWS_AS(feature_unfold(Var<double>(x), -1), DomainError);
}

TEST_CASE("unfold gradients match central differences", "[inr]") {
  const auto x = random_planes(1, 2, 4, 5, 2);
  CHECK(graph_input_gradient_error(x, [](const Var<double>& v) { return feature_unfold(v, 1); }, 3) < 1e-8);
}

TEST_CASE("zero-weight decoder outputs the logistic of its bias", "[inr]") {
  InrDecoder<double> dec(2, InrConfig{}, 4);
  CHECK(dec.in_width() == 2 * 9 + 16);
  const double b[3] = {-0.7, 0.0, 1.3};
  for (auto& layer : dec.layers()) {
    layer.weight().value().fill(0.0);
    layer.bias().value().fill(0.0);
  }
  for (int c = 0; c < 3; ++c) dec.layers().back().bias().value().values()[c] = b[c];
  const auto out = inr_decode_features(dec, Var<double>(random_planes(2, 2, 5, 6, 5))).value();
  REQUIRE(out.shape() == Shape{2, 3, 5, 6});
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 30; ++i) CHECK(out.values()[(n * 3 + c) * 30 + i] == Approx(logistic(b[c])).epsilon(1e-15));
}

TEST_CASE("decoder outputs stay in the unit interval", "[inr][property]") {
  InrDecoder<double> dec(3, InrConfig{}, 6);
  auto x = random_planes(1, 3, 6, 6, 7);
  for (auto& v : x.values()) v *= 50.0;
  const Var<double> y = inr_decode_features(dec, Var<double>(x));
  for (double v : y.value().values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("decoding commutes with joint spatial permutations", "[inr][property]") {
  InrConfig cfg;
  cfg.unfold_radius = 0;
  InrDecoder<double> dec(4, cfg, 8);
  const int h = 3, w = 4, hw = h * w;
  const auto feat = random_planes(1, 4, h, w, 9);
  const auto enc = encode_grid<double>(make_grid(h, w), 4);
  std::vector<int> perm(hw);
  Rng rng(10);
  for (int i = 0; i < hw; ++i) perm[i] = i;
  for (int i = hw - 1; i > 0; --i) std::swap(perm[i], perm[rng.index(i + 1)]);
  const auto permute = [&](const Tensor<double>& t) {
    Tensor<double> out(t.shape());
    for (int c = 0; c < t.dim(1); ++c)
      for (int i = 0; i < hw; ++i) out.values()[c * hw + i] = t.values()[c * hw + perm[i]];
    return out;
  };
  const auto y = inr_decode(dec, Var<double>(feat), Var<double>(enc)).value();
  const auto yp = inr_decode(dec, Var<double>(permute(feat)), Var<double>(permute(enc))).value();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < hw; ++i) REQUIRE(yp.values()[c * hw + i] == Approx(y.values()[c * hw + perm[i]]).epsilon(1e-14));
}

TEST_CASE("decoder width mismatch is a shape error", "[inr]") {
  InrDecoder<double> dec(4, InrConfig{}, 0);
  const Var<double> enc(encode_grid<double>(make_grid(4, 4), 4));
  CHECK_THROWS_AS(inr_decode(dec, Var<double>(Tensor<double>({1, 5, 4, 4})), enc), ShapeError);
  CHECK_THROWS_AS(inr_decode(dec, Var<double>(), enc), ShapeError);
}

TEST_CASE("two-layer decoder gradients match central differences", "[inr]") {
  InrConfig cfg;
  cfg.hidden_layers = 1;
  cfg.hidden_width = 8;
  InrDecoder<double> dec(2, cfg, 11);
  REQUIRE(dec.layers().size() == 2u);
  const auto feat = random_planes(1, 2 * 9, 4, 4, 12);
  const Var<double> enc(encode_grid<double>(make_grid(4, 4), 4));
  const Var<double> fv(feat);
  const auto run = [&] { return inr_decode(dec, fv, enc); };
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(graph_param_gradient_error(dec.layers()[i].weight(), run, 13 + i) < 1e-4);
    CHECK(graph_param_gradient_error(dec.layers()[i].bias(), run, 15 + i) < 1e-4);
  }
  CHECK(graph_input_gradient_error(feat, [&](const Var<double>& v) { return inr_decode(dec, v, enc); }, 17) < 1e-4);
}

TEST_CASE("fitting a constant image reaches 40 dB within 200 iterations", "[inr][fit]") {
  Image target(16, 16);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) target(y, x, c) = 0.2 + 0.3 * c;
  const auto r = fit_image<float>(target, InrConfig{}, 200, kDefaultFitLr, 0);
  CHECK(psnr(r.reconstruction, target) >= 40.0);
}

TEST_CASE("fitting loss never rises over a 50-iteration window on the smoke image", "[inr][fit]") {
  const Image img = smoke_image();
  const auto r = fit_image<float>(img, InrConfig{}, 500, kDefaultFitLr, 0);
  REQUIRE(r.losses.size() == 500u);
  for (std::size_t k = 0; k + 50 < r.losses.size(); ++k) REQUIRE(r.losses[k + 50] <= r.losses[k] + 1e-6);
  CHECK(r.losses.back() < 0.1 * r.losses.front());
}

TEST_CASE("fitting is deterministic for a fixed seed", "[inr][fit]") {
  const Image img = smoke_image();
  const auto a = fit_image<float>(img, InrConfig{}, 3, kDefaultFitLr, 7);
  const auto b = fit_image<float>(img, InrConfig{}, 3, kDefaultFitLr, 7);
  CHECK(a.losses == b.losses);
  CHECK(a.reconstruction.data() == b.reconstruction.data());
  const auto c = fit_image<float>(img, InrConfig{}, 1, kDefaultFitLr, 8);
  CHECK(c.losses.front() != a.losses.front());
  CHECK_THROWS_AS(fit_image<float>(img, InrConfig{}, 0, kDefaultFitLr, 7), DomainError);
}

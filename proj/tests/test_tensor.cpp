#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "xoct/tensor.hpp"

using namespace xoct;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

ConvSpec make_spec(Triple k, Triple s, Triple p, std::size_t g = 1) {
  ConvSpec c;
  c.kernel = k;
  c.stride = s;
  c.pad = p;
  c.groups = g;
  return c;
}

}  // namespace

TEST_CASE("shape basics") {
  Shape s{2, 3, 4};
  CHECK(s.numel() == 24);
  CHECK(s.strides() == std::vector<std::size_t>{12, 4, 1});
  CHECK(s.str() == "[2x3x4]");
  CHECK(Shape{}.numel() == 0);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
}

TEST_CASE("tensor indexing and reshape") {
  Tensor t(Shape{2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
  CHECK(t.at({1, 2}) == 5.0);
  CHECK_THROWS_AS(t.at({2, 0}), ShapeError);
  CHECK(t.reshaped(Shape{3, 2}).at({2, 1}) == 5.0);
  CHECK_THROWS_AS(t.reshaped(Shape{4}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2}, std::vector<double>{1.0}), ShapeError);
  CHECK(Tensor::scalar(3.0).item() == 3.0);
  CHECK_THROWS(t.item());
  t[0] = NAN;
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("conv3d matches the direct oracle on every kernel shape") {
  Rng rng(5);
  const Triple kernels[] = {{3, 3, 3}, {3, 1, 1}, {1, 3, 1}, {1, 1, 3}, {5, 5, 5}, {1, 1, 1}};
  for (const auto& k : kernels)
    for (std::size_t stride = 1; stride <= 2; ++stride)
      for (std::size_t pad = 0; pad <= 2; ++pad) {
        const bool dw = k[0] == 5;
        const std::size_t cin = dw ? 3 : 2, cout = dw ? 3 : 4;
        const ConvSpec s = make_spec(k, {stride, stride, stride}, {pad, pad, pad}, dw ? 3 : 1);
        const Tensor x = oracle::random(Shape{2, cin, k[0] + 2, k[1] + 3, k[2] + 1}, rng);
        const Tensor w = oracle::random(Shape{cout, cin / s.groups, k[0], k[1], k[2]}, rng);
        const Tensor b = oracle::random(Shape{cout}, rng);
        const Tensor got = conv3d(x, w, b, s);
        const Tensor want = oracle::conv3d(x, w, &b, s);
        REQUIRE(got.shape() == want.shape());
        CHECK(oracle::max_abs_diff(got, want) <= 1e-12);
        CHECK(conv3d_output_shape(x.shape(), w.shape(), s) == got.shape());
      }
}

TEST_CASE("conv3d adjoints satisfy <conv(x), g> = <x, conv^T(g)>") {
  Rng rng(6);
  const ConvSpec s = make_spec({3, 1, 3}, {2, 1, 1}, {1, 0, 2}, 2);
  const Tensor x = oracle::random(Shape{2, 4, 5, 4, 3}, rng);
  const Tensor w = oracle::random(Shape{6, 2, 3, 1, 3}, rng);
  const Tensor y = conv3d(x, w, Tensor(), s);
  const Tensor g = oracle::random(y.shape(), rng);
  const Tensor gx = conv3d_backward_input(g, w, x.shape(), s);
  CHECK(std::fabs(dot(y, g) - dot(x, gx)) < 1e-10);
  Tensor gw(w.shape()), gb(Shape{6});
  conv3d_backward_params(g, x, s, gw, &gb);
  CHECK(std::fabs(dot(y, g) - dot(w, gw)) < 1e-10);
  double gsum0 = 0.0;
  const std::size_t per = g.numel() / (2 * 6);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < per; ++i) gsum0 += g[n * 6 * per + i];
  CHECK(gb[0] == doctest::Approx(gsum0).epsilon(1e-12));
}

TEST_CASE("conv3d rejects bad specifications") {
  const Tensor x(Shape{1, 4, 4, 4, 4});
  CHECK_THROWS_AS(conv3d(x, Tensor(Shape{2, 3, 3, 3, 3}), Tensor(), ConvSpec::same(3, 3, 3)), ShapeError);
  CHECK_THROWS_AS(conv3d(x, Tensor(Shape{3, 2, 3, 3, 3}), Tensor(), ConvSpec::same(3, 3, 3, 2)), SpecError);
  ConvSpec big;
  big.kernel = {7, 1, 1};
  CHECK_THROWS_AS(conv3d(x, Tensor(Shape{1, 4, 7, 1, 1}), Tensor(), big), SpecError);
  ConvSpec zero;
  zero.stride = {0, 1, 1};
  CHECK_THROWS_AS(conv3d(x, Tensor(Shape{1, 4, 1, 1, 1}), Tensor(), zero), SpecError);
}

TEST_CASE("constant input through an all-ones kernel counts valid taps") {
  const Tensor x(Shape{1, 1, 3, 3, 3}, 1.0);
  const Tensor w(Shape{1, 1, 3, 3, 3}, 1.0);
  const Tensor y = conv3d(x, w, Tensor(), ConvSpec::same(3, 3, 3));
  CHECK(y.at({0, 0, 1, 1, 1}) == 27.0);
  CHECK(y.at({0, 0, 0, 0, 0}) == 8.0);
  CHECK(y.at({0, 0, 0, 1, 1}) == 18.0);
}

TEST_CASE("upsample, pad and slice") {
  Rng rng(7);
  const Tensor x = oracle::random(Shape{1, 2, 2, 2, 3}, rng);
  const Tensor u = upsample_nearest3d(x, {2, 2, 2});
  CHECK(u.shape() == Shape{1, 2, 4, 4, 6});
  CHECK(u.at({0, 1, 3, 2, 5}) == x.at({0, 1, 1, 1, 2}));
  const Tensor g = oracle::random(u.shape(), rng);
  CHECK(std::fabs(dot(u, g) - dot(x, upsample_nearest3d_backward(g, {2, 2, 2}))) < 1e-12);

  const Tensor p = pad3d(x, {1, 0, 2}, {0, 1, 0});
  CHECK(p.shape() == Shape{1, 2, 3, 3, 5});
  CHECK(p.at({0, 0, 0, 0, 0}) == 0.0);
  CHECK(p.at({0, 1, 1, 0, 2}) == x.at({0, 1, 0, 0, 0}));

  const std::vector<Range> r{{0, 1}, {1, 2}, {0, 2}, {1, 2}, {0, 3}};
  const Tensor sl = slice(x, r);
  CHECK(sl.shape() == Shape{1, 1, 2, 1, 3});
  CHECK(sl.at({0, 0, 1, 0, 2}) == x.at({0, 1, 1, 1, 2}));
  const Tensor back = unslice(sl, x.shape(), r);
  CHECK(back.at({0, 1, 1, 1, 2}) == x.at({0, 1, 1, 1, 2}));
  CHECK(back.at({0, 0, 1, 1, 2}) == 0.0);
  CHECK_THROWS_AS(slice(x, {{0, 1}, {1, 3}, {0, 2}, {0, 2}, {0, 3}}), ShapeError);
}

TEST_CASE("concat_channels orders parts along axis 1") {
  const Tensor a(Shape{2, 1, 1, 1, 2}, 1.0), b(Shape{2, 2, 1, 1, 2}, 2.0);
  const Tensor parts[] = {a, b};
  const Tensor c = concat_channels(parts);
  CHECK(c.shape() == Shape{2, 3, 1, 1, 2});
  CHECK(c.at({1, 0, 0, 0, 1}) == 1.0);
  CHECK(c.at({1, 2, 0, 0, 0}) == 2.0);
  const Tensor bad[] = {a, Tensor(Shape{1, 1, 1, 1, 2})};
  CHECK_THROWS_AS(concat_channels(bad), ShapeError);
}

TEST_CASE("reductions") {
  const Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(reduce(t, {1}, ReduceKind::Sum) == Tensor(Shape{2}, std::vector<double>{6, 15}));
  CHECK(reduce(t, {0}, ReduceKind::Mean, true) == Tensor(Shape{1, 3}, std::vector<double>{2.5, 3.5, 4.5}));
  CHECK(reduce(t, {0, 1}, ReduceKind::Max).item() == 6.0);
  CHECK(reduce(t, {0, 1}, ReduceKind::Sum).shape() == Shape{1});
  CHECK_THROWS_AS(reduce(t, {2}, ReduceKind::Sum), ShapeError);
  CHECK_THROWS_AS(reduce(t, {0, 0}, ReduceKind::Sum), ShapeError);
}

TEST_CASE("elementwise maps and broadcasting") {
  const Tensor x(Shape{3}, std::vector<double>{-2, 0, 3});
  CHECK(map_unary(x, {UnaryKind::LeakyRelu, 0.2})[0] == doctest::Approx(-0.4));
  CHECK(map_unary(x, {UnaryKind::Abs})[0] == 2.0);
  CHECK_THROWS_AS(map_unary(x, {UnaryKind::Log}), DomainError);
  CHECK(numerically_stable_log_sigmoid(-800.0) == doctest::Approx(-800.0));
  CHECK(numerically_stable_log_sigmoid(800.0) == 0.0);
  CHECK(numerically_stable_log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)));

  const Tensor a(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const Tensor b(Shape{2, 1}, std::vector<double>{10, 20});
  const Tensor s = zip_binary(a, b, BinaryKind::Add);
  CHECK(s.at({1, 2}) == 26.0);
  CHECK(broadcast_shape(Shape{2, 1, 4}, Shape{1, 3, 4}) == Shape{2, 3, 4});
  CHECK_THROWS_AS(broadcast_shape(Shape{2, 3}, Shape{3, 3}), ShapeError);
  CHECK_THROWS_AS(zip_binary(a, Tensor(Shape{2, 1}), BinaryKind::Div), DomainError);
  CHECK(sum_to_shape(Tensor(Shape{2, 3}, 1.0), Shape{1, 3}) == Tensor(Shape{1, 3}, 2.0));
}

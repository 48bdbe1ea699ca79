#include <cmath>
#include <numbers>

#include "doctest.h"
#include "oracles.hpp"
#include "xoct/cds.hpp"

using namespace xoct;
using namespace xoct::cds;

namespace {

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n, 1, 1}, std::move(v));
}

Tensor random_mask(const Shape& s, Rng& rng, double p) {
  Tensor m(s);
  for (double& v : m.data()) v = rng.uniform() < p ? 1.0 : 0.0;
  return m;
}

}  // namespace

TEST_CASE("projection of a two-voxel column") {
  const Tensor v = column({3.0, 9.0});
  CHECK(enface_projection(v, column({1, 1}))[0] == 6.0);
  CHECK(enface_projection(v, column({1, 0}))[0] == 3.0);
  CHECK(enface_projection(v, column({0, 0}))[0] == 0.0);
  CHECK(enface_projection(v, column({0.25, 0.75}))[0] == doctest::Approx(7.5));
}

TEST_CASE("projection agrees with the loop oracle and proj_mean") {
  Rng rng(1);
  for (int n = 0; n < 20; ++n) {
    const Shape s{2 + rng.below(6), 1 + rng.below(6), 1 + rng.below(6)};
    const Tensor v = oracle::random(s, rng), m = random_mask(s, rng, 0.5);
    CHECK(oracle::max_abs_diff(enface_projection(v, m), oracle::projection(v, m)) <= 1e-12);
    CHECK(oracle::max_abs_diff(proj_mean(v), oracle::projection(v, Tensor(s, 1.0))) <= 1e-12);
  }
  const Tensor c(Shape{5, 3, 4}, 0.3);
  CHECK(oracle::max_abs_diff(proj_mean(c), Tensor(Shape{3, 4}, 0.3)) <= 1e-15);
  CHECK_THROWS_AS(enface_projection(c, Tensor(Shape{5, 3, 3}, 1.0)), ShapeError);
}

TEST_CASE("proj_full equals proj_mean when the layers cover every voxel") {
  Rng rng(2);
  const Shape s{6, 4, 4};
  Tensor a(s), b(s);
  for (std::size_t i = 0; i < s.numel(); ++i) (i / 16 < 2 ? a : b)[i] = 1.0;
  const SegmentationSet seg({{"top", a}, {"rest", b}});
  seg.validate();
  const Tensor v = oracle::random(s, rng);
  CHECK(oracle::max_abs_diff(proj_full(v, seg), proj_mean(v)) <= 1e-12);
  CHECK(seg.full_mask() == Tensor(s, 1.0));
  CHECK(seg.union_mask() == Tensor(s, 1.0));
  CHECK(seg.names() == std::vector<std::string>{"top", "rest"});
  CHECK_THROWS_AS(seg.mask("none"), ConfigError);
}

TEST_CASE("segmentation validation") {
  const Shape s{2, 1, 1};
  CHECK_THROWS_AS(SegmentationSet({{"a", Tensor(s, 1.0)}, {"b", Tensor(s, 1.0)}}).validate(), DomainError);
  CHECK_THROWS_AS(SegmentationSet({{"a", Tensor(s, 0.5)}}).validate(), DomainError);
  CHECK_THROWS_AS(SegmentationSet({{"a", Tensor(s, 1.0)}, {"b", Tensor(Shape{3, 1, 1})}}), ShapeError);
}

TEST_CASE("projection gradient is zero outside the mask") {
  Rng rng(3);
  const Shape s{5, 3, 3};
  const Tensor m = random_mask(s, rng, 0.4);
  Tape t;
  Var x = t.leaf(oracle::random(s, rng));
  t.backward(ad::sum(enface_projection(x, m)));
  const Tensor g = t.grad(x);
  for (std::size_t i = 0; i < g.numel(); ++i)
    if (m[i] == 0.0) CHECK(g[i] == 0.0);
}

TEST_CASE("adversarial losses at zero logits") {
  Tape t;
  const Var z = t.constant(Tensor(Shape{4}, 0.0));
  CHECK(discriminator_loss(z, z).value().item() == doctest::Approx(2.0 * std::numbers::ln2));
  CHECK(generator_adversarial_loss(z).value().item() == doctest::Approx(std::numbers::ln2));
  double prev = 1e300;
  for (double f = -5; f <= 5; f += 0.5) {
    const double g = generator_adversarial_loss(t.constant(Tensor(Shape{1}, f))).value().item();
    CHECK(g < prev);
    prev = g;
  }
  const Var huge = t.constant(Tensor(Shape{1}, -1000.0));
  CHECK(std::isfinite(generator_adversarial_loss(huge).value().item()));
  CHECK_THROWS_AS(adversarial_losses(z, t.constant(Tensor(Shape{4}, NAN))), NumericError);
}

TEST_CASE("l1 and perceptual losses") {
  Rng rng(4);
  Tape t;
  const Var a = t.constant(oracle::random(Shape{16, 16}, rng));
  const Var b = t.constant(oracle::random(Shape{16, 16}, rng));
  double l1 = 0;
  for (std::size_t i = 0; i < 256; ++i) l1 += std::fabs(a.value()[i] - b.value()[i]);
  CHECK(l1_loss(a, b).value().item() == doctest::Approx(l1 / 256).epsilon(1e-12));
  const nn::PerceptualNet net;
  CHECK(perceptual_loss(net, a, a).value().item() == 0.0);
  const double ab = perceptual_loss(net, a, b).value().item();
  CHECK(ab > 0.0);
  CHECK(ab == doctest::Approx(perceptual_loss(net, b, a).value().item()).epsilon(1e-12));
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  CHECK_NOTHROW(w.validate());
  w.beta_2d = -1;
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

namespace {

struct Toy {
  Shape s{8, 8, 8};
  SegmentationSet seg;
  nn::PatchDiscriminator d3{"d3", 3, 1, 2, 1, 1};
  nn::PatchDiscriminator da{"a", 2, 1, 2, 1, 2}, db{"b", 2, 1, 2, 1, 3};
  std::vector<nn::PatchDiscriminator*> d2{&da, &db};
  nn::PerceptualNet net;
  Tensor gt;

  Toy() {
    Tensor m1(s), m2(s);
    for (std::size_t i = 0; i < s.numel(); ++i) {
      const std::size_t z = i / 64;
      if (z >= 1 && z <= 3) m1[i] = 1.0;
      if (z >= 4 && z <= 6) m2[i] = 1.0;
    }
    seg = SegmentationSet({{"a", m1}, {"b", m2}});
    Rng rng(9);
    gt = oracle::random(s, rng);
  }

  LossContext ctx(LossWeights w = {}) {
    LossContext c;
    c.seg = &seg;
    c.discs_2d = d2;
    c.disc_3d = &d3;
    c.perceptual = &net;
    c.weights = w;
    return c;
  }
};

}  // namespace

TEST_CASE("total loss breakdown") {
  Toy toy;
  Rng rng(10);
  Tape t;
  Var pred = t.leaf(oracle::random(toy.s, rng));
  const LossBreakdown b = total_loss(t, pred, toy.gt, toy.ctx());
  std::vector<std::string> names;
  for (const auto& term : b.terms) names.push_back(term.name);
  CHECK(names == std::vector<std::string>{"l1_3d", "adv_3d", "l1_2d/a", "adv_2d/a", "perp_2d/a",
                                          "l1_2d/b", "adv_2d/b", "perp_2d/b"});
  CHECK(std::isfinite(b.value()));
  CHECK(b.value() > 0.0);
  CHECK(std::fabs(b.value() - b.sum_of_terms()) <= 1e-12 * std::max(1.0, std::fabs(b.value())));
  for (const auto& term : b.terms) CHECK(term.raw.value().item() >= 0.0);

  // Reductions: the 2-D L1 terms are L1 between projections.
  Tape t2;
  Var p2 = t2.constant(pred.value());
  const auto l2 = l2d_loss(t2, p2, toy.gt, toy.ctx());
  const Tensor pa = oracle::projection(pred.value(), toy.seg.mask("a"));
  const Tensor ga = oracle::projection(toy.gt, toy.seg.mask("a"));
  double want = 0;
  for (std::size_t i = 0; i < pa.numel(); ++i) want += std::fabs(pa[i] - ga[i]);
  want /= double(pa.numel());
  CHECK(l2.terms[0].name == "l1_2d/a");
  CHECK(l2.terms[0].raw.value().item() == doctest::Approx(want).epsilon(1e-12));
  double l1 = 0;
  for (std::size_t i = 0; i < toy.gt.numel(); ++i) l1 += std::fabs(pred.value()[i] - toy.gt[i]);
  CHECK(b.terms[0].raw.value().item() == doctest::Approx(l1 / double(toy.gt.numel())).epsilon(1e-12));
}

TEST_CASE("zero weights drop the adversarial and perceptual terms") {
  Toy toy;
  Rng rng(11);
  Tape t;
  Var pred = t.leaf(oracle::random(toy.s, rng));
  LossWeights w;
  w.beta_3d = 0;
  w.beta_2d = 0;
  w.gamma_2d = 0;
  const LossBreakdown b = total_loss(t, pred, toy.gt, toy.ctx(w));
  std::vector<std::string> names;
  for (const auto& term : b.terms) names.push_back(term.name);
  CHECK(names == std::vector<std::string>{"l1_3d", "l1_2d/a", "l1_2d/b"});

  LossWeights off = w;
  off.alpha_2d = 0;
  Tape t2;
  const LossBreakdown c = total_loss(t2, t2.leaf(pred.value()), toy.gt, toy.ctx(off));
  CHECK(c.terms.size() == 1);
  CHECK(c.value() == doctest::Approx(10.0 * c.terms[0].raw.value().item()));
}

TEST_CASE("frozen discriminators take no gradient from the total loss") {
  Toy toy;
  Rng rng(12);
  for (auto* d : {&toy.d3, &toy.da, &toy.db}) d->set_trainable(false);
  Tape t;
  Var pred = t.leaf(oracle::random(toy.s, rng));
  t.backward(total_loss(t, pred, toy.gt, toy.ctx()).total);
  for (auto* d : {&toy.d3, &toy.da, &toy.db})
    for (auto* p : d->parameters()) CHECK(p->grad == Tensor(p->value.shape(), 0.0));
  CHECK(t.grad(pred).all_finite());
}

TEST_CASE("discriminator input conditioning") {
  Tape t;
  const Tensor cond(Shape{4, 4}, 0.5);
  const Var c = t.constant(Tensor(Shape{4, 4}, -0.5));
  CHECK(discriminator_input(t, c, nullptr).shape() == Shape{1, 1, 4, 4});
  const Var both = discriminator_input(t, c, &cond);
  CHECK(both.shape() == Shape{1, 2, 4, 4});
  CHECK(both.value()[0] == -0.5);
  CHECK(both.value()[16] == 0.5);
}

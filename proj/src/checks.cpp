#include "xoct/checks.hpp"

#include <algorithm>
#include <numeric>

#include "xoct/cds.hpp"
#include "xoct/nn.hpp"

namespace xoct::checks {

using ad::GradCheckOptions;
using ad::GradCheckReport;
using ad::Tape;
using ad::Var;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo, double hi) {
  Tensor t(shape);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

Var probe(const Var& y, std::uint64_t seed) {
  Rng rng(seed);
  Tensor r = random_tensor(y.shape(), rng);
  return ad::sum(y * y.tape().constant(std::move(r)));
}

namespace {

// Magnitudes in [0.1, 1) with random sign: keeps |x| and leaky_relu off their kinks.
Tensor off_kink(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (double& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Distinct values spaced 0.01 apart so max has a unique argmax per window.
Tensor spaced(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::vector<std::size_t> perm(t.numel());
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = 0.01 * static_cast<double>(perm[i]) - 0.3;
  return t;
}

using Build = std::function<Var(Tape&, std::span<const Var>)>;

GradCase leaf_case(std::string name, std::vector<Tensor> inputs, Build f, std::uint64_t seed) {
  return {name, [inputs = std::move(inputs), f = std::move(f), seed](const GradCheckOptions& o) {
            return ad::grad_check(
                [&](Tape& t, std::span<const Var> x) { return probe(f(t, x), seed); }, inputs, o);
          }};
}

ConvSpec spec(Triple k, Triple s, Triple p, std::size_t groups = 1) {
  ConvSpec c;
  c.kernel = k;
  c.stride = s;
  c.pad = p;
  c.groups = groups;
  return c;
}

GradCase conv_case(const std::string& label, std::size_t cin, std::size_t cout, Triple in,
                   const ConvSpec& cs, Rng& rng) {
  const Shape xs{1, cin, in[0], in[1], in[2]};
  const Shape ws{cout, cin / cs.groups, cs.kernel[0], cs.kernel[1], cs.kernel[2]};
  return leaf_case("conv3d " + label,
                   {random_tensor(xs, rng), random_tensor(ws, rng), random_tensor(Shape{cout}, rng)},
                   [cs](Tape&, std::span<const Var> v) { return ad::conv3d(v[0], v[1], v[2], cs); },
                   rng.next());
}

}  // namespace

std::vector<GradCase> gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> c;
  const Shape s5{2, 2, 3, 3, 2};

  c.push_back(conv_case("3x3x3", 2, 3, {4, 4, 4}, spec({3, 3, 3}, {1, 1, 1}, {1, 1, 1}), rng));
  c.push_back(conv_case("3x1x1", 2, 2, {4, 3, 3}, spec({3, 1, 1}, {1, 1, 1}, {1, 0, 0}), rng));
  c.push_back(conv_case("1x3x1", 2, 2, {3, 4, 3}, spec({1, 3, 1}, {1, 1, 1}, {0, 1, 0}), rng));
  c.push_back(conv_case("1x1x3", 2, 2, {3, 3, 4}, spec({1, 1, 3}, {1, 1, 1}, {0, 0, 1}), rng));
  c.push_back(conv_case("5x5x5 depthwise", 2, 2, {5, 5, 5}, spec({5, 5, 5}, {1, 1, 1}, {2, 2, 2}, 2), rng));
  c.push_back(conv_case("stride 2", 2, 2, {5, 5, 5}, spec({3, 3, 3}, {2, 2, 2}, {1, 1, 1}), rng));
  c.push_back(conv_case("1x1x1", 3, 2, {2, 3, 3}, spec({1, 1, 1}, {1, 1, 1}, {0, 0, 0}), rng));

  c.push_back(leaf_case("upsample_nearest3d", {random_tensor(Shape{1, 2, 2, 2, 3}, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::upsample_nearest3d(v[0], {2, 2, 2});
                        },
                        rng.next()));
  c.push_back(leaf_case("pad3d", {random_tensor(Shape{1, 1, 2, 3, 2}, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::pad3d(v[0], {1, 0, 2}, {0, 1, 1});
                        },
                        rng.next()));
  c.push_back(leaf_case("slice", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::slice(v[0], {{0, 2}, {1, 2}, {0, 2}, {1, 3}, {0, 1}});
                        },
                        rng.next()));
  c.push_back(leaf_case("concat_channels",
                        {random_tensor(Shape{2, 1, 2, 2, 2}, rng), random_tensor(Shape{2, 3, 2, 2, 2}, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::concat_channels({v[0], v[1]}); },
                        rng.next()));
  c.push_back(leaf_case("reshape", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::reshape(v[0], Shape{4, 18}); },
                        rng.next()));
  c.push_back(leaf_case("reduce sum", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::reduce(v[0], {1, 3}, ReduceKind::Sum);
                        },
                        rng.next()));
  c.push_back(leaf_case("reduce mean", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::reduce(v[0], {2, 3, 4}, ReduceKind::Mean, true);
                        },
                        rng.next()));
  c.push_back(leaf_case("reduce max", {spaced(s5, rng)},
                        [](Tape&, std::span<const Var> v) {
                          return ad::reduce(v[0], {0, 4}, ReduceKind::Max);
                        },
                        rng.next()));
  c.push_back(leaf_case("neg", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::neg(v[0]); }, rng.next()));
  c.push_back(leaf_case("abs", {off_kink(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::abs(v[0]); }, rng.next()));
  c.push_back(leaf_case("exp", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::exp(v[0]); }, rng.next()));
  c.push_back(leaf_case("log", {random_tensor(s5, rng, 0.2, 2.0)},
                        [](Tape&, std::span<const Var> v) { return ad::log(v[0]); }, rng.next()));
  c.push_back(leaf_case("sigmoid", {random_tensor(s5, rng, -3.0, 3.0)},
                        [](Tape&, std::span<const Var> v) { return ad::sigmoid(v[0]); }, rng.next()));
  c.push_back(leaf_case("tanh", {random_tensor(s5, rng, -2.0, 2.0)},
                        [](Tape&, std::span<const Var> v) { return ad::tanh(v[0]); }, rng.next()));
  c.push_back(leaf_case("leaky_relu", {off_kink(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::leaky_relu(v[0], 0.2); },
                        rng.next()));
  c.push_back(leaf_case("log_sigmoid", {random_tensor(s5, rng, -4.0, 4.0)},
                        [](Tape&, std::span<const Var> v) { return ad::log_sigmoid(v[0]); },
                        rng.next()));
  const Shape bs{2, 1, 3, 1, 2};
  c.push_back(leaf_case("add", {random_tensor(s5, rng), random_tensor(bs, rng)},
                        [](Tape&, std::span<const Var> v) { return v[0] + v[1]; }, rng.next()));
  c.push_back(leaf_case("sub", {random_tensor(bs, rng), random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return v[0] - v[1]; }, rng.next()));
  c.push_back(leaf_case("mul", {random_tensor(s5, rng), random_tensor(bs, rng)},
                        [](Tape&, std::span<const Var> v) { return v[0] * v[1]; }, rng.next()));
  c.push_back(leaf_case("div", {random_tensor(s5, rng), random_tensor(bs, rng, 0.5, 2.0)},
                        [](Tape&, std::span<const Var> v) { return v[0] / v[1]; }, rng.next()));
  c.push_back(leaf_case("scale", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::scale(v[0], -2.5); },
                        rng.next()));
  c.push_back(leaf_case("add_scalar", {random_tensor(s5, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::add_scalar(v[0], 0.75); },
                        rng.next()));
  c.push_back(leaf_case("instance_norm", {random_tensor(Shape{2, 2, 2, 3, 3}, rng)},
                        [](Tape&, std::span<const Var> v) { return ad::instance_norm(v[0]); },
                        rng.next()));

  // Projection with one empty column, soft weights elsewhere.
  {
    Tensor mask(Shape{4, 3, 3});
    for (std::size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    for (std::size_t z = 0; z < 4; ++z) mask[z * 9 + 4] = 0.0;
    mask[0] = 1.0;
    c.push_back(leaf_case("enface_projection", {random_tensor(Shape{4, 3, 3}, rng)},
                          [mask](Tape&, std::span<const Var> v) {
                            return cds::enface_projection(v[0], mask);
                          },
                          rng.next()));
  }
  c.push_back({"l1_loss", [a = random_tensor(Shape{3, 4}, rng), b = random_tensor(Shape{3, 4}, rng)](
                              const GradCheckOptions& o) {
                 return ad::grad_check(
                     [](Tape&, std::span<const Var> v) { return cds::l1_loss(v[0], v[1]); }, {a, b}, o);
               }});
  c.push_back({"adversarial_losses",
               [r = random_tensor(Shape{1, 1, 3, 3}, rng, -2, 2),
                f = random_tensor(Shape{1, 1, 3, 3}, rng, -2, 2)](const GradCheckOptions& o) {
                 return ad::grad_check(
                     [](Tape&, std::span<const Var> v) {
                       auto adv = cds::adversarial_losses(v[0], v[1]);
                       return adv.d_loss + ad::scale(adv.g_loss, 0.7);
                     },
                     {r, f}, o);
               }});
  c.push_back({"perceptual_loss",
               [a = random_tensor(Shape{8, 8}, rng), b = random_tensor(Shape{8, 8}, rng)](
                   const GradCheckOptions& o) {
                 static const nn::PerceptualNet net;
                 return ad::grad_check(
                     [](Tape&, std::span<const Var> v) { return cds::perceptual_loss(net, v[0], v[1]); },
                     {a, b}, o);
               }});

  // Network blocks, checked through their parameters.
  c.push_back({"msff_block", [seed = rng.next()](const GradCheckOptions& o) {
                 Rng r(seed);
                 auto block = std::make_shared<nn::MsffBlock>("t", 2, 3, nn::MsffOptions{}, r);
                 const Tensor x = random_tensor(Shape{1, 2, 5, 5, 5}, r);
                 const std::uint64_t ps = r.next();
                 auto params = block->parameters();
                 return ad::grad_check_params(
                     [&](Tape& t) { return probe(block->forward(t, t.constant(x)), ps); }, params, o);
               }});
  c.push_back({"dense_block", [seed = rng.next()](const GradCheckOptions& o) {
                 Rng r(seed);
                 nn::DenseBlock block("t", 2, 2, r);
                 const Tensor x = random_tensor(Shape{1, 2, 3, 3, 3}, r);
                 const std::uint64_t ps = r.next();
                 auto params = block.parameters();
                 return ad::grad_check_params(
                     [&](Tape& t) { return probe(block.forward(t, t.constant(x)), ps); }, params, o);
               }});
  c.push_back({"patch_discriminator", [seed = rng.next()](const GradCheckOptions& o) {
                 Rng r(seed);
                 nn::PatchDiscriminator d("t", 2, 1, 2, 2, r.next());
                 const Tensor x = random_tensor(Shape{1, 1, 16, 16}, r);
                 const std::uint64_t ps = r.next();
                 auto params = d.parameters();
                 return ad::grad_check_params(
                     [&](Tape& t) { return probe(d.forward(t, t.constant(x)), ps); }, params, o);
               }});

  // Composite L = L3D + L2D on a toy 8x8x8 volume, w.r.t. generator parameters.
  c.push_back({"total_loss", [seed = rng.next()](const GradCheckOptions& o) {
                 Rng r(seed);
                 nn::ArchConfig arch;
                 arch.depth = 1;
                 arch.base_width = 2;
                 nn::Generator gen(arch, r.next());
                 nn::PatchDiscriminator d3("d3", 3, 1, 2, 1, r.next());
                 nn::PatchDiscriminator da("da", 2, 1, 2, 1, r.next());
                 nn::PatchDiscriminator db("db", 2, 1, 2, 1, r.next());
                 const nn::PerceptualNet net;
                 const Tensor x = random_tensor(Shape{1, 1, 8, 8, 8}, r);
                 const Tensor gt = random_tensor(Shape{8, 8, 8}, r);
                 Tensor m1(Shape{8, 8, 8}), m2(Shape{8, 8, 8});
                 std::fill(m1.ptr() + 64, m1.ptr() + 4 * 64, 1.0);
                 std::fill(m2.ptr() + 4 * 64, m2.ptr() + 7 * 64, 1.0);
                 const cds::SegmentationSet seg({{"a", m1}, {"b", m2}});
                 nn::PatchDiscriminator* const discs[] = {&da, &db};
                 auto params = gen.parameters();
                 return ad::grad_check_params(
                     [&](Tape& t) {
                       Var y = ad::reshape(gen.forward(t, t.constant(x)), Shape{8, 8, 8});
                       cds::LossContext ctx;
                       ctx.seg = &seg;
                       ctx.discs_2d = discs;
                       ctx.disc_3d = &d3;
                       ctx.perceptual = &net;
                       return cds::total_loss(t, y, gt, ctx).total;
                     },
                     params, o);
               }});
  return c;
}

}  // namespace xoct::checks

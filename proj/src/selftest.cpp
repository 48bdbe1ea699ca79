#include <chrono>
#include <cmath>

#include "xoct/checks.hpp"
#include "xoct/harness.hpp"

namespace xoct::harness {

namespace {

using checks::random_tensor;

// Direct seven-loop cross-correlation, kept deliberately naive.
Tensor direct_conv(const Tensor& x, const Tensor& w, const Tensor& b, const ConvSpec& s) {
  const std::size_t B = x.dim(0), O = w.dim(0), cg = w.dim(1);
  const std::size_t og = O / s.groups;
  const std::size_t in[3] = {x.dim(2), x.dim(3), x.dim(4)};
  std::size_t out[3];
  for (std::size_t a = 0; a < 3; ++a) out[a] = (in[a] + 2 * s.pad[a] - s.kernel[a]) / s.stride[a] + 1;
  Tensor y(Shape{B, O, out[0], out[1], out[2]});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t d = 0; d < out[0]; ++d)
        for (std::size_t h = 0; h < out[1]; ++h)
          for (std::size_t v = 0; v < out[2]; ++v) {
            double acc = b.numel() ? b[o] : 0.0;
            for (std::size_t c = 0; c < cg; ++c)
              for (std::size_t i = 0; i < s.kernel[0]; ++i)
                for (std::size_t j = 0; j < s.kernel[1]; ++j)
                  for (std::size_t k = 0; k < s.kernel[2]; ++k) {
                    const long zi = long(d * s.stride[0] + i) - long(s.pad[0]);
                    const long yi = long(h * s.stride[1] + j) - long(s.pad[1]);
                    const long xi = long(v * s.stride[2] + k) - long(s.pad[2]);
                    if (zi < 0 || yi < 0 || xi < 0 || zi >= long(in[0]) || yi >= long(in[1]) ||
                        xi >= long(in[2]))
                      continue;
                    const std::size_t ci = (o / og) * cg + c;
                    acc += w.at({o, c, i, j, k}) *
                           x.at({n, ci, std::size_t(zi), std::size_t(yi), std::size_t(xi)});
                  }
            y.at({n, o, d, h, v}) = acc;
          }
  return y;
}

SelftestLine conv_oracle(std::size_t cases) {
  Rng rng(101);
  const Triple kernels[] = {{3, 3, 3}, {3, 1, 1}, {1, 3, 1}, {1, 1, 3}, {5, 5, 5}};
  double worst = 0.0;
  for (std::size_t n = 0; n < cases; ++n) {
    ConvSpec s;
    s.kernel = kernels[n % 5];
    const bool depthwise = n % 5 == 4;
    const std::size_t cin = 1 + rng.below(3);
    const std::size_t cout = depthwise ? cin : 1 + rng.below(3);
    s.groups = depthwise ? cin : 1;
    for (std::size_t a = 0; a < 3; ++a) {
      s.stride[a] = 1 + rng.below(2);
      s.pad[a] = rng.below(3);
    }
    Triple in;
    for (std::size_t a = 0; a < 3; ++a) in[a] = s.kernel[a] + rng.below(4);
    const Tensor x = random_tensor(Shape{1 + rng.below(2), cin, in[0], in[1], in[2]}, rng);
    const Tensor w = random_tensor(Shape{cout, cin / s.groups, s.kernel[0], s.kernel[1], s.kernel[2]}, rng);
    const Tensor b = random_tensor(Shape{cout}, rng);
    const Tensor got = conv3d(x, w, b, s);
    const Tensor want = direct_conv(x, w, b, s);
    for (std::size_t i = 0; i < got.numel(); ++i) worst = std::max(worst, std::fabs(got[i] - want[i]));
  }
  return {"conv3d oracle (" + std::to_string(cases) + " cases)", worst <= 1e-10,
          "max abs error " + std::to_string(worst)};
}

SelftestLine projection_properties(std::size_t pairs) {
  Rng rng(202);
  std::string failure;
  for (std::size_t n = 0; n < pairs && failure.empty(); ++n) {
    const Shape s{2 + rng.below(6), 1 + rng.below(5), 1 + rng.below(5)};
    const Tensor v1 = random_tensor(s, rng), v2 = random_tensor(s, rng);
    Tensor m1(s), m2(s);
    for (std::size_t i = 0; i < m1.numel(); ++i) {
      const double u = rng.uniform();
      m1[i] = u < 0.4 ? 1.0 : 0.0;
      m2[i] = u >= 0.4 && u < 0.7 ? 1.0 : 0.0;
    }
    Tensor mu(s);
    for (std::size_t i = 0; i < s.numel(); ++i) mu[i] = m1[i] + m2[i];
    const Tensor p1 = cds::enface_projection(v1, m1);
    const Tensor p1b = cds::enface_projection(v2, m1);
    const Tensor p2 = cds::enface_projection(v1, m2);
    const Tensor pu = cds::enface_projection(v1, mu);
    Tensor lin(s);
    for (std::size_t i = 0; i < s.numel(); ++i) lin[i] = 2.0 * v1[i] - 0.5 * v2[i];
    const Tensor pl = cds::enface_projection(lin, m1);
    const std::size_t plane = s[1] * s[2];
    for (std::size_t c = 0; c < plane && failure.empty(); ++c) {
      double n1 = 0, n2 = 0, lo = 1e300, hi = -1e300, acc = 0;
      for (std::size_t z = 0; z < s[0]; ++z) {
        const std::size_t i = z * plane + c;
        n1 += m1[i];
        n2 += m2[i];
        acc += v1[i] * m1[i];
        if (m1[i] > 0) lo = std::min(lo, v1[i]), hi = std::max(hi, v1[i]);
      }
      const double oracle = n1 > 0 ? acc / n1 : 0.0;
      if (std::fabs(p1[c] - oracle) > 1e-12) failure = "loop oracle";
      if (n1 > 0 && (p1[c] < lo - 1e-12 || p1[c] > hi + 1e-12)) failure = "bounds";
      if (std::fabs(pl[c] - (2.0 * p1[c] - 0.5 * p1b[c])) > 1e-12) failure = "linearity";
      if (n1 + n2 > 0 && std::fabs(pu[c] - (n1 * p1[c] + n2 * p2[c]) / (n1 + n2)) > 1e-12)
        failure = "partition additivity";
      if (n1 == 0 && p1[c] != 0.0) failure = "empty column value";
    }
    // Empty columns pass no gradient.
    ad::Tape t;
    Var x = t.leaf(v1);
    t.backward(ad::sum(cds::enface_projection(x, m1)));
    const Tensor g = t.grad(x);
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (m1[i] == 0.0 && g[i] != 0.0) failure = "gradient outside mask";
  }
  return {"projection properties (" + std::to_string(pairs) + " pairs)", failure.empty(), failure};
}

SelftestLine metric_identities() {
  Rng rng(303);
  const Tensor x = random_tensor(Shape{16, 16}, rng, 0.0, 255.0);
  std::string failure;
  if (metrics::mae(x, x) != 0.0) failure = "mae(x,x)";
  if (metrics::mae(Tensor(Shape{1}, 1.0), Tensor(Shape{1}, 2.0)) != 1.0) failure = "mae wrap-around";
  if (std::fabs(metrics::ssim(x, x) - 1.0) > 1e-12) failure = "ssim(x,x)";
  if (!std::isinf(metrics::psnr(x, x))) failure = "psnr(x,x)";
  Tensor y = x, z = x;
  y[0] += 4.0;
  z[0] += 4.0 / std::sqrt(2.0);
  if (std::fabs(metrics::psnr(x, z) - metrics::psnr(x, y) - 10.0 * std::log10(2.0)) > 1e-9)
    failure = "psnr halving";
  const double c1 = 40.0, c2 = 90.0, C1 = (0.01 * 255) * (0.01 * 255);
  const double closed = (2 * c1 * c2 + C1) / (c1 * c1 + c2 * c2 + C1);
  if (std::fabs(metrics::ssim(Tensor(Shape{12, 12}, c1), Tensor(Shape{12, 12}, c2)) - closed) > 1e-12)
    failure = "uniform ssim";
  return {"metric identities", failure.empty(), failure};
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.arch.depth = 1;
  cfg.arch.base_width = 4;
  cfg.arch.disc_width = 4;
  cfg.phantom.depth = 16;
  cfg.phantom.height = 16;
  cfg.phantom.width = 16;
  cfg.dataset.count = 3;
  cfg.dataset.train = 2.0 / 3.0;
  cfg.dataset.val = 1.0 / 3.0;
  cfg.dataset.test = 0.0;
  cfg.max_steps = 4;
  return cfg;
}

SelftestLine determinism() {
  std::string failure;
  data::PhantomConfig pc;
  pc.seed = 99;
  const auto a = data::synth_phantom(pc), b = data::synth_phantom(pc);
  if (!(a.oct == b.oct) || !(a.octa == b.octa)) failure = "phantom";
  if (!(data::decode_volume(data::encode_volume(a.oct)) == a.oct)) failure = "xvol round trip";

  const TrainConfig cfg = tiny_config();
  Trainer t1(cfg), t2(cfg);
  t1.run({});
  t2.run({});
  const std::string c1 = ad::encode_checkpoint(t1.checkpoint());
  if (c1 != ad::encode_checkpoint(t2.checkpoint())) failure = "same-seed checkpoints";

  Trainer half(cfg);
  half.next_step();
  half.next_step();
  Trainer resumed(cfg);
  resumed.restore(ad::decode_checkpoint(ad::encode_checkpoint(half.checkpoint())));
  resumed.run({});
  if (ad::encode_checkpoint(resumed.checkpoint()) != c1) failure = "resume";
  return {"determinism and resume", failure.empty(), failure};
}

}  // namespace

std::vector<SelftestLine> selftest(const SelftestOptions& opt, std::ostream* progress) {
  std::vector<SelftestLine> out;
  auto note = [&](const SelftestLine& l) {
    if (progress) *progress << (l.pass ? "  ok   " : "  FAIL ") << l.name << "\n";
    out.push_back(l);
  };
  auto guarded = [&](const std::string& name, auto&& fn) {
    try {
      note(fn());
    } catch (const std::exception& e) {
      note({name, false, std::string("threw: ") + e.what()});
    }
  };

  guarded("conv3d oracle", [] { return conv_oracle(40); });

  ad::testing::corrupt_backward(opt.corrupt_op);
  for (const auto& c : checks::gradient_cases()) {
    guarded("grad " + c.name, [&] {
      ad::GradCheckOptions o;
      o.max_coords = 24;
      const auto r = c.run(o);
      char detail[160];
      std::snprintf(detail, sizeof detail, "max rel error %.3g at %s (%zu coords)", r.max_rel_error,
                    r.worst.c_str(), r.checked);
      return SelftestLine{"grad " + c.name, r.pass, detail};
    });
  }
  ad::testing::corrupt_backward("");

  guarded("projection properties", [] { return projection_properties(50); });
  guarded("metric identities", [] { return metric_identities(); });
  guarded("determinism and resume", [] { return determinism(); });
  return out;
}

}  // namespace xoct::harness

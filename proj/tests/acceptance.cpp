// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <type_traits>

#include "oracles.hpp"
#include "xoct/binary_io.hpp"
#include "xoct/checks.hpp"
#include "xoct/harness.hpp"

using namespace xoct;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Line {
  int id;
  std::string name;
  bool pass;
  std::string detail;
};

std::vector<Line> results;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  results.push_back({id, name, pass, detail});
  std::printf("%s %d %s: %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
  std::fflush(stdout);
}

template <typename F>
void criterion(int id, const std::string& name, F&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    report(id, name, false, std::string("threw: ") + e.what());
  }
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

void conv_equivalence() {
  const auto t0 = Clock::now();
  Rng rng(20240101);
  const Triple kernels[] = {{3, 3, 3}, {3, 1, 1}, {1, 3, 1}, {1, 1, 3}, {5, 5, 5}};
  double worst = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 0; n < 200; ++n) {
    // Cycle through kernel x stride x padding so every combination appears.
    ConvSpec s;
    s.kernel = kernels[n % 5];
    const std::size_t stride = 1 + (n / 5) % 2, pad = (n / 10) % 3;
    for (std::size_t a = 0; a < 3; ++a) {
      s.stride[a] = n % 7 == 0 ? 1 + rng.below(2) : stride;
      s.pad[a] = n % 11 == 0 ? rng.below(3) : pad;
    }
    const bool depthwise = n % 5 == 4;
    const std::size_t cin = depthwise ? 2 + rng.below(3) : 1 + rng.below(4);
    const std::size_t cout = depthwise ? cin : 1 + rng.below(4);
    s.groups = depthwise ? cin : 1;
    const Tensor x = oracle::random(Shape{1 + rng.below(2), cin, s.kernel[0] + rng.below(5),
                                          s.kernel[1] + rng.below(5), s.kernel[2] + rng.below(5)},
                                    rng);
    const Tensor w = oracle::random(Shape{cout, cin / s.groups, s.kernel[0], s.kernel[1], s.kernel[2]}, rng);
    const Tensor b = oracle::random(Shape{cout}, rng);
    const Tensor got = conv3d(x, w, b, s);
    const Tensor want = oracle::conv3d(x, w, &b, s);
    if (!(got.shape() == want.shape())) {
      worst = INFINITY;
      break;
    }
    worst = std::max(worst, oracle::max_abs_diff(got, want));
    ++cases;
  }
  const double t = seconds_since(t0);
  report(1, "conv3d oracle equivalence", cases == 200 && worst <= 1e-10 && t < 60.0,
         fmt("%zu cases, max abs error %.3g (tol 1e-10), %.1f s (limit 60 s)", cases, worst, t));
}

void gradient_correctness() {
  const auto t0 = Clock::now();
  ad::GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.tol = 1e-4;
  opt.max_coords = 0;  // every coordinate
  std::size_t n = 0, coords = 0;
  double worst = 0.0;
  std::string worst_name, failed;
  for (const auto& c : checks::gradient_cases()) {
    const auto r = c.run(opt);
    ++n;
    coords += r.checked;
    if (r.max_rel_error > worst) worst = r.max_rel_error, worst_name = c.name + " " + r.worst;
    if (!r.pass) failed += (failed.empty() ? "" : ", ") + c.name;
  }
  const double t = seconds_since(t0);
  report(2, "finite-difference gradients", failed.empty() && t < 120.0,
         fmt("%zu cases, %zu coords, max rel error %.3g at %s (tol 1e-4), %.1f s (limit 120 s)%s", n,
             coords, worst, worst_name.c_str(), t, failed.empty() ? "" : ("; failed: " + failed).c_str()));
}

void projection_suite() {
  Rng rng(777);
  std::string failure;
  double worst = 0.0;
  for (std::size_t n = 0; n < 100 && failure.empty(); ++n) {
    const Shape s{2 + rng.below(7), 1 + rng.below(6), 1 + rng.below(6)};
    const Tensor v1 = oracle::random(s, rng), v2 = oracle::random(s, rng);
    Tensor m1(s), m2(s), mu(s), lin(s);
    for (std::size_t i = 0; i < s.numel(); ++i) {
      const double u = rng.uniform();
      m1[i] = u < 0.35 ? 1.0 : 0.0;
      m2[i] = u >= 0.35 && u < 0.7 ? 1.0 : 0.0;
      mu[i] = m1[i] + m2[i];
      lin[i] = 1.5 * v1[i] - 0.25 * v2[i];
    }
    // Force one empty column so the zero-mass branch is always exercised.
    for (std::size_t z = 0; z < s[0]; ++z) m1[z * s[1] * s[2]] = 0.0, mu[z * s[1] * s[2]] = m2[z * s[1] * s[2]];

    const Tensor p1 = cds::enface_projection(v1, m1), p2 = cds::enface_projection(v1, m2);
    const Tensor q1 = cds::enface_projection(v2, m1), pu = cds::enface_projection(v1, mu);
    const Tensor pl = cds::enface_projection(lin, m1);
    const Tensor ref = oracle::projection(v1, m1);
    worst = std::max(worst, oracle::max_abs_diff(p1, ref));
    if (worst > 1e-12) failure = "loop oracle";
    const std::size_t plane = s[1] * s[2];
    for (std::size_t c = 0; c < plane && failure.empty(); ++c) {
      double n1 = 0, n2 = 0, lo = INFINITY, hi = -INFINITY;
      for (std::size_t z = 0; z < s[0]; ++z) {
        const std::size_t i = z * plane + c;
        n1 += m1[i];
        n2 += m2[i];
        if (m1[i] > 0) lo = std::min(lo, v1[i]), hi = std::max(hi, v1[i]);
      }
      if (n1 > 0 && (p1[c] < lo - 1e-12 || p1[c] > hi + 1e-12)) failure = "bounds";
      if (std::fabs(pl[c] - (1.5 * p1[c] - 0.25 * q1[c])) > 1e-12) failure = "linearity";
      if (n1 + n2 > 0 && std::fabs(pu[c] * (n1 + n2) - (n1 * p1[c] + n2 * p2[c])) > 1e-12 * (n1 + n2))
        failure = "partition additivity";
      if (n1 == 0 && p1[c] != 0.0) failure = "empty column value";
    }
    ad::Tape tape;
    const ad::Var x = tape.leaf(v1);
    tape.backward(checks::probe(cds::enface_projection(x, m1), n));
    const Tensor g = tape.grad(x);
    for (std::size_t c = 0; c < plane && failure.empty(); ++c) {
      double n1 = 0;
      for (std::size_t z = 0; z < s[0]; ++z) n1 += m1[z * plane + c];
      for (std::size_t z = 0; z < s[0]; ++z) {
        const std::size_t i = z * plane + c;
        if ((n1 == 0 || m1[i] == 0) && g[i] != 0.0) failure = "gradient outside mask / empty column";
      }
    }
  }
  report(3, "projection property suite", failure.empty(),
         fmt("100 pairs, oracle max abs error %.3g (tol 1e-12)%s", worst,
             failure.empty() ? "" : ("; failed: " + failure).c_str()));
}

void metric_identities() {
  Rng rng(31);
  std::string failure;
  const Tensor x = oracle::random(Shape{24, 24}, rng, 0, 255);
  if (metrics::mae(x, x) != 0.0) failure += " mae(x,x)";
  Tensor y = x, z = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double d = rng.uniform(-5, 5);
    y[i] += d;
    z[i] += d / std::sqrt(2.0);
  }
  const double step = metrics::psnr(x, z) - metrics::psnr(x, y);
  if (std::fabs(step - 10.0 * std::log10(2.0)) > 1e-9) failure += " psnr-halving";
  const double self = metrics::ssim(x, x);
  if (std::fabs(self - 1.0) > 1e-12) failure += " ssim(x,x)";
  const double C1 = (0.01 * 255) * (0.01 * 255);
  double uniform_err = 0;
  for (double a : {0.0, 50.0, 200.0})
    for (double b : {25.0, 128.0, 255.0}) {
      const double closed = (2 * a * b + C1) / (a * a + b * b + C1);
      uniform_err = std::max(uniform_err, std::fabs(metrics::ssim(Tensor(Shape{16, 16}, a), Tensor(Shape{16, 16}, b)) - closed));
    }
  if (uniform_err > 1e-12) failure += " uniform-ssim";
  const double wrap = metrics::mae(Tensor(Shape{1}, 1.0), Tensor(Shape{1}, 2.0));
  if (wrap != 1.0) failure += " uint8-wrap-around";
  report(4, "metric identities", failure.empty(),
         fmt("psnr step %.12f (want %.12f), ssim(x,x)-1 = %.2g, uniform ssim err %.2g, mae(1,2) = %g%s", step,
             10.0 * std::log10(2.0), self - 1.0, uniform_err, wrap, failure.c_str()));
}

void channel_halving() {
  nn::ArchConfig msff;
  nn::ArchConfig base = msff;
  base.msff = false;
  nn::Generator g(msff, 1), gb(base, 1);
  std::string levels;
  bool all = true;
  for (auto& [name, blk] : g.blocks()) {
    const std::size_t m = blk->param_count(), d = nn::dense_reference_count(blk->in_channels(), blk->out_channels());
    all = all && m < d;
    levels += fmt(" %s %zu<%zu%s", name.c_str(), m, d, m < d ? "" : "!");
  }
  const std::size_t pm = g.param_count(), pb = gb.param_count();
  report(5, "MSFF channel halving", all && pm < pb,
         fmt("generator %zu (+MSFF) vs %zu (baseline);%s", pm, pb, levels.c_str()));
}

// Criteria 6 and 7 share the +CDS run.
struct RunSummary {
  double l1_init = 0, l1_final = 0;
  double ssim_init = 0, ssim_final = 0;
  std::map<std::string, double> proj_l1;
  double seconds = 0;
};

RunSummary train_run(bool cds) {
  harness::TrainConfig cfg;  // full configuration, 16x32x32 phantoms, 8 train / 2 val
  cfg.max_steps = 300;
  cfg.cds = cds;
  const auto val = harness::load_split(cfg, data::Split::Val);
  RunSummary s;
  const auto t0 = Clock::now();
  harness::Trainer trainer(cfg);
  s.l1_init = harness::volumetric_l1(trainer.generator(), val);
  s.ssim_init = harness::evaluate(trainer.generator(), val, cfg.layers).mean("proj_full", "ssim").value;
  trainer.run({});
  s.l1_final = harness::volumetric_l1(trainer.generator(), val);
  s.ssim_final = harness::evaluate(trainer.generator(), val, cfg.layers).mean("proj_full", "ssim").value;
  s.proj_l1 = harness::projection_l1(trainer.generator(), val, cfg.layers);
  s.seconds = seconds_since(t0);
  return s;
}

RunSummary with_cds;

void learnability() {
  harness::TrainConfig cfg;
  const auto train = data::Dataset::make(cfg.dataset).split(data::Split::Train).size();
  with_cds = train_run(true);
  const auto& s = with_cds;
  const double drop = 1.0 - s.l1_final / s.l1_init;
  report(6, "end-to-end learnability",
         train == 8 && drop >= 0.30 && s.ssim_final > s.ssim_init && s.seconds < 600.0,
         fmt("%zu train phantoms, val L1 %.4f -> %.4f (%.1f%% drop, need >= 30%%), val proj_full SSIM "
             "%.4f -> %.4f, %.0f s (limit 600 s)",
             train, s.l1_init, s.l1_final, 100 * drop, s.ssim_init, s.ssim_final, s.seconds));
}

void cds_mechanism() {
  const RunSummary base = train_run(false);
  bool ok = !with_cds.proj_l1.empty();
  std::string detail;
  for (const auto& [layer, v] : with_cds.proj_l1) {
    const double b = base.proj_l1.at(layer);
    ok = ok && v <= b;
    detail += fmt("%s%s %.5f (+CDS) vs %.5f (no CDS)", detail.empty() ? "" : ", ", layer.c_str(), v, b);
  }
  report(7, "layer supervision improves projections", ok, "step-300 val projection L1: " + detail);
}

void determinism() {
  harness::TrainConfig cfg;
  cfg.arch.depth = 2;
  cfg.arch.base_width = 8;
  cfg.max_steps = 10;
  std::string failure;

  harness::Trainer a(cfg), b(cfg);
  a.run({});
  b.run({});
  const std::string ca = ad::encode_checkpoint(a.checkpoint());
  if (ca != ad::encode_checkpoint(b.checkpoint())) failure += " same-seed";

  const fs::path dir = fs::temp_directory_path() / "xoct_acceptance";
  fs::create_directories(dir);
  harness::Trainer half(cfg);
  for (int i = 0; i < 4; ++i) half.next_step();
  ad::save_checkpoint((dir / "half.xckp").string(), half.checkpoint());
  harness::Trainer resumed(cfg);
  resumed.restore(ad::load_checkpoint((dir / "half.xckp").string()));
  resumed.run({});
  if (ad::encode_checkpoint(resumed.checkpoint()) != ca) failure += " resume";

  const auto pair = data::synth_phantom(cfg.phantom);
  for (const Tensor* t : {&pair.oct, &pair.octa}) {
    const std::string bytes = data::encode_volume(*t);
    data::save_volume((dir / "v.xvol").string(), *t);
    const std::string disk = io::read_file((dir / "v.xvol").string());
    const Tensor back = data::load_volume((dir / "v.xvol").string());
    if (disk != bytes || data::encode_volume(back) != bytes || !(back == *t)) failure += " xvol";
  }
  fs::remove_all(dir);
  report(8, "determinism and persistence", failure.empty(),
         fmt("step-10 checkpoint %zu bytes; same seed, 4+6 resume and XVOL round trips compared bytewise%s",
             ca.size(), failure.c_str()));
}

void inference_contract() {
  // The signature takes a checkpoint and an OCT volume, nothing else.
  static_assert(std::is_same_v<decltype(static_cast<Tensor (*)(const ad::Checkpoint&, const Tensor&)>(
                                   &harness::translate)),
                               Tensor (*)(const ad::Checkpoint&, const Tensor&)>);
  harness::TrainConfig cfg;
  cfg.arch.depth = 2;
  cfg.arch.base_width = 8;
  cfg.max_steps = 2;
  harness::Trainer t(cfg);
  t.run({});

  // A volume on disk with no segmentation anywhere near it.
  const fs::path dir = fs::temp_directory_path() / "xoct_inference";
  fs::remove_all(dir);
  fs::create_directories(dir);
  data::PhantomConfig pc;
  pc.seed = 4242;
  data::save_volume((dir / "oct.xvol").string(), data::synth_phantom(pc).oct);
  ad::save_checkpoint((dir / "model.xckp").string(), t.checkpoint());
  std::size_t files = 0;
  for (auto& e : fs::directory_iterator(dir)) files += e.is_regular_file();

  const Tensor oct = data::load_volume((dir / "oct.xvol").string());
  const Tensor y = harness::translate(ad::load_checkpoint((dir / "model.xckp").string()), oct);
  bool in_range = true;
  for (double v : y.data()) in_range = in_range && v >= -1.0 && v <= 1.0;
  fs::remove_all(dir);
  report(9, "translation needs no segmentation", files == 2 && y.shape() == oct.shape() && in_range,
         "translated " + oct.shape().str() + " from a directory holding only the OCT volume and the checkpoint");
}

}  // namespace

int main() {
  criterion(1, "conv3d oracle equivalence", conv_equivalence);
  criterion(2, "finite-difference gradients", gradient_correctness);
  criterion(3, "projection property suite", projection_suite);
  criterion(4, "metric identities", metric_identities);
  criterion(5, "MSFF channel halving", channel_halving);
  criterion(6, "end-to-end learnability", learnability);
  criterion(7, "layer supervision improves projections", cds_mechanism);
  criterion(8, "determinism and persistence", determinism);
  criterion(9, "translation needs no segmentation", inference_contract);
  std::size_t failed = 0;
  for (const auto& l : results) failed += !l.pass;
  std::printf("%zu/%zu criteria passed\n", results.size() - failed, results.size());
  return failed == 0 && results.size() == 9 ? 0 : 1;
}

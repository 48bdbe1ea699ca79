#include <cmath>

#include "doctest.h"
#include "xoct/harness.hpp"

using namespace xoct;
using namespace xoct::harness;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  c.arch.depth = 1;
  c.arch.base_width = 4;
  c.arch.disc_width = 4;
  c.phantom.depth = 16;
  c.phantom.height = 16;
  c.phantom.width = 16;
  c.dataset.count = 3;
  c.dataset.train = 2.0 / 3.0;
  c.dataset.val = 1.0 / 3.0;
  c.dataset.test = 0.0;
  return c;
}

}  // namespace

TEST_CASE("config text round trip") {
  TrainConfig c = tiny();
  c.set("lr", "0.0003");
  c.set("layers", "OPL-BM");
  c.set("cds", "false");
  c.set("noise", "0.05");
  const TrainConfig d = TrainConfig::parse(c.to_text());
  CHECK(d.to_text() == c.to_text());
  CHECK(d.optim.learning_rate == 0.0003);
  CHECK(d.layers == std::vector<std::string>{"OPL-BM"});
  CHECK_FALSE(d.cds);
  for (const auto& k : TrainConfig::keys()) {
    CAPTURE(k);
    CHECK(d.get(k) == c.get(k));
    CHECK_FALSE(TrainConfig::describe(k).empty());
  }
}

TEST_CASE("config errors name the key and line") {
  CHECK_THROWS_AS(TrainConfig::parse("epochs = 2\nbogus = 1\n"), ConfigError);
  try {
    TrainConfig::parse("# comment\nepochs = 2\nbatch_size = x\n");
    FAIL("no error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(TrainConfig::parse("epochs\n"), ConfigError);
  TrainConfig c;
  c.set("epochs", "0");
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(c.set("cds", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set("batch_size", "-1"), ConfigError);
  c = tiny();
  c.layers = {"GCL"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = tiny();
  c.arch.depth = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("later settings override earlier ones") {
  // The CLI applies the config file first and flags after it.
  TrainConfig c = TrainConfig::parse("epochs = 3\nseed = 4\n");
  c.set("epochs", "9");
  CHECK(c.epochs == 9);
  CHECK(c.seed == 4);
}

TEST_CASE("defaults follow the training recipe") {
  const TrainConfig c;
  CHECK(c.optim.learning_rate == 1e-4);
  CHECK(c.batch_size == 1);
  CHECK(c.weights.alpha_3d == 10.0);
  CHECK(c.weights.beta_3d == 1.0);
  CHECK(c.weights.gamma_2d == 1.0);
  CHECK(c.steps_per_epoch() == 8);
  CHECK(c.total_steps() == 160);
  TrainConfig off = c;
  off.cds = false;
  CHECK(off.effective_weights().alpha_2d == 0.0);
  CHECK(off.effective_weights().beta_2d == 0.0);
  CHECK(off.effective_weights().gamma_2d == 0.0);
  CHECK(off.effective_weights().alpha_3d == 10.0);
}

TEST_CASE("ablations switch msff and cds") {
  std::map<std::string, std::size_t> gen;
  for (const char* name : {"baseline", "cds", "msff", "full"}) {
    // Default widths: at width 4 the MSFF branches cost more than they save.
    TrainConfig c = tiny();
    c.arch = nn::ArchConfig{};
    apply_ablation(c, name);
    Trainer t(c);
    const ParamCounts p = param_counts(t);
    gen[name] = p.generator;
    CHECK(p.disc_3d > 0);
    CHECK((p.disc_2d > 0) == c.cds);
    CHECK(t.discs_2d().size() == (c.cds ? 2u : 0u));
  }
  CHECK(gen["baseline"] == gen["cds"]);
  CHECK(gen["msff"] == gen["full"]);
  CHECK(gen["msff"] < gen["baseline"]);
  TrainConfig c;
  CHECK_THROWS_AS(apply_ablation(c, "half"), ConfigError);
}

TEST_CASE("a training step reports every loss term") {
  Trainer t(tiny());
  const StepResult r = t.next_step();
  CHECK(r.step == 1);
  CHECK(r.samples.size() == 1);
  for (const char* n : {"l1_3d", "adv_3d", "l1_2d/ILM-OPL", "adv_2d/ILM-OPL", "perp_2d/ILM-OPL",
                        "l1_2d/OPL-BM", "adv_2d/OPL-BM", "perp_2d/OPL-BM", "total", "d_3d",
                        "d_2d/ILM-OPL", "d_2d/OPL-BM"}) {
    CAPTURE(n);
    CHECK(std::isfinite(r.term(n)));
  }
  CHECK_THROWS(r.term("nope"));
  CHECK(r.log_line().find("step=1 ") == 0);
  CHECK(t.running().at("l1_3d").second == 1);
}

TEST_CASE("with L1 only, training overfits a single phantom") {
  TrainConfig c = tiny();
  c.dataset.count = 1;
  c.dataset.train = 1.0;
  c.dataset.val = 0.0;
  c.weights.beta_3d = 0;
  c.weights.beta_2d = 0;
  c.weights.gamma_2d = 0;
  c.optim.learning_rate = 1e-3;
  c.max_steps = 50;
  Trainer t(c);
  std::vector<double> l1;
  t.run([&](const StepResult& r) { l1.push_back(r.term("l1_3d")); });
  REQUIRE(l1.size() == 50);
  CHECK(l1.back() < l1.front());
  CHECK(l1.back() < 0.9 * l1.front());
  for (const auto& [name, v] : t.next_step().terms)
    CHECK((name.rfind("adv", 0) != 0 && name.rfind("perp", 0) != 0));
}

TEST_CASE("schedule is a permutation per epoch") {
  TrainConfig c = tiny();
  c.dataset.count = 6;
  c.dataset.train = 5.0 / 6.0;
  c.dataset.val = 1.0 / 6.0;
  c.batch_size = 2;
  Trainer t(c);
  CHECK(c.steps_per_epoch() == 3);
  std::vector<int> seen(5, 0);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i : t.schedule(s)) seen[i] += 1;
  for (std::size_t i = 0; i < 5; ++i) CHECK(seen[i] >= 1);
  CHECK(t.schedule(0) == Trainer(c).schedule(0));
}

TEST_CASE("same seed gives identical step-10 checkpoints, and resume is exact") {
  TrainConfig c = tiny();
  c.max_steps = 10;
  Trainer a(c), b(c);
  a.run({});
  b.run({});
  const std::string bytes = ad::encode_checkpoint(a.checkpoint());
  CHECK(bytes == ad::encode_checkpoint(b.checkpoint()));

  Trainer first(c);
  for (int i = 0; i < 6; ++i) first.next_step();
  Trainer second(c);
  second.restore(ad::decode_checkpoint(ad::encode_checkpoint(first.checkpoint())));
  CHECK(second.step() == 6);
  second.run({});
  CHECK(ad::encode_checkpoint(second.checkpoint()) == bytes);

  TrainConfig other = c;
  other.seed = 8;
  Trainer d(other);
  d.run({});
  CHECK(ad::encode_checkpoint(d.checkpoint()) != bytes);

  TrainConfig wider = c;
  wider.arch.base_width = 8;
  Trainer e(wider);
  CHECK_THROWS(e.restore(a.checkpoint()));
}

TEST_CASE("translate uses the generator alone") {
  TrainConfig c = tiny();
  c.max_steps = 1;
  Trainer t(c);
  t.run({});
  const ad::Checkpoint ckpt = t.checkpoint();
  const data::VolumePair& p = t.train_pairs()[0];
  const Tensor y = translate(ckpt, p.oct);
  CHECK(y.shape() == p.oct.shape());
  for (double v : y.data()) CHECK((v >= -1.0 && v <= 1.0));
  CHECK(translate(ckpt, p.oct) == y);
  CHECK(translate(t.generator(), p.oct) == y);
  auto g = load_generator(ckpt);
  CHECK(translate(*g, p.oct) == y);
  CHECK_THROWS_AS(translate(ckpt, Tensor(Shape{16, 16, 15})), ConfigError);
  CHECK_THROWS(translate(ad::Checkpoint{}, p.oct));
}

TEST_CASE("evaluating ground truth against itself") {
  TrainConfig c = tiny();
  const auto pairs = load_split(c, data::Split::Val);
  REQUIRE(pairs.size() == 1);
  std::vector<Tensor> preds;
  for (const auto& p : pairs) preds.push_back(p.octa);
  const metrics::MetricReport r = evaluate_predictions(preds, pairs, c.layers);
  CHECK(r.targets() == std::vector<std::string>{"3d", "proj_full", "proj_mean", "proj_ILM-OPL", "proj_OPL-BM"});
  for (const auto& t : r.targets()) {
    CAPTURE(t);
    CHECK(r.mean(t, "mae").value == 0.0);
    CHECK(r.mean(t, "ssim").value == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.mean(t, "psnr").value == metrics::kPsnrInfinite);
    CHECK(r.mean(t, "perp").value == 0.0);
  }
  CHECK_THROWS(evaluate_predictions(preds, pairs, {"GCL"}));
}

TEST_CASE("report means equal the arithmetic mean of sample records") {
  TrainConfig c = tiny();
  c.dataset.count = 4;
  c.dataset.train = 0.5;
  c.dataset.val = 0.5;
  const auto pairs = load_split(c, data::Split::Val);
  REQUIRE(pairs.size() == 2);
  Trainer t(c);
  const metrics::MetricReport r = evaluate(t.generator(), pairs, c.layers);
  for (const auto& m : r.means()) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& rec : r.samples())
      if (rec.target == m.target && rec.metric == m.metric) s += rec.value, ++n;
    CHECK(n == 2);
    CHECK(std::fabs(m.value - s / double(n)) <= 1e-12 * std::max(1.0, std::fabs(m.value)));
  }
  const double l1 = volumetric_l1(t.generator(), pairs);
  CHECK(l1 > 0.0);
  const auto pl = projection_l1(t.generator(), pairs, c.layers);
  CHECK(pl.size() == 2);
  CHECK(pl.at("OPL-BM") > 0.0);
}

TEST_CASE("selftest passes, and fails naming a corrupted op") {
  const auto lines = selftest({});
  REQUIRE_FALSE(lines.empty());
  for (const auto& l : lines) {
    CAPTURE(l.name);
    CAPTURE(l.detail);
    CHECK(l.pass);
  }
  const auto bad = selftest({"upsample_nearest3d"});
  bool named = false;
  for (const auto& l : bad)
    if (!l.pass) named = named || l.name.find("upsample_nearest3d") != std::string::npos;
  CHECK(named);
}

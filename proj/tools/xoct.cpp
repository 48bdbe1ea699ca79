// Command-line front end: synth, train, translate, project, eval, selftest.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "xoct/binary_io.hpp"
#include "xoct/cds.hpp"
#include "xoct/data.hpp"
#include "xoct/harness.hpp"
#include "xoct/metrics.hpp"

namespace fs = std::filesystem;
using namespace xoct;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kRuntime = 2;
constexpr int kSelftestFailed = 3;

struct ConfigFlags {
  std::string path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* app) {
    app->add_option("--config", path, "flat key = value config file");
    for (const auto& key : harness::TrainConfig::keys())
      app->add_option("--" + key, values[key], harness::TrainConfig::describe(key));
  }

  harness::TrainConfig build(CLI::App* app) const {
    harness::TrainConfig cfg = path.empty() ? harness::TrainConfig{} : harness::TrainConfig::load(path);
    apply(app, cfg);
    return cfg;
  }

  void apply(CLI::App* app, harness::TrainConfig& cfg) const {
    for (const auto& [key, v] : values)
      if (app->count("--" + key)) cfg.set(key, v);
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

int run_synth(CLI::App* app, const ConfigFlags& flags, const std::string& out) {
  const harness::TrainConfig cfg = flags.build(app);
  cfg.dataset.validate();
  cfg.phantom.validate();
  ensure_dir(out);
  const data::Dataset ds = data::Dataset::make(cfg.dataset);
  io::write_file(out + "/manifest.txt", ds.manifest());
  for (const auto& e : ds.entries()) {
    const data::VolumePair p = ds.load(e, cfg.phantom);
    data::save_volume(out + "/" + e.id + ".oct.xvol", p.oct);
    data::save_volume(out + "/" + e.id + ".octa.xvol", p.octa);
    for (const auto& l : p.seg.layers())
      data::save_volume(out + "/" + e.id + ".seg." + l.name + ".xvol", l.mask);
  }
  std::cout << "wrote " << ds.entries().size() << " phantoms to " << out << "\n";
  return kOk;
}

int run_train(CLI::App* app, const ConfigFlags& flags, const std::string& resume,
              const std::string& ablation) {
  harness::TrainConfig cfg;
  ad::Checkpoint initial;
  if (!resume.empty()) {
    initial = ad::load_checkpoint(resume);
    cfg = harness::TrainConfig::parse(initial.metadata);
    if (!flags.path.empty()) cfg = harness::TrainConfig::load(flags.path);
  } else if (!flags.path.empty()) {
    cfg = harness::TrainConfig::load(flags.path);
  }
  if (!ablation.empty()) harness::apply_ablation(cfg, ablation);
  flags.apply(app, cfg);
  cfg.validate();
  ensure_dir(cfg.output_dir);

  harness::Trainer trainer(cfg);
  if (!resume.empty()) trainer.restore(initial);
  const auto counts = harness::param_counts(trainer);
  std::cout << "params generator=" << counts.generator << " disc_3d=" << counts.disc_3d
            << " disc_2d=" << counts.disc_2d << "\n";
  io::write_file(cfg.output_dir + "/config.txt", cfg.to_text());

  std::ofstream log(cfg.output_dir + "/train.log", resume.empty() ? std::ios::trunc : std::ios::app);
  const auto t0 = std::chrono::steady_clock::now();
  auto save = [&](const std::string& name) {
    ad::save_checkpoint(cfg.output_dir + "/" + name, trainer.checkpoint());
  };
  trainer.run([&](const harness::StepResult& r) {
    if (r.step % cfg.log_interval == 0 || r.step == cfg.total_steps()) {
      const std::string line = r.log_line();
      log << line << "\n";
      log.flush();
      std::cout << line << "\n";
    }
    if (cfg.checkpoint_interval && r.step % cfg.checkpoint_interval == 0) {
      char name[48];
      std::snprintf(name, sizeof name, "ckpt-%06zu.xckp", r.step);
      save(name);
    }
  });
  save("final.xckp");
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "trained " << trainer.step() << " steps in " << secs << " s; checkpoint "
            << cfg.output_dir << "/final.xckp\n";
  return kOk;
}

int run_translate(const std::string& ckpt, const std::string& input, const std::string& output) {
  const ad::Checkpoint c = ad::load_checkpoint(ckpt);
  const Tensor oct = data::load_volume(input);
  data::save_volume(output, harness::translate(c, oct));
  return kOk;
}

int run_project(const std::string& volume, const std::vector<std::string>& masks,
                const std::string& out, bool model_range) {
  const Tensor vol = data::load_volume(volume);
  std::vector<cds::LayerMask> layers;
  for (const auto& m : masks) {
    const auto eq = m.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--mask expects name=path, got '" + m + "'");
    layers.push_back({m.substr(0, eq), data::load_volume(m.substr(eq + 1))});
  }
  const cds::SegmentationSet seg(std::move(layers));
  const metrics::DataRange range = model_range ? metrics::DataRange::model() : metrics::DataRange{};
  auto write = [&](const std::string& name, const Tensor& img) {
    const std::string path = out + "_" + name + ".pgm";
    data::save_image_pgm(path, metrics::to_report_range(img, range));
    std::cout << path << "\n";
  };
  write("mean", cds::proj_mean(vol));
  if (!seg.empty()) {
    write("full", cds::proj_full(vol, seg));
    for (const auto& l : seg.layers()) write(l.name, cds::enface_projection(vol, l.mask));
  }
  return kOk;
}

int run_eval(const std::string& ckpt, const std::string& split, bool samples,
             const std::string& out) {
  const ad::Checkpoint c = ad::load_checkpoint(ckpt);
  const auto report = harness::evaluate(c, data::parse_split(split));
  const std::string text = report.records_text(samples);
  if (!out.empty()) io::write_file(out, text);
  std::cout << text << "\n" << report.summary_table();
  return kOk;
}

int run_selftest(const std::string& corrupt) {
  harness::SelftestOptions opt;
  opt.corrupt_op = corrupt;
  const auto lines = harness::selftest(opt, &std::cerr);
  bool ok = true;
  for (const auto& l : lines) {
    std::cout << (l.pass ? "PASS " : "FAIL ") << l.name;
    if (!l.detail.empty()) std::cout << "  " << l.detail;
    std::cout << "\n";
    ok = ok && l.pass;
  }
  std::cout << (ok ? "selftest passed" : "selftest FAILED") << "\n";
  return ok ? kOk : kSelftestFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"OCT to OCTA translation with cross-dimensional supervision"};
  app.require_subcommand(1);

  ConfigFlags synth_flags, train_flags;
  std::string synth_out = "phantoms";
  auto* synth = app.add_subcommand("synth", "write a phantom dataset (XVOL files + manifest)");
  synth->add_option("--out", synth_out, "output directory");
  synth_flags.attach(synth);

  std::string resume, ablation;
  auto* train = app.add_subcommand("train", "train on synthetic phantoms");
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--ablation", ablation, "baseline, cds, msff or full");
  train_flags.attach(train);

  std::string ckpt, input, output;
  auto* translate = app.add_subcommand("translate", "OCT volume to OCTA volume");
  translate->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  translate->add_option("--input", input, "OCT volume (XVOL)")->required();
  translate->add_option("--output", output, "OCTA volume (XVOL)")->required();

  std::string volume, proj_out = "proj";
  std::vector<std::string> masks;
  bool report_range = false;
  auto* project = app.add_subcommand("project", "en-face projections as PGM images");
  project->add_option("--volume", volume, "volume (XVOL)")->required();
  project->add_option("--mask", masks, "layer mask as name=path.xvol (repeatable)");
  project->add_option("--out", proj_out, "output path prefix");
  project->add_flag("--report-range", report_range, "volume is already on 0-255");

  std::string eval_ckpt, split = "val", records_out;
  bool per_sample = false;
  auto* eval = app.add_subcommand("eval", "metric records for a dataset split");
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--split", split, "train, val or test");
  eval->add_flag("--samples", per_sample, "also emit per-sample records");
  eval->add_option("--records", records_out, "write records to this file");

  std::string corrupt;
  auto* self = app.add_subcommand("selftest", "run the invariant suite");
  self->add_option("--corrupt-op", corrupt, "corrupt one op's backward rule (negative control)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalid;
  }

  try {
    if (*synth) return run_synth(synth, synth_flags, synth_out);
    if (*train) return run_train(train, train_flags, resume, ablation);
    if (*translate) return run_translate(ckpt, input, output);
    if (*project) return run_project(volume, masks, proj_out, !report_range);
    if (*eval) return run_eval(eval_ckpt, split, per_sample, records_out);
    if (*self) return run_selftest(corrupt);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return kRuntime;
  }
  return kInvalid;
}

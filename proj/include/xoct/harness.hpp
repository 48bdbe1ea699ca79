#pragma once

#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "xoct/cds.hpp"
#include "xoct/data.hpp"
#include "xoct/metrics.hpp"
#include "xoct/nn.hpp"
#include "xoct/optim.hpp"

namespace xoct::harness {

using ad::Parameter;
using ad::Tape;
using ad::Var;

struct TrainConfig {
  std::size_t epochs = 20;
  /// Stop after this many steps; 0 means epochs * ceil(train / batch).
  std::size_t max_steps = 0;
  std::size_t batch_size = 1;
  ad::OptimizerConfig optim;
  cds::LossWeights weights;
  /// Layer-wise projection supervision; off zeroes every 2-D weight.
  bool cds = true;
  nn::ArchConfig arch;
  std::vector<std::string> layers{"ILM-OPL", "OPL-BM"};
  std::uint64_t seed = 7;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::size_t log_interval = 1;
  std::string output_dir = "run";
  data::DatasetConfig dataset;
  data::PhantomConfig phantom;

  void validate() const;
  cds::LossWeights effective_weights() const;
  std::size_t steps_per_epoch() const;
  std::size_t total_steps() const;

  /// Sets one key from its text form. Throws ConfigError for unknown keys or
  /// malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  /// Every key in serialisation order.
  static const std::vector<std::string>& keys();
  static std::string describe(const std::string& key);

  /// Flat `key = value` text, one key per line, '#' comments.
  std::string to_text() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
};

/// The four structural variants: baseline, cds, msff, full.
void apply_ablation(TrainConfig& cfg, const std::string& name);

struct StepResult {
  std::size_t step = 0;  // 1-based index of the finished step
  std::size_t epoch = 0;
  std::vector<std::string> samples;
  /// Named scalars: generator terms, "total", and discriminator losses
  /// ("d_3d", "d_2d/<layer>").
  std::vector<std::pair<std::string, double>> terms;

  double term(const std::string& name) const;
  /// `step=... epoch=... sample=... name=value ...`
  std::string log_line() const;
};

/// Generator, discriminators and their optimizer state; one instance per run.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  std::size_t step() const { return step_; }
  nn::Generator& generator() { return *gen_; }
  nn::PatchDiscriminator& disc_3d() { return *d3_; }
  std::vector<nn::PatchDiscriminator*> discs_2d();
  const std::vector<data::VolumePair>& train_pairs() const { return train_; }

  /// One D-then-G update on the given samples (batch_size of them).
  StepResult train_step(const std::vector<const data::VolumePair*>& batch);
  /// Next step on the deterministic schedule.
  StepResult next_step();
  /// Runs to total_steps(). on_step may be empty.
  void run(const std::function<void(const StepResult&)>& on_step);

  /// Mean of each logged term over the steps of the current epoch.
  const std::map<std::string, std::pair<double, std::size_t>>& running() const { return running_; }

  ad::Checkpoint checkpoint();
  void restore(const ad::Checkpoint& ckpt);

  /// Sample indices (into train_pairs) used by step `s` (0-based).
  std::vector<std::size_t> schedule(std::size_t s) const;

 private:
  std::vector<Parameter*> disc_params();

  TrainConfig cfg_;
  std::unique_ptr<nn::Generator> gen_;
  std::unique_ptr<nn::PatchDiscriminator> d3_;
  std::vector<std::unique_ptr<nn::PatchDiscriminator>> d2_;
  nn::PerceptualNet perceptual_;
  std::vector<data::VolumePair> train_;
  std::size_t step_ = 0;
  std::map<std::string, std::pair<double, std::size_t>> running_;
};

/// Parameter count report per network.
struct ParamCounts {
  std::size_t generator = 0;
  std::size_t disc_3d = 0;
  std::size_t disc_2d = 0;
};
ParamCounts param_counts(Trainer& t);

/// Training layers of a pair, in config order. Throws if one is missing.
cds::SegmentationSet select_layers(const cds::SegmentationSet& seg,
                                   const std::vector<std::string>& layers);

/// Generator rebuilt from a checkpoint written by Trainer.
std::unique_ptr<nn::Generator> load_generator(const ad::Checkpoint& ckpt);

/// OCT [D,H,W] to OCTA [D,H,W]. Only the generator is used; no segmentation.
Tensor translate(nn::Generator& gen, const Tensor& oct);
Tensor translate(const ad::Checkpoint& ckpt, const Tensor& oct);

/// Metrics for the 3-D volume, proj_full, proj_mean and proj_<layer>.
metrics::MetricReport evaluate_predictions(const std::vector<Tensor>& preds,
                                           const std::vector<data::VolumePair>& pairs,
                                           const std::vector<std::string>& layers);
metrics::MetricReport evaluate(nn::Generator& gen, const std::vector<data::VolumePair>& pairs,
                               const std::vector<std::string>& layers);
metrics::MetricReport evaluate(const ad::Checkpoint& ckpt, data::Split split);

/// Mean |pred - gt| over the volumes, in model units.
double volumetric_l1(nn::Generator& gen, const std::vector<data::VolumePair>& pairs);
/// Mean projection L1 per layer (model units), keyed by layer name.
std::map<std::string, double> projection_l1(nn::Generator& gen,
                                            const std::vector<data::VolumePair>& pairs,
                                            const std::vector<std::string>& layers);

/// Validation pairs of a config's dataset.
std::vector<data::VolumePair> load_split(const TrainConfig& cfg, data::Split split);

// ---------------------------------------------------------------------------
// Self-test

struct SelftestLine {
  std::string name;
  bool pass;
  std::string detail;
};

struct SelftestOptions {
  /// Name of an op whose backward rule is corrupted during the run.
  std::string corrupt_op;
};

std::vector<SelftestLine> selftest(const SelftestOptions& opt, std::ostream* progress = nullptr);

}  // namespace xoct::harness

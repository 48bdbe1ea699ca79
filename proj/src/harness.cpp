#include "xoct/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

#include "xoct/binary_io.hpp"
#include "xoct/random.hpp"

namespace xoct::harness {

namespace {

// ---------------------------------------------------------------------------
// Config keys

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const char* first = v.data();
  const char* last = v.data() + v.size();
  int base = 10;
  if (v.size() > 2 && v[0] == '0' && (v[1] == 'x' || v[1] == 'X')) {
    first += 2;
    base = 16;
  }
  auto [p, ec] = std::from_chars(first, last, out, base);
  if (v.empty() || ec != std::errc() || p != last)
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  return out;
}

double parse_f64(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("config: " + key + " expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("config: " + key + " expects true or false, got '" + v + "'");
}

std::string fmt_f64(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= v.size()) {
    const std::size_t end = std::min(v.find(',', pos), v.size());
    std::string item = trim(std::string_view(v).substr(pos, end - pos));
    if (!item.empty()) out.push_back(std::move(item));
    pos = end + 1;
  }
  return out;
}

struct Key {
  std::string name;
  std::string doc;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename T>
Key size_key(std::string name, std::string doc, T TrainConfig::*member) {
  return {name, doc,
          [name, member](TrainConfig& c, const std::string& v) {
            c.*member = static_cast<T>(parse_u64(name, v));
          },
          [member](const TrainConfig& c) { return std::to_string(c.*member); }};
}

Key size_ref(std::string name, std::string doc, std::function<std::size_t&(TrainConfig&)> ref) {
  return {name, doc,
          [name, ref](TrainConfig& c, const std::string& v) {
            ref(c) = static_cast<std::size_t>(parse_u64(name, v));
          },
          [ref](const TrainConfig& c) { return std::to_string(ref(const_cast<TrainConfig&>(c))); }};
}

Key f64_ref(std::string name, std::string doc, std::function<double&(TrainConfig&)> ref) {
  return {name, doc,
          [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_f64(name, v); },
          [ref](const TrainConfig& c) { return fmt_f64(ref(const_cast<TrainConfig&>(c))); }};
}

Key bool_ref(std::string name, std::string doc, std::function<bool&(TrainConfig&)> ref) {
  return {name, doc,
          [name, ref](TrainConfig& c, const std::string& v) { ref(c) = parse_bool(name, v); },
          [ref](const TrainConfig& c) {
            return std::string(ref(const_cast<TrainConfig&>(c)) ? "true" : "false");
          }};
}

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(size_key("epochs", "passes over the training split", &TrainConfig::epochs));
    k.push_back(size_key("max_steps", "stop after this many steps (0: epochs decide)",
                         &TrainConfig::max_steps));
    k.push_back(size_key("batch_size", "samples per update", &TrainConfig::batch_size));
    k.push_back(f64_ref("lr", "Adam learning rate",
                        [](TrainConfig& c) -> double& { return c.optim.learning_rate; }));
    k.push_back(f64_ref("adam_beta1", "Adam first-moment decay",
                        [](TrainConfig& c) -> double& { return c.optim.beta1; }));
    k.push_back(f64_ref("adam_beta2", "Adam second-moment decay",
                        [](TrainConfig& c) -> double& { return c.optim.beta2; }));
    k.push_back(f64_ref("adam_eps", "Adam epsilon",
                        [](TrainConfig& c) -> double& { return c.optim.eps; }));
    k.push_back(f64_ref("alpha_3d", "volumetric L1 weight",
                        [](TrainConfig& c) -> double& { return c.weights.alpha_3d; }));
    k.push_back(f64_ref("beta_3d", "volumetric adversarial weight",
                        [](TrainConfig& c) -> double& { return c.weights.beta_3d; }));
    k.push_back(f64_ref("alpha_2d", "projection L1 weight",
                        [](TrainConfig& c) -> double& { return c.weights.alpha_2d; }));
    k.push_back(f64_ref("beta_2d", "projection adversarial weight",
                        [](TrainConfig& c) -> double& { return c.weights.beta_2d; }));
    k.push_back(f64_ref("gamma_2d", "projection perceptual weight",
                        [](TrainConfig& c) -> double& { return c.weights.gamma_2d; }));
    k.push_back(bool_ref("cds", "layer-wise projection supervision",
                         [](TrainConfig& c) -> bool& { return c.cds; }));
    k.push_back(bool_ref("msff", "multi-scale blocks (false: dense double 3x3x3)",
                         [](TrainConfig& c) -> bool& { return c.arch.msff; }));
    k.push_back(bool_ref("reweight", "channel reweighting inside MSFF",
                         [](TrainConfig& c) -> bool& { return c.arch.reweight; }));
    k.push_back(bool_ref("residual", "residual connection inside MSFF",
                         [](TrainConfig& c) -> bool& { return c.arch.residual; }));
    k.push_back(size_ref("depth", "encoder levels",
                         [](TrainConfig& c) -> std::size_t& { return c.arch.depth; }));
    k.push_back(size_ref("base_width", "channels at the first level",
                         [](TrainConfig& c) -> std::size_t& { return c.arch.base_width; }));
    k.push_back(size_ref("disc_layers", "strided layers per discriminator",
                         [](TrainConfig& c) -> std::size_t& { return c.arch.disc_layers; }));
    k.push_back(size_ref("disc_width", "first discriminator width",
                         [](TrainConfig& c) -> std::size_t& { return c.arch.disc_width; }));
    k.push_back(bool_ref("conditional", "discriminators also see the OCT input",
                         [](TrainConfig& c) -> bool& { return c.arch.conditional; }));
    k.push_back({"layers", "comma-separated training layers",
                 [](TrainConfig& c, const std::string& v) { c.layers = split_list(v); },
                 [](const TrainConfig& c) {
                   std::string s;
                   for (const auto& l : c.layers) s += (s.empty() ? "" : ",") + l;
                   return s;
                 }});
    k.push_back({"seed", "network initialisation and shuffling seed",
                 [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
                 [](const TrainConfig& c) { return std::to_string(c.seed); }});
    k.push_back(size_key("checkpoint_interval", "steps between checkpoints (0: final only)",
                         &TrainConfig::checkpoint_interval));
    k.push_back(size_key("log_interval", "steps between log records", &TrainConfig::log_interval));
    k.push_back({"output_dir", "directory for logs and checkpoints",
                 [](TrainConfig& c, const std::string& v) { c.output_dir = v; },
                 [](const TrainConfig& c) { return c.output_dir; }});
    k.push_back(size_ref("dataset_count", "number of phantoms",
                         [](TrainConfig& c) -> std::size_t& { return c.dataset.count; }));
    k.push_back({"dataset_seed", "base seed of the phantom set",
                 [](TrainConfig& c, const std::string& v) {
                   c.dataset.base_seed = parse_u64("dataset_seed", v);
                 },
                 [](const TrainConfig& c) { return std::to_string(c.dataset.base_seed); }});
    k.push_back(f64_ref("split_train", "training fraction",
                        [](TrainConfig& c) -> double& { return c.dataset.train; }));
    k.push_back(f64_ref("split_val", "validation fraction",
                        [](TrainConfig& c) -> double& { return c.dataset.val; }));
    k.push_back(f64_ref("split_test", "test fraction",
                        [](TrainConfig& c) -> double& { return c.dataset.test; }));
    k.push_back(size_ref("vol_depth", "phantom D",
                         [](TrainConfig& c) -> std::size_t& { return c.phantom.depth; }));
    k.push_back(size_ref("vol_height", "phantom H",
                         [](TrainConfig& c) -> std::size_t& { return c.phantom.height; }));
    k.push_back(size_ref("vol_width", "phantom W",
                         [](TrainConfig& c) -> std::size_t& { return c.phantom.width; }));
    k.push_back(f64_ref("noise", "phantom speckle strength",
                        [](TrainConfig& c) -> double& { return c.phantom.noise; }));
    k.push_back(f64_ref("blur", "phantom vessel imprint blur (voxels)",
                        [](TrainConfig& c) -> double& { return c.phantom.blur; }));
    return k;
  }();
  return table;
}

const Key& find_key(const std::string& name) {
  for (const auto& k : key_table())
    if (k.name == name) return k;
  throw ConfigError("config: unknown key '" + name + "'");
}

// ---------------------------------------------------------------------------

Tensor as_batch(const Tensor& vol) {
  return vol.reshaped(Shape{1, 1, vol.dim(0), vol.dim(1), vol.dim(2)});
}

Var volume_of(const Var& y) {
  const Shape& s = y.shape();
  return ad::reshape(y, Shape{s[2], s[3], s[4]});
}

std::string layer_param_name(const std::string& layer) {
  std::string s = "d2d." + layer;
  return s;
}

void add_running(std::map<std::string, std::pair<double, std::size_t>>& running,
                 const std::string& name, double v) {
  auto& [sum, n] = running[name];
  sum += v;
  ++n;
}

}  // namespace

// ---------------------------------------------------------------------------
// TrainConfig

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("config: epochs must be positive");
  if (batch_size == 0) throw ConfigError("config: batch_size must be >= 1");
  if (log_interval == 0) throw ConfigError("config: log_interval must be >= 1");
  optim.validate();
  weights.validate();
  arch.validate();
  dataset.validate();
  phantom.validate();
  if (layers.empty() && cds) throw ConfigError("config: cds needs at least one layer");
  for (const auto& l : layers)
    if (std::find(phantom.layer_names.begin(), phantom.layer_names.end(), l) ==
        phantom.layer_names.end())
      throw ConfigError("config: layer '" + l + "' is not produced by the phantom generator");
  const std::size_t f = std::size_t{1} << arch.depth;
  if (phantom.depth % f || phantom.height % f || phantom.width % f)
    throw ConfigError("config: volume dims must be divisible by 2^depth = " + std::to_string(f));
  if (data::split_sizes(dataset.count, dataset.train, dataset.val, dataset.test)[0] == 0)
    throw ConfigError("config: training split is empty");
}

cds::LossWeights TrainConfig::effective_weights() const {
  cds::LossWeights w = weights;
  if (!cds) w.alpha_2d = w.beta_2d = w.gamma_2d = 0.0;
  return w;
}

std::size_t TrainConfig::steps_per_epoch() const {
  const std::size_t n = data::split_sizes(dataset.count, dataset.train, dataset.val, dataset.test)[0];
  return (n + batch_size - 1) / batch_size;
}

std::size_t TrainConfig::total_steps() const {
  return max_steps ? max_steps : epochs * steps_per_epoch();
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  find_key(key).set(*this, trim(value));
}

std::string TrainConfig::get(const std::string& key) const { return find_key(key).get(*this); }

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : key_table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

std::string TrainConfig::describe(const std::string& key) { return find_key(key).doc; }

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& k : key_table()) out += k.name + " = " + k.get(*this) + "\n";
  return out;
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    std::string line(text.substr(pos, end - pos));
    pos = end + 1;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      cfg.set(trim(std::string_view(line).substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) { return parse(io::read_file(path)); }

void apply_ablation(TrainConfig& cfg, const std::string& name) {
  if (name == "baseline") {
    cfg.arch.msff = false;
    cfg.cds = false;
  } else if (name == "cds") {
    cfg.arch.msff = false;
    cfg.cds = true;
  } else if (name == "msff") {
    cfg.arch.msff = true;
    cfg.cds = false;
  } else if (name == "full") {
    cfg.arch.msff = true;
    cfg.cds = true;
  } else {
    throw ConfigError("unknown ablation '" + name + "' (baseline, cds, msff, full)");
  }
}

// ---------------------------------------------------------------------------
// StepResult

double StepResult::term(const std::string& name) const {
  for (const auto& [n, v] : terms)
    if (n == name) return v;
  throw ConfigError("step result has no term '" + name + "'");
}

std::string StepResult::log_line() const {
  std::string s = "step=" + std::to_string(step) + " epoch=" + std::to_string(epoch) + " sample=";
  for (std::size_t i = 0; i < samples.size(); ++i) s += (i ? "," : "") + samples[i];
  char buf[48];
  for (const auto& [n, v] : terms) {
    std::snprintf(buf, sizeof buf, "%.9g", v);
    s += " " + n + "=" + buf;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Trainer

cds::SegmentationSet select_layers(const cds::SegmentationSet& seg,
                                   const std::vector<std::string>& layers) {
  std::vector<cds::LayerMask> out;
  for (const auto& l : layers) out.push_back({l, seg.mask(l)});
  return cds::SegmentationSet(std::move(out));
}

std::vector<data::VolumePair> load_split(const TrainConfig& cfg, data::Split split) {
  const data::Dataset ds = data::Dataset::make(cfg.dataset);
  std::vector<data::VolumePair> out;
  for (const auto& e : ds.split(split)) out.push_back(ds.load(e, cfg.phantom));
  return out;
}

Trainer::Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  gen_ = std::make_unique<nn::Generator>(cfg_.arch, derive_seed(cfg_.seed, "generator"));
  const std::size_t in_ch = cfg_.arch.conditional ? 2 : 1;
  d3_ = std::make_unique<nn::PatchDiscriminator>("d3d", 3, in_ch, cfg_.arch.disc_width,
                                                 cfg_.arch.disc_layers,
                                                 derive_seed(cfg_.seed, "d3d"));
  // Projection discriminators exist only while their adversarial term is active.
  if (cfg_.effective_weights().beta_2d != 0.0)
    for (const auto& l : cfg_.layers)
      d2_.push_back(std::make_unique<nn::PatchDiscriminator>(
          layer_param_name(l), 2, in_ch, cfg_.arch.disc_width, cfg_.arch.disc_layers,
          derive_seed(cfg_.seed, "d2d/" + l)));
  train_ = load_split(cfg_, data::Split::Train);
  for (const auto& p : train_) gen_->check_input(as_batch(p.oct).shape());
}

std::vector<nn::PatchDiscriminator*> Trainer::discs_2d() {
  std::vector<nn::PatchDiscriminator*> out;
  for (auto& d : d2_) out.push_back(d.get());
  return out;
}

std::vector<Parameter*> Trainer::disc_params() {
  std::vector<Parameter*> out = d3_->parameters();
  for (auto& d : d2_) d->collect(out);
  return out;
}

std::vector<std::size_t> Trainer::schedule(std::size_t s) const {
  // The sample stream is the concatenation of per-epoch permutations; each
  // permutation depends only on (seed, epoch), so resuming needs no RNG state.
  const std::size_t n = train_.size();
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < cfg_.batch_size; ++k) {
    const std::size_t flat = s * cfg_.batch_size + k;
    const std::size_t epoch = flat / n;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(cfg_.seed, "epoch-" + std::to_string(epoch)));
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    out.push_back(perm[flat % n]);
  }
  return out;
}

StepResult Trainer::train_step(const std::vector<const data::VolumePair*>& batch) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  const cds::LossWeights w = cfg_.effective_weights();
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const bool train_d3 = w.beta_3d != 0.0;
  const bool train_d2 = w.beta_2d != 0.0;

  std::vector<Parameter*> gparams = gen_->parameters();
  std::vector<Parameter*> dparams = disc_params();
  std::vector<std::pair<std::string, double>> sums;
  auto add = [&](const std::string& name, double v) {
    for (auto& [n, s] : sums)
      if (n == name) {
        s += v * inv_b;
        return;
      }
    sums.emplace_back(name, v * inv_b);
  };

  // Generator forward once per sample; the graph is kept for the G phase.
  std::vector<std::unique_ptr<Tape>> tapes;
  std::vector<Var> preds;
  std::vector<cds::SegmentationSet> segs;
  for (const auto* pair : batch) {
    tapes.push_back(std::make_unique<Tape>());
    Tape& t = *tapes.back();
    preds.push_back(volume_of(gen_->forward(t, t.constant(as_batch(pair->oct)))));
    segs.push_back(select_layers(pair->seg, cfg_.layers));
  }

  // D phase on detached fakes.
  ad::zero_grads(dparams);
  if (train_d3 || train_d2) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const data::VolumePair& pair = *batch[b];
      const Tensor& fake = preds[b].value();
      const Tensor* cond = cfg_.arch.conditional ? &pair.oct : nullptr;
      Tape t;
      std::optional<Var> loss;
      if (train_d3) {
        Var real_l = d3_->forward(t, cds::discriminator_input(t, t.constant(pair.octa), cond));
        Var fake_l = d3_->forward(t, cds::discriminator_input(t, t.constant(fake), cond));
        Var d = cds::discriminator_loss(real_l, fake_l);
        add("d_3d", d.value().item());
        loss = d;
      }
      if (train_d2) {
        for (std::size_t l = 0; l < d2_.size(); ++l) {
          const Tensor& mask = segs[b].layers()[l].mask;
          Tensor c2;
          if (cond) c2 = cds::enface_projection(*cond, mask);
          const Tensor* cp = cond ? &c2 : nullptr;
          Var real_l = d2_[l]->forward(
              t, cds::discriminator_input(t, t.constant(cds::enface_projection(pair.octa, mask)), cp));
          Var fake_l = d2_[l]->forward(
              t, cds::discriminator_input(t, t.constant(cds::enface_projection(fake, mask)), cp));
          Var d = cds::discriminator_loss(real_l, fake_l);
          add("d_2d/" + cfg_.layers[l], d.value().item());
          loss = loss ? *loss + d : d;
        }
      }
      if (!loss->value().all_finite()) throw NumericError("discriminator loss is not finite");
      t.backward(ad::scale(*loss, inv_b));
    }
    std::vector<Parameter*> active;
    if (train_d3) d3_->collect(active);
    if (train_d2)
      for (auto& d : d2_) d->collect(active);
    ad::adam_step(active, cfg_.optim);
  }

  // G phase against the updated, frozen discriminators.
  ad::zero_grads(gparams);
  ad::zero_grads(dparams);
  d3_->set_trainable(false);
  for (auto& d : d2_) d->set_trainable(false);
  auto d2 = discs_2d();
  try {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const data::VolumePair& pair = *batch[b];
      cds::LossContext ctx;
      ctx.seg = &segs[b];
      ctx.discs_2d = d2;
      ctx.disc_3d = d3_.get();
      ctx.perceptual = &perceptual_;
      ctx.weights = w;
      ctx.condition = cfg_.arch.conditional ? &pair.oct : nullptr;
      cds::LossBreakdown lb = cds::total_loss(*tapes[b], preds[b], pair.octa, ctx);
      for (const auto& term : lb.terms) add(term.name, term.raw.value().item());
      add("total", lb.value());
      if (!std::isfinite(lb.value())) throw NumericError("total loss is not finite");
      tapes[b]->backward(ad::scale(lb.total, inv_b));
    }
  } catch (...) {
    d3_->set_trainable(true);
    for (auto& d : d2_) d->set_trainable(true);
    throw;
  }
  d3_->set_trainable(true);
  for (auto& d : d2_) d->set_trainable(true);
  ad::adam_step(gparams, cfg_.optim);

  StepResult r;
  r.step = ++step_;
  r.epoch = ((step_ - 1) * cfg_.batch_size) / train_.size();
  for (const auto* p : batch) r.samples.push_back(p->id);
  r.terms = std::move(sums);
  if (step_ > 1 && (((step_ - 1) * cfg_.batch_size) / train_.size()) !=
                       (((step_ - 2) * cfg_.batch_size) / train_.size()))
    running_.clear();
  for (const auto& [n, v] : r.terms) add_running(running_, n, v);
  return r;
}

StepResult Trainer::next_step() {
  std::vector<const data::VolumePair*> batch;
  for (std::size_t i : schedule(step_)) batch.push_back(&train_[i]);
  return train_step(batch);
}

void Trainer::run(const std::function<void(const StepResult&)>& on_step) {
  while (step_ < cfg_.total_steps()) {
    StepResult r = next_step();
    if (on_step) on_step(r);
  }
}

ad::Checkpoint Trainer::checkpoint() {
  ad::Checkpoint c;
  c.metadata = cfg_.to_text();
  std::vector<Parameter*> all = gen_->parameters();
  for (auto* p : disc_params()) all.push_back(p);
  ad::export_parameters(all, c, true);
  c.put("trainer#step", Tensor::scalar(static_cast<double>(step_)));
  for (const auto& [name, sn] : running_)
    c.put("running#" + name, Tensor(Shape{2}, {sn.first, static_cast<double>(sn.second)}));
  return c;
}

void Trainer::restore(const ad::Checkpoint& ckpt) {
  std::vector<Parameter*> all = gen_->parameters();
  for (auto* p : disc_params()) all.push_back(p);
  ad::import_parameters(ckpt, all, true);
  step_ = static_cast<std::size_t>(ckpt.get("trainer#step").item());
  running_.clear();
  for (const auto& t : ckpt.tensors)
    if (t.name.rfind("running#", 0) == 0)
      running_[t.name.substr(8)] = {t.value[0], static_cast<std::size_t>(t.value[1])};
}

ParamCounts param_counts(Trainer& t) {
  ParamCounts c;
  c.generator = t.generator().param_count();
  c.disc_3d = t.disc_3d().param_count();
  for (auto* d : t.discs_2d()) c.disc_2d += d->param_count();
  return c;
}

// ---------------------------------------------------------------------------
// Inference and evaluation

std::unique_ptr<nn::Generator> load_generator(const ad::Checkpoint& ckpt) {
  const TrainConfig cfg = TrainConfig::parse(ckpt.metadata);
  auto gen = std::make_unique<nn::Generator>(cfg.arch, derive_seed(cfg.seed, "generator"));
  std::vector<Parameter*> params = gen->parameters();
  ad::import_parameters(ckpt, params, false);
  return gen;
}

Tensor translate(nn::Generator& gen, const Tensor& oct) {
  if (oct.rank() != 3) throw ShapeError("translate: expected [D,H,W], got " + oct.shape().str());
  Tape t;
  Var y = gen.forward(t, t.constant(as_batch(oct)));
  return y.value().reshaped(oct.shape());
}

Tensor translate(const ad::Checkpoint& ckpt, const Tensor& oct) {
  auto gen = load_generator(ckpt);
  return translate(*gen, oct);
}

metrics::MetricReport evaluate_predictions(const std::vector<Tensor>& preds,
                                           const std::vector<data::VolumePair>& pairs,
                                           const std::vector<std::string>& layers) {
  if (pairs.empty()) throw ConfigError("evaluate: no samples");
  if (preds.size() != pairs.size())
    throw ConfigError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                      std::to_string(pairs.size()) + " samples");
  const nn::PerceptualNet net;
  const auto range = metrics::DataRange::model();
  metrics::MetricReport report;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    const Tensor& pred = preds[i];
    if (p.seg.empty()) throw ConfigError("evaluate: sample " + p.id + " has no segmentation");
    report.add(p.id, "3d", metrics::compare(net, pred, p.octa, range));
    report.add(p.id, "proj_full",
               metrics::compare(net, cds::proj_full(pred, p.seg), cds::proj_full(p.octa, p.seg), range));
    report.add(p.id, "proj_mean",
               metrics::compare(net, cds::proj_mean(pred), cds::proj_mean(p.octa), range));
    for (const auto& l : layers) {
      const Tensor& m = p.seg.mask(l);
      report.add(p.id, "proj_" + l,
                 metrics::compare(net, cds::enface_projection(pred, m),
                                  cds::enface_projection(p.octa, m), range));
    }
  }
  return report;
}

metrics::MetricReport evaluate(nn::Generator& gen, const std::vector<data::VolumePair>& pairs,
                               const std::vector<std::string>& layers) {
  std::vector<Tensor> preds;
  for (const auto& p : pairs) preds.push_back(translate(gen, p.oct));
  return evaluate_predictions(preds, pairs, layers);
}

metrics::MetricReport evaluate(const ad::Checkpoint& ckpt, data::Split split) {
  const TrainConfig cfg = TrainConfig::parse(ckpt.metadata);
  auto gen = load_generator(ckpt);
  const auto pairs = load_split(cfg, split);
  if (pairs.empty())
    throw ConfigError("evaluate: split '" + std::string(data::split_name(split)) + "' is empty");
  return evaluate(*gen, pairs, cfg.layers);
}

double volumetric_l1(nn::Generator& gen, const std::vector<data::VolumePair>& pairs) {
  if (pairs.empty()) throw ConfigError("volumetric_l1: no samples");
  double s = 0.0;
  for (const auto& p : pairs) {
    const Tensor pred = translate(gen, p.oct);
    double e = 0.0;
    for (std::size_t i = 0; i < pred.numel(); ++i) e += std::fabs(pred[i] - p.octa[i]);
    s += e / static_cast<double>(pred.numel());
  }
  return s / static_cast<double>(pairs.size());
}

std::map<std::string, double> projection_l1(nn::Generator& gen,
                                            const std::vector<data::VolumePair>& pairs,
                                            const std::vector<std::string>& layers) {
  if (pairs.empty()) throw ConfigError("projection_l1: no samples");
  std::map<std::string, double> out;
  for (const auto& p : pairs) {
    const Tensor pred = translate(gen, p.oct);
    for (const auto& l : layers) {
      const Tensor a = cds::enface_projection(pred, p.seg.mask(l));
      const Tensor b = cds::enface_projection(p.octa, p.seg.mask(l));
      double e = 0.0;
      for (std::size_t i = 0; i < a.numel(); ++i) e += std::fabs(a[i] - b[i]);
      out[l] += e / static_cast<double>(a.numel()) / static_cast<double>(pairs.size());
    }
  }
  return out;
}

}  // namespace xoct::harness

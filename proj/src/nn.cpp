#include "xoct/nn.hpp"

#include "xoct/optim.hpp"

#include <cmath>
#include <numeric>

namespace xoct::nn {

namespace {

// He-style gain for leaky ReLU with the default slope.
const double kLeakyGain = std::sqrt(2.0 / (1.0 + kLeakySlope * kLeakySlope));

Tensor init_weight(const Shape& shape, Rng& rng, double gain) {
  const std::size_t fan_in = shape.numel() / shape[0];
  const double std = gain / std::sqrt(static_cast<double>(fan_in));
  Tensor w(shape);
  for (double& v : w.data()) v = rng.normal() * std;
  return w;
}

ConvSpec spec3(std::size_t kd, std::size_t kh, std::size_t kw, std::size_t groups = 1) {
  return ConvSpec::same(kd, kh, kw, groups);
}

ConvSpec strided(std::size_t rank) {
  ConvSpec s;
  if (rank == 3) {
    s.kernel = {3, 3, 3};
    s.stride = {2, 2, 2};
    s.pad = {1, 1, 1};
  } else {
    s.kernel = {1, 3, 3};
    s.stride = {1, 2, 2};
    s.pad = {0, 1, 1};
  }
  return s;
}

Var norm_act(const Var& x) { return ad::leaky_relu(ad::instance_norm(x), kLeakySlope); }

}  // namespace

// ---------------------------------------------------------------------------

std::vector<Parameter*> Module::parameters() {
  std::vector<Parameter*> out;
  collect(out);
  return out;
}

std::size_t Module::param_count() { return ad::count_scalars(parameters()); }

Conv::Conv(std::string name, std::size_t in_channels, std::size_t out_channels, ConvSpec spec,
           Rng& rng, double gain, bool bias)
    : spec_(spec), in_(in_channels), out_(out_channels), has_bias_(bias) {
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0)
    throw SpecError(name + ": groups " + std::to_string(spec.groups) + " must divide " +
                    std::to_string(in_channels) + " and " + std::to_string(out_channels));
  const Shape ws{out_channels, in_channels / spec.groups, spec.kernel[0], spec.kernel[1],
                 spec.kernel[2]};
  weight_ = Parameter(name + ".weight", init_weight(ws, rng, gain));
  if (bias) bias_ = Parameter(name + ".bias", Tensor(Shape{out_channels}));
}

Var Conv::forward(Tape& tape, const Var& x) {
  const Shape& s = x.shape();
  if (s.rank() != 4 && s.rank() != 5)
    throw ShapeError(weight_.name + ": expected [B,C,H,W] or [B,C,D,H,W], got " + s.str());
  if (s[1] != in_)
    throw ShapeError(weight_.name + ": expected " + std::to_string(in_) + " input channels, got " +
                     s.str());
  const bool planar = s.rank() == 4;
  Var in = planar ? ad::reshape(x, Shape{s[0], s[1], 1, s[2], s[3]}) : x;
  Var w = tape.param(weight_, trainable_);
  std::optional<Var> b;
  if (has_bias_) b = tape.param(bias_, trainable_);
  Var y = ad::conv3d(in, w, b, spec_);
  if (!planar) return y;
  const Shape& ys = y.shape();
  return ad::reshape(y, Shape{ys[0], ys[1], ys[3], ys[4]});
}

void Conv::collect(std::vector<Parameter*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ---------------------------------------------------------------------------

ChannelReweight::ChannelReweight(const std::string& name, std::size_t channels, Rng& rng) {
  const std::size_t hidden = std::max<std::size_t>(1, channels / 4);
  squeeze_ = Conv(name + ".squeeze", channels, hidden, spec3(1, 1, 1), rng, kLeakyGain);
  excite_ = Conv(name + ".excite", hidden, channels, spec3(1, 1, 1), rng, 1.0);
}

Var ChannelReweight::gate(Tape& tape, const Var& x) {
  Var pooled = ad::reduce(x, {2, 3, 4}, ReduceKind::Mean, true);
  Var h = ad::leaky_relu(squeeze_.forward(tape, pooled), kLeakySlope);
  return ad::sigmoid(excite_.forward(tape, h));
}

Var ChannelReweight::forward(Tape& tape, const Var& x) { return x * gate(tape, x); }

void ChannelReweight::collect(std::vector<Parameter*>& out) {
  squeeze_.collect(out);
  excite_.collect(out);
}

// ---------------------------------------------------------------------------

MsffBlock::MsffBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                     MsffOptions options, Rng& rng)
    : in_(in_channels), out_(out_channels), half_((out_channels + 1) / 2), opt_(options) {
  const std::string p = name + ".msff";
  iso_ = Conv(p + ".iso", in_, half_, spec3(3, 3, 3), rng, kLeakyGain);
  aniso_d_ = Conv(p + ".aniso_d", in_, half_, spec3(3, 1, 1), rng, kLeakyGain);
  aniso_h_ = Conv(p + ".aniso_h", in_, half_, spec3(1, 3, 1), rng, kLeakyGain);
  aniso_w_ = Conv(p + ".aniso_w", in_, half_, spec3(1, 1, 3), rng, kLeakyGain);
  // Depthwise when in == half; otherwise the largest grouping both sides allow.
  large_ = Conv(p + ".large", in_, half_, spec3(5, 5, 5, std::gcd(in_, half_)), rng, kLeakyGain);
  fuse_ = Conv(p + ".fuse", 5 * half_, out_, spec3(1, 1, 1), rng, 1.0);
  if (opt_.reweight) reweight_ = ChannelReweight(p + ".reweight", out_, rng);
  if (opt_.residual && in_ != out_) {
    has_proj_ = true;
    proj_ = Conv(p + ".residual", in_, out_, spec3(1, 1, 1), rng, 1.0);
  }
}

Var MsffBlock::forward(Tape& tape, const Var& x) {
  if (x.shape().rank() != 5 || x.shape()[1] != in_)
    throw ShapeError("msff: expected [B," + std::to_string(in_) + ",D,H,W], got " +
                     x.shape().str());
  Var branches = ad::concat_channels({iso_.forward(tape, x), aniso_d_.forward(tape, x),
                                      aniso_h_.forward(tape, x), aniso_w_.forward(tape, x),
                                      large_.forward(tape, x)});
  Var y = fuse_.forward(tape, ad::leaky_relu(branches, kLeakySlope));
  if (opt_.reweight) y = reweight_.forward(tape, y);
  if (opt_.residual) y = y + (has_proj_ ? proj_.forward(tape, x) : x);
  return y;
}

void MsffBlock::collect(std::vector<Parameter*>& out) {
  iso_.collect(out);
  aniso_d_.collect(out);
  aniso_h_.collect(out);
  aniso_w_.collect(out);
  large_.collect(out);
  fuse_.collect(out);
  if (opt_.reweight) reweight_.collect(out);
  if (has_proj_) proj_.collect(out);
}

DenseBlock::DenseBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
                       Rng& rng)
    : in_(in_channels), out_(out_channels) {
  first_ = Conv(name + ".dense.conv1", in_, out_, spec3(3, 3, 3), rng, kLeakyGain, false);
  second_ = Conv(name + ".dense.conv2", out_, out_, spec3(3, 3, 3), rng, kLeakyGain, false);
}

Var DenseBlock::forward(Tape& tape, const Var& x) {
  return norm_act(second_.forward(tape, norm_act(first_.forward(tape, x))));
}

void DenseBlock::collect(std::vector<Parameter*>& out) {
  first_.collect(out);
  second_.collect(out);
}

std::size_t dense_reference_count(std::size_t in_channels, std::size_t out_channels) {
  return in_channels * out_channels * 27 + out_channels * out_channels * 27;
}

// ---------------------------------------------------------------------------

void ArchConfig::validate() const {
  if (depth < 1 || depth > 6) throw ConfigError("arch: depth must be in [1, 6]");
  if (base_width < 1) throw ConfigError("arch: base_width must be >= 1");
  if (disc_layers < 1 || disc_layers > 5) throw ConfigError("arch: disc_layers must be in [1, 5]");
  if (disc_width < 1) throw ConfigError("arch: disc_width must be >= 1");
}

Generator::Generator(const ArchConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  auto make_block = [&](const std::string& name, std::size_t cin, std::size_t cout)
      -> std::unique_ptr<Block> {
    if (config_.msff)
      return std::make_unique<MsffBlock>(name, cin, cout,
                                         MsffOptions{config_.reweight, config_.residual}, rng);
    return std::make_unique<DenseBlock>(name, cin, cout, rng);
  };
  const std::size_t L = config_.depth;
  std::vector<std::size_t> width(L);
  for (std::size_t i = 0; i < L; ++i) width[i] = config_.base_width << i;
  ConvSpec down;
  down.kernel = {3, 3, 3};
  down.stride = {2, 2, 2};
  down.pad = {1, 1, 1};
  for (std::size_t i = 0; i < L; ++i) {
    const std::string lvl = "gen.enc" + std::to_string(i);
    enc_.push_back(make_block(lvl, i == 0 ? 1 : width[i - 1], width[i]));
    down_.emplace_back(lvl + ".down", width[i], width[i], down, rng, kLeakyGain, false);
  }
  bottleneck_ = make_block("gen.bottleneck", width[L - 1], width[L - 1]);
  up_.resize(L);
  dec_.resize(L);
  for (std::size_t i = L; i-- > 0;) {
    const std::string lvl = "gen.dec" + std::to_string(i);
    const std::size_t below = i + 1 == L ? width[L - 1] : width[i + 1];
    up_[i] = Conv(lvl + ".up", below, width[i], spec3(3, 3, 3), rng, kLeakyGain, false);
    dec_[i] = make_block(lvl, 2 * width[i], width[i]);
  }
  head_ = Conv("gen.head", width[0], 1, spec3(1, 1, 1), rng, 1.0);
}

void Generator::check_input(const Shape& shape) const {
  if (shape.rank() != 5 || shape[0] != 1 || shape[1] != 1)
    throw ShapeError("generator: expected input [1,1,D,H,W], got " + shape.str());
  const std::size_t m = std::size_t{1} << config_.depth;
  static const char* const kAxes[] = {"D", "H", "W"};
  for (std::size_t a = 0; a < 3; ++a)
    if (shape[2 + a] % m != 0)
      throw ConfigError("generator: axis " + std::string(kAxes[a]) + " extent " +
                        std::to_string(shape[2 + a]) + " is not divisible by 2^depth = " +
                        std::to_string(m));
}

Var Generator::forward(Tape& tape, const Var& x) {
  check_input(x.shape());
  const std::size_t L = config_.depth;
  std::vector<Var> skips;
  Var h = x;
  for (std::size_t i = 0; i < L; ++i) {
    h = enc_[i]->forward(tape, h);
    skips.push_back(h);
    h = norm_act(down_[i].forward(tape, h));
  }
  h = bottleneck_->forward(tape, h);
  for (std::size_t i = L; i-- > 0;) {
    h = norm_act(up_[i].forward(tape, ad::upsample_nearest3d(h, {2, 2, 2})));
    h = dec_[i]->forward(tape, ad::concat_channels({h, skips[i]}));
  }
  return ad::tanh(head_.forward(tape, h));
}

void Generator::collect(std::vector<Parameter*>& out) {
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    enc_[i]->collect(out);
    down_[i].collect(out);
  }
  bottleneck_->collect(out);
  for (std::size_t i = dec_.size(); i-- > 0;) {
    up_[i].collect(out);
    dec_[i]->collect(out);
  }
  head_.collect(out);
}

std::vector<std::pair<std::string, Block*>> Generator::blocks() {
  std::vector<std::pair<std::string, Block*>> out;
  for (std::size_t i = 0; i < enc_.size(); ++i) out.emplace_back("enc" + std::to_string(i), enc_[i].get());
  out.emplace_back("bottleneck", bottleneck_.get());
  for (std::size_t i = 0; i < dec_.size(); ++i) out.emplace_back("dec" + std::to_string(i), dec_[i].get());
  return out;
}

// ---------------------------------------------------------------------------

PatchDiscriminator::PatchDiscriminator(const std::string& name, std::size_t rank,
                                       std::size_t in_channels, std::size_t width,
                                       std::size_t layers, std::uint64_t seed)
    : rank_(rank), in_(in_channels) {
  if (rank != 2 && rank != 3) throw ConfigError(name + ": rank must be 2 or 3");
  if (layers < 1) throw ConfigError(name + ": needs at least one strided layer");
  Rng rng(seed);
  std::size_t c = in_channels;
  for (std::size_t i = 0; i < layers; ++i) {
    const std::size_t w = width << i;
    // Layers followed by instance norm carry no bias; it would be normalised away.
    convs_.emplace_back(name + ".conv" + std::to_string(i), c, w, strided(rank), rng, kLeakyGain,
                        i == 0);
    c = w;
  }
  const ConvSpec last = rank == 3 ? spec3(3, 3, 3) : spec3(1, 3, 3);
  convs_.emplace_back(name + ".logits", c, 1, last, rng, 1.0);
}

std::size_t PatchDiscriminator::receptive_field() const {
  // Stride-2 width-3 layers, then a stride-1 width-3 layer: 2^(n+2) - 1.
  std::size_t rf = 1, jump = 1;
  for (const auto& c : convs_) {
    const std::size_t axis = 2;
    rf += (c.spec().kernel[axis] - 1) * jump;
    jump *= c.spec().stride[axis];
  }
  return rf;
}

void PatchDiscriminator::check_input(const Shape& shape) const {
  if (shape.rank() != rank_ + 2 || shape[1] != in_)
    throw ShapeError("discriminator: expected rank-" + std::to_string(rank_ + 2) + " input with " +
                     std::to_string(in_) + " channels, got " + shape.str());
  const std::size_t rf = receptive_field();
  for (std::size_t a = 2; a < shape.rank(); ++a)
    if (shape[a] < rf)
      throw ShapeError("discriminator: input extent " + std::to_string(shape[a]) +
                       " smaller than receptive field " + std::to_string(rf) + " in " +
                       shape.str());
}

Shape PatchDiscriminator::output_shape(const Shape& input) const {
  check_input(input);
  std::vector<std::size_t> dims = input.dims();
  dims[1] = 1;
  const std::size_t first = rank_ == 3 ? 0 : 1;
  for (const auto& c : convs_)
    for (std::size_t a = first; a < 3; ++a) {
      std::size_t& d = dims[2 + a - first];
      d = c.spec().out_extent(a, d);
    }
  return Shape(dims);
}

Var PatchDiscriminator::forward(Tape& tape, const Var& x) {
  check_input(x.shape());
  Var h = x;
  for (std::size_t i = 0; i + 1 < convs_.size(); ++i) {
    h = convs_[i].forward(tape, h);
    if (i > 0) h = ad::instance_norm(h);
    h = ad::leaky_relu(h, kLeakySlope);
  }
  return convs_.back().forward(tape, h);
}

void PatchDiscriminator::set_trainable(bool on) {
  for (auto& c : convs_) c.set_trainable(on);
}

void PatchDiscriminator::collect(std::vector<Parameter*>& out) {
  for (auto& c : convs_) c.collect(out);
}

// ---------------------------------------------------------------------------

PerceptualNet::PerceptualNet(std::uint64_t seed) : seed_(seed) {
  Rng rng(seed);
  const std::size_t widths[] = {1, 8, 16, 32};
  for (std::size_t i = 0; i + 1 < 4; ++i) {
    weights_.push_back(init_weight(Shape{widths[i + 1], widths[i], 1, 3, 3}, rng, kLeakyGain));
    specs_.push_back(strided(2));
  }
}

std::vector<Var> PerceptualNet::features(Tape& tape, const Var& img) const {
  const Shape& s = img.shape();
  if (s.rank() != 4 || s[1] != 1)
    throw ShapeError("perceptual: expected [B,1,H,W], got " + s.str());
  std::vector<Var> out;
  Var h = ad::reshape(img, Shape{s[0], 1, 1, s[2], s[3]});
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    h = ad::leaky_relu(ad::conv3d(h, tape.constant(weights_[i]), std::nullopt, specs_[i]),
                       kLeakySlope);
    const Shape& hs = h.shape();
    out.push_back(ad::reshape(h, Shape{hs[0], hs[1], hs[3], hs[4]}));
  }
  return out;
}

}  // namespace xoct::nn

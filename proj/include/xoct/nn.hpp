#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xoct/autodiff.hpp"
#include "xoct/random.hpp"

namespace xoct::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

inline constexpr double kLeakySlope = 0.2;

/// Anything that owns trainable parameters.
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect(std::vector<Parameter*>& out) = 0;

  std::vector<Parameter*> parameters();
  /// Exact number of trainable scalars.
  std::size_t param_count();
};

/// Convolution with weight and optional bias. Accepts [B,C,D,H,W] input, or
/// [B,C,H,W] when constructed for 2-D use (depth kernel 1).
class Conv : public Module {
 public:
  Conv() = default;
  Conv(std::string name, std::size_t in_channels, std::size_t out_channels, ConvSpec spec,
       Rng& rng, double gain, bool bias = true);

  Var forward(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out) override;

  const ConvSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  /// When false, forward() binds the weights as constants.
  void set_trainable(bool on) { trainable_ = on; }

 private:
  ConvSpec spec_;
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = true;
  bool trainable_ = true;
  Parameter weight_;
  Parameter bias_;
};

/// Squeeze-excitation gate: global average pool, C -> max(1, C/4) -> C, sigmoid.
class ChannelReweight : public Module {
 public:
  ChannelReweight() = default;
  ChannelReweight(const std::string& name, std::size_t channels, Rng& rng);

  Var forward(Tape& tape, const Var& x);
  /// Gate values of shape [B,C,1,1,1], each in (0, 1).
  Var gate(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out) override;

 private:
  Conv squeeze_;
  Conv excite_;
};

/// Feature block interface used at every generator level.
class Block : public Module {
 public:
  virtual Var forward(Tape& tape, const Var& x) = 0;
  virtual std::size_t in_channels() const = 0;
  virtual std::size_t out_channels() const = 0;
};

struct MsffOptions {
  bool reweight = true;
  bool residual = true;
};

/// Multi-scale feature fusion block. Five parallel branches (3x3x3, 3x1x1,
/// 1x3x1, 1x1x3, grouped 5x5x5) each emit ceil(Cout/2) channels; their
/// concatenation is fused point-wise to Cout, gated per channel and added to
/// the (projected) input.
class MsffBlock : public Block {
 public:
  MsffBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels,
            MsffOptions options, Rng& rng);

  Var forward(Tape& tape, const Var& x) override;
  void collect(std::vector<Parameter*>& out) override;
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

  std::size_t branch_channels() const { return half_; }
  std::size_t fuse_in_channels() const { return fuse_.in_channels(); }
  std::size_t large_kernel_groups() const { return large_.spec().groups; }
  bool has_projection() const { return has_proj_; }

 private:
  std::size_t in_;
  std::size_t out_;
  std::size_t half_;
  MsffOptions opt_;
  Conv iso_, aniso_d_, aniso_h_, aniso_w_, large_;
  Conv fuse_;
  ChannelReweight reweight_;
  bool has_proj_ = false;
  Conv proj_;
};

/// Two dense 3x3x3 convolutions, each followed by instance norm and
/// leaky ReLU. This is the plain encoder-decoder block MSFF replaces.
/// The convolutions have no bias since instance norm would cancel it.
class DenseBlock : public Block {
 public:
  DenseBlock(const std::string& name, std::size_t in_channels, std::size_t out_channels, Rng& rng);

  Var forward(Tape& tape, const Var& x) override;
  void collect(std::vector<Parameter*>& out) override;
  std::size_t in_channels() const override { return in_; }
  std::size_t out_channels() const override { return out_; }

 private:
  std::size_t in_, out_;
  Conv first_, second_;
};

/// Parameter count of the dense double-3x3x3 reference block.
std::size_t dense_reference_count(std::size_t in_channels, std::size_t out_channels);

// ---------------------------------------------------------------------------

struct ArchConfig {
  std::size_t depth = 3;
  std::size_t base_width = 16;
  bool msff = true;
  bool reweight = true;
  bool residual = true;
  std::size_t disc_layers = 2;
  std::size_t disc_width = 16;
  /// Discriminators see the OCT input alongside the candidate OCTA.
  bool conditional = false;

  void validate() const;
};

/// 3-D encoder-decoder. Input and output are [1,1,D,H,W]; output in [-1, 1].
class Generator : public Module {
 public:
  Generator(const ArchConfig& config, std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out) override;

  const ArchConfig& config() const { return config_; }
  /// Feature blocks with their level name, encoder first.
  std::vector<std::pair<std::string, Block*>> blocks();

  /// Throws ConfigError naming the first axis not divisible by 2^depth.
  void check_input(const Shape& shape) const;

 private:
  ArchConfig config_;
  std::vector<std::unique_ptr<Block>> enc_;
  std::vector<Conv> down_;
  std::unique_ptr<Block> bottleneck_;
  std::vector<Conv> up_;
  std::vector<std::unique_ptr<Block>> dec_;
  Conv head_;
};

/// PatchGAN discriminator on 2-D ([B,C,H,W]) or 3-D ([B,C,D,H,W]) input.
/// Stride-2 3-wide convolutions with leaky ReLU, instance norm from the
/// second layer on, and a final 1-channel convolution producing raw logits.
class PatchDiscriminator : public Module {
 public:
  PatchDiscriminator(const std::string& name, std::size_t rank, std::size_t in_channels,
                     std::size_t width, std::size_t layers, std::uint64_t seed);

  Var forward(Tape& tape, const Var& x);
  void collect(std::vector<Parameter*>& out) override;

  std::size_t rank() const { return rank_; }
  std::size_t in_channels() const { return in_; }
  /// Freeze for the generator phase (no adjoints reach the weights).
  void set_trainable(bool on);
  /// Receptive field along each convolved spatial axis.
  std::size_t receptive_field() const;
  /// Shape of the logit map for a given input shape.
  Shape output_shape(const Shape& input) const;

 private:
  void check_input(const Shape& shape) const;

  std::size_t rank_;
  std::size_t in_;
  std::vector<Conv> convs_;
};

/// Frozen random-weight 2-D feature pyramid used for perceptual distances.
/// Three stride-2 levels; weights come from a seeded normal draw scaled by
/// 1/sqrt(fan_in) and never change.
class PerceptualNet {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x5eed'0c7aULL;

  explicit PerceptualNet(std::uint64_t seed = kDefaultSeed);

  /// img is [B,1,H,W]; returns activations at three depths, coarsening by 2.
  std::vector<Var> features(Tape& tape, const Var& img) const;

  std::uint64_t seed() const { return seed_; }
  const std::vector<Tensor>& weights() const { return weights_; }

 private:
  std::uint64_t seed_;
  std::vector<Tensor> weights_;
  std::vector<ConvSpec> specs_;
};

}  // namespace xoct::nn

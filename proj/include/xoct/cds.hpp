#pragma once

#include <span>
#include <string>
#include <vector>

#include "xoct/autodiff.hpp"
#include "xoct/nn.hpp"

namespace xoct::cds {

using ad::Tape;
using ad::Var;

/// One retinal slab: a [D,H,W] mask (binary by default, soft values allowed).
struct LayerMask {
  std::string name;
  Tensor mask;
};

/// Ordered per-layer masks. The union spans the ILM-to-BM range.
class SegmentationSet {
 public:
  SegmentationSet() = default;
  explicit SegmentationSet(std::vector<LayerMask> layers);

  const std::vector<LayerMask>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }
  bool empty() const { return layers_.empty(); }
  const Tensor& mask(std::string_view name) const;
  std::vector<std::string> names() const;

  /// Voxelwise maximum of all layer masks.
  Tensor union_mask() const;
  /// All-ones mask of the common shape.
  Tensor full_mask() const;

  /// Binary values and pairwise disjoint layers; throws ShapeError/DomainError.
  void validate() const;

 private:
  std::vector<LayerMask> layers_;
};

struct LossWeights {
  double alpha_3d = 10.0;  // volumetric L1
  double beta_3d = 1.0;    // volumetric adversarial
  double alpha_2d = 10.0;  // projection L1
  double beta_2d = 1.0;    // projection adversarial
  double gamma_2d = 1.0;   // projection perceptual

  void validate() const;
};

// ---------------------------------------------------------------------------
// Projection

/// Segmentation-weighted mean along z: P(h,w) = sum_z v*m / sum_z m.
/// Columns whose mask sums to 0 give 0 and pass no gradient.
Var enface_projection(const Var& volume, const Tensor& mask);
Tensor enface_projection(const Tensor& volume, const Tensor& mask);

/// Projection over the union of all layers (ILM to BM).
Tensor proj_full(const Tensor& volume, const SegmentationSet& seg);
/// Plain mean over the whole z axis.
Tensor proj_mean(const Tensor& volume);

// ---------------------------------------------------------------------------
// Losses

/// mean |a - b|
Var l1_loss(const Var& a, const Var& b);

struct AdversarialLosses {
  Var d_loss;  // -mean log σ(real) - mean log(1 - σ(fake))
  Var g_loss;  // -mean log σ(fake), non-saturating form
};

AdversarialLosses adversarial_losses(const Var& real_logits, const Var& fake_logits);
Var discriminator_loss(const Var& real_logits, const Var& fake_logits);
Var generator_adversarial_loss(const Var& fake_logits);

/// Mean over pyramid levels of the mean squared feature difference.
/// a and b are [H,W] images.
Var perceptual_loss(const nn::PerceptualNet& net, const Var& a, const Var& b);

/// A named contribution to a composite loss; total = sum(weight * raw).
struct LossTerm {
  std::string name;
  double weight;
  Var raw;
  double weighted() const { return weight * raw.value().item(); }
};

struct LossBreakdown {
  Var total;
  std::vector<LossTerm> terms;

  double value() const { return total.value().item(); }
  double sum_of_terms() const;
};

/// Context shared by the generator-side loss terms.
struct LossContext {
  const SegmentationSet* seg = nullptr;
  std::span<nn::PatchDiscriminator* const> discs_2d;  // one per layer, or empty
  nn::PatchDiscriminator* disc_3d = nullptr;
  const nn::PerceptualNet* perceptual = nullptr;
  LossWeights weights;
  /// OCT input [D,H,W]; when set, discriminators are conditioned on it.
  const Tensor* condition = nullptr;
};

/// Layer-wise 2-D supervision: for every layer, L1 + adversarial + perceptual
/// between the projections of prediction and ground truth. Terms with zero
/// weight are reported (raw L1 still evaluated) but contribute nothing.
LossBreakdown l2d_loss(Tape& tape, const Var& pred_volume, const Tensor& gt_volume,
                       const LossContext& ctx);

/// L = L3D + L2D with L3D = alpha_3d * L1 + beta_3d * adversarial.
/// pred_volume is [D,H,W]. Discriminator weights take gradient unless the caller
/// freezes them with set_trainable(false), as the generator phase does.
LossBreakdown total_loss(Tape& tape, const Var& pred_volume, const Tensor& gt_volume,
                         const LossContext& ctx);

/// Builds the discriminator input for a candidate (adds the condition channel
/// when conditional). volume_like is [D,H,W] for 3-D or [H,W] for 2-D.
Var discriminator_input(Tape& tape, const Var& candidate, const Tensor* condition);

}  // namespace xoct::cds

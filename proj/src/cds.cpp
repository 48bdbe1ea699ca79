#include "xoct/cds.hpp"

#include <algorithm>
#include <cmath>

namespace xoct::cds {

namespace {

void require_volume(const Shape& s, const char* what) {
  if (s.rank() != 3) throw ShapeError(std::string(what) + ": expected [D,H,W], got " + s.str());
}

// Per-column projection and mask sums. Returns the projection; fills `counts`.
Tensor project(const Tensor& vol, const Tensor& mask, std::vector<double>* counts) {
  require_volume(vol.shape(), "enface_projection");
  if (!(vol.shape() == mask.shape()))
    throw ShapeError("enface_projection: volume " + vol.shape().str() + " vs mask " +
                     mask.shape().str());
  const std::size_t d = vol.dim(0), plane = vol.dim(1) * vol.dim(2);
  Tensor out(Shape{vol.dim(1), vol.dim(2)});
  std::vector<double> num(plane, 0.0), den(plane, 0.0);
  for (std::size_t z = 0; z < d; ++z) {
    const double* v = vol.ptr() + z * plane;
    const double* m = mask.ptr() + z * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      num[i] += v[i] * m[i];
      den[i] += m[i];
    }
  }
  for (std::size_t i = 0; i < plane; ++i) out[i] = den[i] > 0.0 ? num[i] / den[i] : 0.0;
  if (counts) *counts = std::move(den);
  return out;
}

Var as_image(const Var& img) {
  const Shape& s = img.shape();
  return ad::reshape(img, Shape{1, 1, s[0], s[1]});
}

}  // namespace

// ---------------------------------------------------------------------------

SegmentationSet::SegmentationSet(std::vector<LayerMask> layers) : layers_(std::move(layers)) {
  for (const auto& l : layers_) {
    require_volume(l.mask.shape(), "segmentation");
    if (!(l.mask.shape() == layers_.front().mask.shape()))
      throw ShapeError("segmentation: layer " + l.name + " has shape " + l.mask.shape().str() +
                       ", expected " + layers_.front().mask.shape().str());
  }
}

const Tensor& SegmentationSet::mask(std::string_view name) const {
  for (const auto& l : layers_)
    if (l.name == name) return l.mask;
  throw ConfigError("segmentation: no layer named '" + std::string(name) + "'");
}

std::vector<std::string> SegmentationSet::names() const {
  std::vector<std::string> out;
  for (const auto& l : layers_) out.push_back(l.name);
  return out;
}

Tensor SegmentationSet::union_mask() const {
  if (layers_.empty()) throw ConfigError("segmentation: empty layer list");
  Tensor u(layers_.front().mask.shape());
  for (const auto& l : layers_)
    for (std::size_t i = 0; i < u.numel(); ++i) u[i] = std::max(u[i], l.mask[i]);
  return u;
}

Tensor SegmentationSet::full_mask() const {
  if (layers_.empty()) throw ConfigError("segmentation: empty layer list");
  return Tensor(layers_.front().mask.shape(), 1.0);
}

void SegmentationSet::validate() const {
  if (layers_.empty()) return;
  std::vector<double> cover(layers_.front().mask.numel(), 0.0);
  for (const auto& l : layers_)
    for (std::size_t i = 0; i < cover.size(); ++i) {
      const double m = l.mask[i];
      if (m != 0.0 && m != 1.0)
        throw DomainError("segmentation: layer " + l.name + " is not binary at voxel " +
                          std::to_string(i));
      cover[i] += m;
      if (cover[i] > 1.0)
        throw DomainError("segmentation: layer " + l.name + " overlaps an earlier layer at voxel " +
                          std::to_string(i));
    }
}

void LossWeights::validate() const {
  const std::pair<const char*, double> ws[] = {{"alpha_3d", alpha_3d},
                                               {"beta_3d", beta_3d},
                                               {"alpha_2d", alpha_2d},
                                               {"beta_2d", beta_2d},
                                               {"gamma_2d", gamma_2d}};
  for (auto [name, v] : ws)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ConfigError(std::string("loss weight ") + name + " must be finite and >= 0");
}

// ---------------------------------------------------------------------------
// Projection

Tensor enface_projection(const Tensor& volume, const Tensor& mask) {
  return project(volume, mask, nullptr);
}

Var enface_projection(const Var& volume, const Tensor& mask) {
  std::vector<double> counts;
  Tensor out = project(volume.value(), mask, &counts);
  const std::size_t vi = volume.id();
  return volume.tape().record(
      "enface_projection", std::move(out), {vi},
      [vi, mask, counts = std::move(counts)](Tape& tp, std::size_t self) {
        const Tensor& g = tp.grad_ref(self);
        const std::size_t plane = counts.size();
        Tensor gv(mask.shape());
        for (std::size_t z = 0; z < mask.dim(0); ++z)
          for (std::size_t i = 0; i < plane; ++i)
            if (counts[i] > 0.0) gv[z * plane + i] = g[i] * mask[z * plane + i] / counts[i];
        tp.accumulate(vi, std::move(gv));
      });
}

Tensor proj_full(const Tensor& volume, const SegmentationSet& seg) {
  return enface_projection(volume, seg.union_mask());
}

Tensor proj_mean(const Tensor& volume) {
  require_volume(volume.shape(), "proj_mean");
  return reduce(volume, {0}, ReduceKind::Mean);
}

// ---------------------------------------------------------------------------
// Losses

Var l1_loss(const Var& a, const Var& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("l1_loss: " + a.shape().str() + " vs " + b.shape().str());
  return ad::mean(ad::abs(a - b));
}

Var discriminator_loss(const Var& real_logits, const Var& fake_logits) {
  return -(ad::mean(ad::log_sigmoid(real_logits)) + ad::mean(ad::log_sigmoid(-fake_logits)));
}

Var generator_adversarial_loss(const Var& fake_logits) {
  return -ad::mean(ad::log_sigmoid(fake_logits));
}

AdversarialLosses adversarial_losses(const Var& real_logits, const Var& fake_logits) {
  if (!real_logits.value().all_finite() || !fake_logits.value().all_finite())
    throw NumericError("adversarial_losses: non-finite logits");
  return {discriminator_loss(real_logits, fake_logits), generator_adversarial_loss(fake_logits)};
}

Var perceptual_loss(const nn::PerceptualNet& net, const Var& a, const Var& b) {
  if (!(a.shape() == b.shape()))
    throw ShapeError("perceptual_loss: " + a.shape().str() + " vs " + b.shape().str());
  if (a.shape().rank() != 2) throw ShapeError("perceptual_loss: expected [H,W], got " + a.shape().str());
  Tape& t = a.tape();
  const auto fa = net.features(t, as_image(a));
  const auto fb = net.features(t, as_image(b));
  Var acc = ad::mean(ad::mul(fa[0] - fb[0], fa[0] - fb[0]));
  for (std::size_t i = 1; i < fa.size(); ++i) {
    Var d = fa[i] - fb[i];
    acc = acc + ad::mean(d * d);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(fa.size()));
}

double LossBreakdown::sum_of_terms() const {
  double s = 0.0;
  for (const auto& t : terms)
    if (t.weight != 0.0) s += t.weighted();
  return s;
}

Var discriminator_input(Tape& tape, const Var& candidate, const Tensor* condition) {
  const Shape s = candidate.shape();  // copy: recording below may move node storage
  std::vector<std::size_t> dims{1, 1};
  dims.insert(dims.end(), s.dims().begin(), s.dims().end());
  Var x = ad::reshape(candidate, Shape(dims));
  if (!condition) return x;
  if (!(condition->shape() == s))
    throw ShapeError("discriminator condition " + condition->shape().str() + " vs candidate " +
                     s.str());
  return ad::concat_channels({x, tape.constant(condition->reshaped(Shape(dims)))});
}

namespace {

void add_term(LossBreakdown& out, std::string name, double weight, const Var& raw) {
  if (!raw.value().all_finite())
    throw NumericError("loss term " + name + " is not finite");
  if (weight != 0.0) {
    Var w = ad::scale(raw, weight);
    out.total = out.total.valid() ? out.total + w : w;
  }
  out.terms.push_back({std::move(name), weight, raw});
}

void finish(Tape& tape, LossBreakdown& out) {
  if (!out.total.valid()) out.total = tape.constant(Tensor::scalar(0.0));
}

void accumulate_2d(Tape& tape, LossBreakdown& out, const Var& pred, const Tensor& gt,
                   const LossContext& ctx) {
  if (!ctx.seg || ctx.seg->empty()) throw ConfigError("l2d_loss: segmentation required");
  const auto& layers = ctx.seg->layers();
  const LossWeights& w = ctx.weights;
  if (w.beta_2d != 0.0 && ctx.discs_2d.size() != layers.size())
    throw ConfigError("l2d_loss: " + std::to_string(layers.size()) + " layers but " +
                      std::to_string(ctx.discs_2d.size()) + " discriminators");
  if (w.gamma_2d != 0.0 && !ctx.perceptual)
    throw ConfigError("l2d_loss: perceptual weight set without a perceptual network");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string& name = layers[l].name;
    const Tensor& mask = layers[l].mask;
    Var p_hat = enface_projection(pred, mask);
    Var p = tape.constant(enface_projection(gt, mask));
    add_term(out, "l1_2d/" + name, w.alpha_2d, l1_loss(p_hat, p));
    if (w.beta_2d != 0.0) {
      Tensor cond;
      if (ctx.condition) cond = enface_projection(*ctx.condition, mask);
      Var logits = ctx.discs_2d[l]->forward(
          tape, discriminator_input(tape, p_hat, ctx.condition ? &cond : nullptr));
      add_term(out, "adv_2d/" + name, w.beta_2d, generator_adversarial_loss(logits));
    }
    if (w.gamma_2d != 0.0)
      add_term(out, "perp_2d/" + name, w.gamma_2d, perceptual_loss(*ctx.perceptual, p_hat, p));
  }
}

}  // namespace

LossBreakdown l2d_loss(Tape& tape, const Var& pred_volume, const Tensor& gt_volume,
                       const LossContext& ctx) {
  require_volume(pred_volume.shape(), "l2d_loss");
  if (!(pred_volume.shape() == gt_volume.shape()))
    throw ShapeError("l2d_loss: prediction " + pred_volume.shape().str() + " vs target " +
                     gt_volume.shape().str());
  ctx.weights.validate();
  LossBreakdown out;
  accumulate_2d(tape, out, pred_volume, gt_volume, ctx);
  finish(tape, out);
  return out;
}

LossBreakdown total_loss(Tape& tape, const Var& pred_volume, const Tensor& gt_volume,
                         const LossContext& ctx) {
  require_volume(pred_volume.shape(), "total_loss");
  if (!(pred_volume.shape() == gt_volume.shape()))
    throw ShapeError("total_loss: prediction " + pred_volume.shape().str() + " vs target " +
                     gt_volume.shape().str());
  const LossWeights& w = ctx.weights;
  w.validate();
  LossBreakdown out;
  add_term(out, "l1_3d", w.alpha_3d, l1_loss(pred_volume, tape.constant(gt_volume)));
  if (w.beta_3d != 0.0) {
    if (!ctx.disc_3d) throw ConfigError("total_loss: volumetric adversarial weight without D_3D");
    Var logits = ctx.disc_3d->forward(tape, discriminator_input(tape, pred_volume, ctx.condition));
    add_term(out, "adv_3d", w.beta_3d, generator_adversarial_loss(logits));
  }
  const bool any_2d = w.alpha_2d != 0.0 || w.beta_2d != 0.0 || w.gamma_2d != 0.0;
  if (any_2d) accumulate_2d(tape, out, pred_volume, gt_volume, ctx);
  finish(tape, out);
  return out;
}

}  // namespace xoct::cds

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xoct/autodiff.hpp"

namespace xoct::ad {

/// Adam hyperparameters. Only the learning rate comes from the training recipe;
/// the moment decay rates and epsilon are the usual defaults.
struct OptimizerConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// One bias-corrected Adam update for every parameter. If any gradient is
/// non-finite nothing is modified and NumericError names the parameter.
void adam_step(std::span<Parameter* const> params, const OptimizerConfig& cfg);

void zero_grads(std::span<Parameter* const> params);
std::size_t count_scalars(std::span<Parameter* const> params);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Layout (all integers little-endian):
//   "XCKP"  u32 version  u64 metadata_length  metadata bytes  u64 entry_count
//   entry:  u32 name_length  name  u32 rank  u64 dims[rank]  f64 values[numel]

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  std::string metadata;
  std::vector<NamedTensor> tensors;

  const Tensor& get(std::string_view name) const;
  bool has(std::string_view name) const;
  void put(std::string name, Tensor value);
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Adds each parameter value (and optionally its Adam state as "<name>#m",
/// "<name>#v", "<name>#t") to the checkpoint.
void export_parameters(std::span<Parameter* const> params, Checkpoint& ckpt,
                       bool with_optimizer_state);
/// Inverse of export_parameters; missing or mis-shaped entries are errors.
void import_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params,
                       bool with_optimizer_state);

}  // namespace xoct::ad

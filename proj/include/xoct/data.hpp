#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "xoct/cds.hpp"
#include "xoct/tensor.hpp"

namespace xoct::data {

/// Vessel statistics for one slab.
struct VesselStyle {
  std::size_t count = 0;
  double radius_min = 1.0;
  double radius_max = 1.5;
  /// Centerline length as a fraction of the lateral extent.
  double length = 0.8;
  /// Per-step heading jitter in radians.
  double tortuosity = 0.25;
};

struct PhantomConfig {
  std::size_t depth = 16;
  std::size_t height = 32;
  std::size_t width = 32;
  std::uint64_t seed = 1;
  /// Slab boundaries as fractions of depth; layer i spans [b[i], b[i+1]).
  std::vector<double> boundaries{0.15, 0.55, 0.85};
  std::vector<std::string> layer_names{"ILM-OPL", "OPL-BM"};
  /// One style per layer. Defaults: dense fine superficial, sparse coarse deep.
  std::vector<VesselStyle> vessels{{10, 1.0, 1.5, 0.8, 0.25}, {5, 1.5, 2.5, 0.9, 0.15}};
  double noise = 0.08;  // speckle strength
  double blur = 1.0;    // sigma of the vessel imprint in OCT, voxels

  void validate() const;
};

/// z range [begin, end) of each layer for the configured depth.
std::vector<std::pair<std::size_t, std::size_t>> layer_slabs(const PhantomConfig& cfg);

struct VolumePair {
  std::string id;
  Tensor oct;   // [D,H,W] in [-1, 1]
  Tensor octa;  // [D,H,W] in [-1, 1]
  cds::SegmentationSet seg;
};

/// Deterministic phantom for cfg.seed.
VolumePair synth_phantom(const PhantomConfig& cfg, std::string id = "phantom");

/// Binary vessel occupancy (octa above its midpoint) used by the statistics tests.
Tensor vessel_mask(const VolumePair& pair);

// ---------------------------------------------------------------------------
// Files
//
// XVOL: "XVOL" u32 version u32 dtype u64 D u64 H u64 W, then D*H*W values,
// z-major, little-endian. dtype 1 is f64.

inline constexpr std::uint32_t kXvolVersion = 1;
inline constexpr std::uint32_t kXvolF64 = 1;

std::string encode_volume(const Tensor& vol);
Tensor decode_volume(std::string_view bytes);
void save_volume(const std::string& path, const Tensor& vol);
Tensor load_volume(const std::string& path);

/// Binary P5 with maxval 255; pixel = floor(v * 255 / peak + 0.5), clamped.
std::string encode_pgm(const Tensor& img, double peak = 255.0);
void save_image_pgm(const std::string& path, const Tensor& img, double peak = 255.0);

// ---------------------------------------------------------------------------
// Datasets

enum class Split { Train, Val, Test };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct DatasetEntry {
  std::string id;
  Split split;
  std::uint64_t seed;
};

struct DatasetConfig {
  std::size_t count = 10;
  double train = 0.8;
  double val = 0.2;
  double test = 0.0;
  std::uint64_t base_seed = 2024;

  void validate() const;
};

class Dataset {
 public:
  /// Ids "phantom-0000" ... in order; split sizes by largest remainder.
  static Dataset make(const DatasetConfig& cfg);
  static Dataset parse_manifest(std::string_view text);

  const std::vector<DatasetEntry>& entries() const { return entries_; }
  std::vector<DatasetEntry> split(Split s) const;
  std::string manifest() const;

  VolumePair load(const DatasetEntry& e, PhantomConfig phantom) const;

 private:
  std::vector<DatasetEntry> entries_;
};

/// Split sizes for n items; they always sum to n.
std::array<std::size_t, 3> split_sizes(std::size_t n, double train, double val, double test);

}  // namespace xoct::data

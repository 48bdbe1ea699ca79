#include "xoct/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numbers>
#include <sstream>

#include "xoct/binary_io.hpp"
#include "xoct/random.hpp"

namespace xoct::data {

namespace {

// Approximate tissue intensity per region, before smoothing.
constexpr double kVitreous = -0.7;
constexpr double kBelowRetina = 0.35;
constexpr double kLayerTissue[] = {0.15, -0.15};
constexpr double kImprint = 0.6;
constexpr double kOctaBackground = -0.9;
constexpr double kOctaSpan = 1.7;

void blur_axis(Tensor& t, std::size_t axis, double sigma) {
  if (sigma <= 0.0) return;
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(2.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double s = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i)
    s += k[i + radius] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
  for (double& v : k) v /= s;
  const std::size_t dims[3] = {t.dim(0), t.dim(1), t.dim(2)};
  const std::size_t stride[3] = {dims[1] * dims[2], dims[2], 1};
  const std::size_t n = dims[axis];
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.numel(); ++i) {
    const auto pos = static_cast<std::ptrdiff_t>((i / stride[axis]) % n);
    double acc = 0.0, wsum = 0.0;
    for (std::ptrdiff_t o = -radius; o <= radius; ++o) {
      const std::ptrdiff_t p = pos + o;
      if (p < 0 || p >= static_cast<std::ptrdiff_t>(n)) continue;
      acc += k[o + radius] * t[i + (p - pos) * static_cast<std::ptrdiff_t>(stride[axis])];
      wsum += k[o + radius];
    }
    out[i] = acc / wsum;
  }
  t = std::move(out);
}

void paint_vessel(Tensor& v, const PhantomConfig& cfg, const VesselStyle& style,
                  std::pair<std::size_t, std::size_t> slab, Rng& rng) {
  const auto H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);
  const double r = rng.uniform(style.radius_min, style.radius_max);
  const double zlo = static_cast<double>(slab.first) - 0.5 + r;
  const double zhi = static_cast<double>(slab.second) - 0.5 - r;
  double z = rng.uniform(zlo, zhi), y = rng.uniform(0.0, H), x = rng.uniform(0.0, W);
  double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
  constexpr double kStep = 0.5;
  const auto steps = static_cast<std::size_t>(style.length * std::max(H, W) / kStep);
  const std::size_t plane = cfg.height * cfg.width;
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(r + 0.5));
  for (std::size_t s = 0; s < steps; ++s) {
    const auto cz = static_cast<std::ptrdiff_t>(std::lround(z));
    const auto cy = static_cast<std::ptrdiff_t>(std::lround(y));
    const auto cx = static_cast<std::ptrdiff_t>(std::lround(x));
    for (std::ptrdiff_t iz = cz - reach; iz <= cz + reach; ++iz) {
      if (iz < static_cast<std::ptrdiff_t>(slab.first) ||
          iz >= static_cast<std::ptrdiff_t>(slab.second))
        continue;
      for (std::ptrdiff_t iy = cy - reach; iy <= cy + reach; ++iy) {
        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(cfg.height)) continue;
        for (std::ptrdiff_t ix = cx - reach; ix <= cx + reach; ++ix) {
          if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(cfg.width)) continue;
          const double dz = static_cast<double>(iz) - z, dy = static_cast<double>(iy) - y,
                       dx = static_cast<double>(ix) - x;
          const double occ = std::clamp(r + 0.5 - std::sqrt(dz * dz + dy * dy + dx * dx), 0.0, 1.0);
          double& cell = v[static_cast<std::size_t>(iz) * plane +
                           static_cast<std::size_t>(iy) * cfg.width + static_cast<std::size_t>(ix)];
          cell = std::max(cell, occ);
        }
      }
    }
    heading += style.tortuosity * rng.normal();
    y += kStep * std::sin(heading);
    x += kStep * std::cos(heading);
    z = std::clamp(z + 0.1 * rng.normal(), zlo, zhi);
    if (y < 0.0 || y >= H || x < 0.0 || x >= W) {
      heading += std::numbers::pi;
      y = std::clamp(y, 0.0, H - 1e-9);
      x = std::clamp(x, 0.0, W - 1e-9);
    }
  }
}

}  // namespace

void PhantomConfig::validate() const {
  if (depth == 0 || height == 0 || width == 0) throw ConfigError("phantom: dims must be positive");
  if (boundaries.size() < 2) throw ConfigError("phantom: need at least two boundaries");
  for (std::size_t i = 0; i < boundaries.size(); ++i) {
    if (boundaries[i] < 0.0 || boundaries[i] > 1.0)
      throw ConfigError("phantom: boundary fractions must lie in [0, 1]");
    if (i && !(boundaries[i] > boundaries[i - 1]))
      throw ConfigError("phantom: boundary fractions must be strictly increasing");
  }
  const std::size_t layers = boundaries.size() - 1;
  if (layer_names.size() != layers || vessels.size() != layers)
    throw ConfigError("phantom: " + std::to_string(layers) + " layers need as many names and " +
                      "vessel styles");
  const auto slabs = layer_slabs(*this);
  for (std::size_t l = 0; l < layers; ++l) {
    const VesselStyle& s = vessels[l];
    if (s.radius_min < 1.0 || s.radius_max < s.radius_min)
      throw ConfigError("phantom: layer " + layer_names[l] + " radii must satisfy 1 <= min <= max");
    const std::size_t thick = slabs[l].second - slabs[l].first;
    if (s.count > 0 && static_cast<double>(thick) < 2.0 * s.radius_max)
      throw ConfigError("phantom: vessels of radius " + std::to_string(s.radius_max) +
                        " cannot fit layer " + layer_names[l] + " (" + std::to_string(thick) +
                        " voxels thick)");
  }
  if (noise < 0.0 || blur < 0.0) throw ConfigError("phantom: noise and blur must be >= 0");
}

std::vector<std::pair<std::size_t, std::size_t>> layer_slabs(const PhantomConfig& cfg) {
  // Voxel z belongs to layer i when its centre (z + 0.5) / D is in [b_i, b_{i+1}).
  auto first_at = [&](double f) {
    std::size_t z = 0;
    while (z < cfg.depth && (static_cast<double>(z) + 0.5) / static_cast<double>(cfg.depth) < f) ++z;
    return z;
  };
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < cfg.boundaries.size(); ++i)
    out.emplace_back(first_at(cfg.boundaries[i]), first_at(cfg.boundaries[i + 1]));
  return out;
}

VolumePair synth_phantom(const PhantomConfig& cfg, std::string id) {
  cfg.validate();
  const Shape shape{cfg.depth, cfg.height, cfg.width};
  const std::size_t plane = cfg.height * cfg.width;
  const auto slabs = layer_slabs(cfg);
  Rng rng(cfg.seed);

  Tensor vessels(shape);
  for (std::size_t l = 0; l < slabs.size(); ++l)
    for (std::size_t k = 0; k < cfg.vessels[l].count; ++k)
      paint_vessel(vessels, cfg, cfg.vessels[l], slabs[l], rng);

  VolumePair pair;
  pair.id = std::move(id);
  pair.octa = Tensor(shape);
  for (std::size_t i = 0; i < vessels.numel(); ++i)
    pair.octa[i] = kOctaBackground + kOctaSpan * vessels[i];

  // Layered tissue, smoothed along z.
  Tensor tissue(shape, kBelowRetina);
  for (std::size_t z = 0; z < cfg.depth; ++z) {
    double level = z < slabs.front().first ? kVitreous : kBelowRetina;
    for (std::size_t l = 0; l < slabs.size(); ++l)
      if (z >= slabs[l].first && z < slabs[l].second) level = kLayerTissue[l % 2];
    std::fill_n(tissue.ptr() + z * plane, plane, level);
  }
  blur_axis(tissue, 0, 0.7);

  Tensor imprint = vessels;
  for (std::size_t a = 0; a < 3; ++a) blur_axis(imprint, a, cfg.blur);

  pair.oct = Tensor(shape);
  for (std::size_t i = 0; i < pair.oct.numel(); ++i) {
    const double clean = tissue[i] + kImprint * imprint[i];
    const double speckled = (clean + 1.0) * (1.0 + cfg.noise * rng.normal()) - 1.0;
    pair.oct[i] = std::clamp(speckled, -1.0, 1.0);
  }

  std::vector<cds::LayerMask> layers;
  for (std::size_t l = 0; l < slabs.size(); ++l) {
    Tensor m(shape);
    std::fill(m.ptr() + slabs[l].first * plane, m.ptr() + slabs[l].second * plane, 1.0);
    layers.push_back({cfg.layer_names[l], std::move(m)});
  }
  pair.seg = cds::SegmentationSet(std::move(layers));
  return pair;
}

Tensor vessel_mask(const VolumePair& pair) {
  Tensor m(pair.octa.shape());
  const double mid = kOctaBackground + 0.5 * kOctaSpan;
  for (std::size_t i = 0; i < m.numel(); ++i) m[i] = pair.octa[i] > mid ? 1.0 : 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Files

std::string encode_volume(const Tensor& vol) {
  if (vol.rank() != 3) throw ShapeError("xvol: expected [D,H,W], got " + vol.shape().str());
  io::ByteWriter w;
  w.bytes("XVOL");
  w.le<std::uint32_t>(kXvolVersion);
  w.le<std::uint32_t>(kXvolF64);
  for (std::size_t a = 0; a < 3; ++a) w.le<std::uint64_t>(vol.dim(a));
  for (double v : vol.data()) w.le<double>(v);
  return w.take();
}

Tensor decode_volume(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4, "magic") != "XVOL") throw ParseError("xvol: bad magic", 0);
  const std::size_t voff = r.offset();
  const auto version = r.le<std::uint32_t>("version");
  if (version != kXvolVersion)
    throw ParseError("xvol: unsupported version " + std::to_string(version), voff);
  const std::size_t toff = r.offset();
  const auto dtype = r.le<std::uint32_t>("dtype");
  if (dtype != kXvolF64) throw ParseError("xvol: unsupported dtype " + std::to_string(dtype), toff);
  std::vector<std::size_t> dims;
  for (const char* what : {"D", "H", "W"}) {
    const std::size_t off = r.offset();
    const auto d = r.le<std::uint64_t>(what);
    if (d == 0) throw ParseError(std::string("xvol: zero extent ") + what, off);
    dims.push_back(static_cast<std::size_t>(d));
  }
  const std::size_t poff = r.offset();
  const unsigned __int128 n = static_cast<unsigned __int128>(dims[0]) * dims[1] * dims[2];
  if (n * 8 != r.remaining())
    throw ParseError("xvol: payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                         std::to_string(static_cast<std::uint64_t>(n * 8)),
                     n * 8 > r.remaining() ? poff + r.remaining() : poff + static_cast<std::size_t>(n * 8));
  Tensor vol{Shape(dims)};
  for (double& v : vol.data()) v = r.le<double>("payload");
  return vol;
}

void save_volume(const std::string& path, const Tensor& vol) {
  io::write_file(path, encode_volume(vol));
}

Tensor load_volume(const std::string& path) { return decode_volume(io::read_file(path)); }

std::string encode_pgm(const Tensor& img, double peak) {
  if (img.rank() != 2) throw ShapeError("pgm: expected [H,W], got " + img.shape().str());
  if (!(peak > 0.0)) throw DomainError("pgm: peak must be positive");
  std::string out = "P5\n" + std::to_string(img.dim(1)) + " " + std::to_string(img.dim(0)) + "\n255\n";
  for (double v : img.data()) {
    const double q = std::floor(v * 255.0 / peak + 0.5);
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(q, 0.0, 255.0))));
  }
  return out;
}

void save_image_pgm(const std::string& path, const Tensor& img, double peak) {
  io::write_file(path, encode_pgm(img, peak));
}

// ---------------------------------------------------------------------------
// Datasets

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(s) + "' (train, val, test)");
}

void DatasetConfig::validate() const {
  if (count == 0) throw ConfigError("dataset: count must be positive");
  if (train < 0.0 || val < 0.0 || test < 0.0 || std::fabs(train + val + test - 1.0) > 1e-9)
    throw ConfigError("dataset: split fractions must be >= 0 and sum to 1");
}

std::array<std::size_t, 3> split_sizes(std::size_t n, double train, double val, double test) {
  const double f[3] = {train, val, test};
  std::array<std::size_t, 3> out{};
  double rem[3];
  std::size_t used = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = f[i] * static_cast<double>(n);
    out[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = exact - static_cast<double>(out[i]);
    used += out[i];
  }
  while (used < n) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rem[i] > rem[best] + 1e-12) best = i;
    ++out[best];
    rem[best] = -1.0;
    ++used;
  }
  return out;
}

Dataset Dataset::make(const DatasetConfig& cfg) {
  cfg.validate();
  const auto sizes = split_sizes(cfg.count, cfg.train, cfg.val, cfg.test);
  Dataset ds;
  std::size_t i = 0;
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < sizes[s]; ++k, ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "phantom-%04zu", i);
      ds.entries_.push_back({id, static_cast<Split>(s), derive_seed(cfg.base_seed, id)});
    }
  return ds;
}

std::vector<DatasetEntry> Dataset::split(Split s) const {
  std::vector<DatasetEntry> out;
  for (const auto& e : entries_)
    if (e.split == s) out.push_back(e);
  return out;
}

std::string Dataset::manifest() const {
  std::string out;
  for (const auto& e : entries_)
    out += e.id + " " + std::string(split_name(e.split)) + " " + std::to_string(e.seed) + "\n";
  return out;
}

Dataset Dataset::parse_manifest(std::string_view text) {
  Dataset ds;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line(text.substr(pos, end - pos));
    if (!line.empty()) {
      std::istringstream is(line);
      std::string id, split, seed;
      if (!(is >> id >> split >> seed)) throw ParseError("manifest: expected 'id split seed'", pos);
      std::uint64_t sv = 0;
      auto [p, ec] = std::from_chars(seed.data(), seed.data() + seed.size(), sv);
      if (ec != std::errc() || p != seed.data() + seed.size())
        throw ParseError("manifest: bad seed '" + seed + "'", pos);
      try {
        ds.entries_.push_back({id, parse_split(split), sv});
      } catch (const ConfigError& e) {
        throw ParseError(std::string("manifest: ") + e.what(), pos);
      }
    }
    pos = end + 1;
  }
  return ds;
}

VolumePair Dataset::load(const DatasetEntry& e, PhantomConfig phantom) const {
  phantom.seed = e.seed;
  return synth_phantom(phantom, e.id);
}

}  // namespace xoct::data

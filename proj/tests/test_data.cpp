#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xoct/data.hpp"

using namespace xoct;
using namespace xoct::data;

namespace {

double correlation(const Tensor& a, const Tensor& b, const Tensor& mask) {
  double n = 0, ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (mask[i] > 0) n += 1, ma += a[i], mb += b[i];
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (mask[i] > 0) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("phantoms are deterministic per seed") {
  PhantomConfig c;
  c.seed = 17;
  const VolumePair a = synth_phantom(c), b = synth_phantom(c);
  CHECK(a.oct == b.oct);
  CHECK(a.octa == b.octa);
  CHECK(a.seg.names() == b.seg.names());
  c.seed = 18;
  CHECK_FALSE(synth_phantom(c).octa == a.octa);
}

TEST_CASE("phantom shapes, ranges and layer slabs") {
  PhantomConfig c;
  const VolumePair p = synth_phantom(c, "x");
  CHECK(p.id == "x");
  CHECK(p.oct.shape() == Shape{16, 32, 32});
  for (double v : p.oct.data()) CHECK((v >= -1.0 && v <= 1.0));
  for (double v : p.octa.data()) CHECK((v >= -1.0 && v <= 1.0));
  const auto slabs = layer_slabs(c);
  REQUIRE(slabs.size() == 2);
  // Voxel z belongs to a layer when its centre (z + 0.5) / D falls in it.
  CHECK(slabs[0] == std::pair<std::size_t, std::size_t>{2, 9});
  CHECK(slabs[1] == std::pair<std::size_t, std::size_t>{9, 14});
  p.seg.validate();
  CHECK(p.seg.names() == std::vector<std::string>{"ILM-OPL", "OPL-BM"});
  const Tensor& m = p.seg.mask("OPL-BM");
  CHECK(m.at({9, 3, 3}) == 1.0);
  CHECK(m.at({8, 3, 3}) == 0.0);
  CHECK(m.at({14, 3, 3}) == 0.0);
}

TEST_CASE("vessels are bright, confined to the retina and visible in OCT") {
  const VolumePair p = synth_phantom(PhantomConfig{});
  const Tensor v = vessel_mask(p);
  const Tensor u = p.seg.union_mask();
  double inside = 0, outside = 0, vessel_level = 0, background = 0, nv = 0, nb = 0;
  for (std::size_t i = 0; i < v.numel(); ++i) {
    if (v[i] > 0) (u[i] > 0 ? inside : outside) += 1;
    if (u[i] > 0) {
      if (v[i] > 0) vessel_level += p.octa[i], nv += 1;
      else background += p.octa[i], nb += 1;
    }
  }
  CHECK(inside > 50);
  CHECK(outside == 0);
  CHECK(vessel_level / nv > background / nb + 0.5);
  const double r = correlation(p.oct, p.octa, u);
  CHECK(r > 0.2);
  CHECK(r < 0.99);
}

TEST_CASE("phantom config validation") {
  PhantomConfig c;
  c.boundaries = {0.15, 0.2, 0.85};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.layer_names = {"only"};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.noise = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("xvol round trip and rejection of malformed files") {
  Tensor t(Shape{2, 3, 4});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = std::sin(double(i)) * 1e-3 - 0.5;
  t[5] = -0.0;
  const std::string bytes = encode_volume(t);
  CHECK(bytes.size() == 4 + 4 + 4 + 24 + 24 * 8);
  CHECK(bytes.substr(0, 4) == "XVOL");
  const Tensor back = decode_volume(bytes);
  CHECK(back == t);
  CHECK(encode_volume(back) == bytes);

  auto offset_of = [](const std::string& b) {
    try {
      decode_volume(b);
    } catch (const ParseError& e) {
      return e.offset();
    }
    return std::size_t(-1);
  };
  CHECK(offset_of("XVOX" + bytes.substr(4)) == 0);
  std::string v = bytes;
  v[4] = 9;
  CHECK(offset_of(v) == 4);
  std::string d = bytes;
  d[8] = 2;
  CHECK(offset_of(d) == 8);
  std::string z = bytes;
  for (int i = 12; i < 20; ++i) z[i] = 0;
  CHECK(offset_of(z) == 12);
  CHECK(offset_of(bytes.substr(0, bytes.size() - 1)) != std::size_t(-1));
  CHECK(offset_of(bytes.substr(0, 10)) != std::size_t(-1));
  CHECK(offset_of(bytes + "x") == bytes.size());
  CHECK_THROWS_AS(encode_volume(Tensor(Shape{2, 2})), ShapeError);
}

TEST_CASE("volume files") {
  const auto path = (std::filesystem::temp_directory_path() / "xoct_test.xvol").string();
  const Tensor t(Shape{1, 2, 2}, 0.25);
  save_volume(path, t);
  CHECK(load_volume(path) == t);
  std::remove(path.c_str());
  CHECK_THROWS(load_volume(path));
}

TEST_CASE("pgm encoding") {
  const Tensor img(Shape{1, 4}, std::vector<double>{0.0, 127.5, 300.0, -4.0});
  const std::string pgm = encode_pgm(img);
  const std::string header = "P5\n4 1\n255\n";
  REQUIRE(pgm.size() == header.size() + 4);
  CHECK(pgm.substr(0, header.size()) == header);
  CHECK((unsigned char)pgm[header.size() + 0] == 0);
  CHECK((unsigned char)pgm[header.size() + 1] == 128);
  CHECK((unsigned char)pgm[header.size() + 2] == 255);
  CHECK((unsigned char)pgm[header.size() + 3] == 0);
  CHECK((unsigned char)encode_pgm(Tensor(Shape{1, 1}, 0.5), 1.0).back() == 128);
}

TEST_CASE("dataset splits and manifest") {
  CHECK(split_sizes(10, 0.7, 0.1, 0.2) == std::array<std::size_t, 3>{7, 1, 2});
  CHECK(split_sizes(10, 0.8, 0.2, 0.0) == std::array<std::size_t, 3>{8, 2, 0});
  const auto s = split_sizes(7, 1.0 / 3, 1.0 / 3, 1.0 / 3);
  CHECK(s[0] + s[1] + s[2] == 7);

  DatasetConfig c;
  c.train = 0.7;
  c.val = 0.1;
  c.test = 0.2;
  const Dataset d = Dataset::make(c);
  REQUIRE(d.entries().size() == 10);
  CHECK(d.entries()[0].id == "phantom-0000");
  CHECK(d.split(Split::Train).size() == 7);
  CHECK(d.split(Split::Val).size() == 1);
  CHECK(d.split(Split::Test).size() == 2);
  CHECK(d.entries()[7].split == Split::Val);

  const Dataset back = Dataset::parse_manifest(d.manifest());
  REQUIRE(back.entries().size() == 10);
  CHECK(back.manifest() == d.manifest());
  CHECK(back.entries()[3].seed == d.entries()[3].seed);
  CHECK_THROWS_AS(Dataset::parse_manifest("phantom-0000 train\n"), ParseError);
  CHECK_THROWS_AS(Dataset::parse_manifest("phantom-0000 dev 5\n"), ParseError);

  c.base_seed = 2025;
  CHECK(Dataset::make(c).entries()[0].seed != d.entries()[0].seed);
  CHECK(Dataset::make(c).entries()[0].id == "phantom-0000");

  const VolumePair p = d.load(d.entries()[0], PhantomConfig{});
  PhantomConfig pc;
  pc.seed = d.entries()[0].seed;
  CHECK(p.octa == synth_phantom(pc).octa);
  CHECK(p.id == "phantom-0000");

  CHECK(parse_split("val") == Split::Val);
  CHECK(split_name(Split::Test) == "test");
  CHECK_THROWS(parse_split("dev"));
  DatasetConfig bad;
  bad.train = 0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

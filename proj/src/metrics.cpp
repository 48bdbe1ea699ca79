#include "xoct/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace xoct::metrics {

namespace {

const char* const kMetricNames[] = {"mae", "psnr", "ssim", "perp"};

void same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(what) + ": " + a.shape().str() + " vs " + b.shape().str());
  if (a.numel() == 0) throw ShapeError(std::string(what) + ": empty input");
}

Tensor slice_z(const Tensor& vol, std::size_t z) {
  const std::size_t plane = vol.dim(1) * vol.dim(2);
  Tensor out(Shape{vol.dim(1), vol.dim(2)});
  std::copy_n(vol.ptr() + z * plane, plane, out.ptr());
  return out;
}

void require_volume(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [D,H,W], got " + t.shape().str());
}

std::vector<double> gaussian_window(std::size_t size, double sigma) {
  std::vector<double> w(size);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < size; ++i) {
    const double x = static_cast<double>(i) - c;
    w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    s += w[i];
  }
  for (double& v : w) v /= s;
  return w;
}

std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(std::string_view s, std::size_t offset) {
  if (s == "inf") return kPsnrInfinite;
  if (s == "-inf") return -kPsnrInfinite;
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError("bad number '" + std::string(s) + "'", offset);
  return v;
}

}  // namespace

void DataRange::validate() const {
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
    throw ConfigError("data range: need finite lo < hi");
}

Tensor to_report_range(const Tensor& t, DataRange range) {
  range.validate();
  Tensor out = t;
  for (double& v : out.data()) v = range.to_report(v);
  return out;
}

double mae(const Tensor& a, const Tensor& b, DataRange range) {
  same_shape(a, b, "mae");
  range.validate();
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    s += std::fabs(range.to_report(a[i]) - range.to_report(b[i]));
  return s / static_cast<double>(a.numel());
}

double mse(const Tensor& a, const Tensor& b) {
  same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.numel());
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (!(peak > 0.0)) throw DomainError("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return kPsnrInfinite;
  return 10.0 * std::log10(peak * peak / m);
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  same_shape(a, b, "ssim");
  if (a.rank() != 2) throw ShapeError("ssim: expected [H,W], got " + a.shape().str());
  const std::size_t h = a.dim(0), w = a.dim(1), k = opt.window;
  if (k == 0 || h < k || w < k)
    throw ShapeError("ssim: image " + a.shape().str() + " smaller than " + std::to_string(k) +
                     "x" + std::to_string(k) + " window");
  const std::vector<double> g = gaussian_window(k, opt.sigma);
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t y0 = 0; y0 + k <= h; ++y0)
    for (std::size_t x0 = 0; x0 + k <= w; ++x0) {
      double ma = 0.0, mb = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double wt = g[i] * g[j];
          const std::size_t idx = (y0 + i) * w + x0 + j;
          ma += wt * a[idx];
          mb += wt * b[idx];
        }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double wt = g[i] * g[j];
          const std::size_t idx = (y0 + i) * w + x0 + j;
          const double da = a[idx] - ma, db = b[idx] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      const double s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
      total += std::clamp(s, -1.0, 1.0);
      ++count;
    }
  return total / static_cast<double>(count);
}

double ssim_volume(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  same_shape(a, b, "ssim_volume");
  require_volume(a, "ssim_volume");
  double s = 0.0;
  for (std::size_t z = 0; z < a.dim(0); ++z) s += ssim(slice_z(a, z), slice_z(b, z), opt);
  return s / static_cast<double>(a.dim(0));
}

double perceptual_discrepancy(const nn::PerceptualNet& net, const Tensor& a, const Tensor& b) {
  same_shape(a, b, "perceptual_discrepancy");
  if (a.rank() != 2) throw ShapeError("perceptual_discrepancy: expected [H,W], got " + a.shape().str());
  ad::Tape tape;
  const Shape img{1, 1, a.dim(0), a.dim(1)};
  const auto fa = net.features(tape, tape.constant(a.reshaped(img)));
  const auto fb = net.features(tape, tape.constant(b.reshaped(img)));
  double acc = 0.0;
  for (std::size_t l = 0; l < fa.size(); ++l) {
    const Tensor& x = fa[l].value();
    const Tensor& y = fb[l].value();
    double s = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += (x[i] - y[i]) * (x[i] - y[i]);
    acc += s / static_cast<double>(x.numel());
  }
  return acc / static_cast<double>(fa.size());
}

double perceptual_discrepancy_volume(const nn::PerceptualNet& net, const Tensor& a,
                                     const Tensor& b) {
  same_shape(a, b, "perceptual_discrepancy_volume");
  require_volume(a, "perceptual_discrepancy_volume");
  double s = 0.0;
  for (std::size_t z = 0; z < a.dim(0); ++z)
    s += perceptual_discrepancy(net, slice_z(a, z), slice_z(b, z));
  return s / static_cast<double>(a.dim(0));
}

MetricValues compare(const nn::PerceptualNet& net, const Tensor& a, const Tensor& b,
                     DataRange range) {
  same_shape(a, b, "compare");
  const Tensor ra = to_report_range(a, range);
  const Tensor rb = to_report_range(b, range);
  MetricValues v;
  v.mae = mae(a, b, range);
  v.psnr = psnr(ra, rb);
  if (a.rank() == 3) {
    v.ssim = ssim_volume(ra, rb);
    v.perp = perceptual_discrepancy_volume(net, a, b);
  } else {
    v.ssim = ssim(ra, rb);
    v.perp = perceptual_discrepancy(net, a, b);
  }
  return v;
}

// ---------------------------------------------------------------------------
// Records

std::string format_record(const Record& r) {
  std::string s;
  if (!r.sample.empty()) s += "sample=" + r.sample + " ";
  s += "target=" + r.target + " metric=" + r.metric + " value=" + format_double(r.value) +
       " peak=" + format_double(r.peak) + " n=" + std::to_string(r.n);
  return s;
}

Record parse_record(const std::string& line) {
  Record r;
  bool seen[5] = {};
  std::size_t pos = 0;
  while (pos < line.size()) {
    const std::size_t end = std::min(line.find(' ', pos), line.size());
    const std::string_view field(line.data() + pos, end - pos);
    const std::size_t eq = field.find('=');
    if (eq == std::string_view::npos) throw ParseError("record field without '='", pos);
    const std::string_view key = field.substr(0, eq), val = field.substr(eq + 1);
    const std::size_t voff = pos + eq + 1;
    if (key == "sample") {
      r.sample = val;
    } else if (key == "target") {
      r.target = val, seen[0] = true;
    } else if (key == "metric") {
      r.metric = val, seen[1] = true;
    } else if (key == "value") {
      r.value = parse_double(val, voff), seen[2] = true;
    } else if (key == "peak") {
      r.peak = parse_double(val, voff), seen[3] = true;
    } else if (key == "n") {
      std::size_t n = 0;
      auto [p, ec] = std::from_chars(val.data(), val.data() + val.size(), n);
      if (ec != std::errc() || p != val.data() + val.size()) throw ParseError("bad count", voff);
      r.n = n, seen[4] = true;
    } else {
      throw ParseError("unknown record field '" + std::string(key) + "'", pos);
    }
    pos = end + 1;
  }
  if (!std::all_of(std::begin(seen), std::end(seen), [](bool b) { return b; }))
    throw ParseError("record missing a required field", line.size());
  return r;
}

void MetricReport::add(const std::string& sample, const std::string& target,
                       const MetricValues& v) {
  if (std::find(targets_.begin(), targets_.end(), target) == targets_.end())
    targets_.push_back(target);
  const double vals[] = {v.mae, v.psnr, v.ssim, v.perp};
  for (std::size_t i = 0; i < 4; ++i)
    samples_.push_back({target, kMetricNames[i], vals[i], kReportPeak, 1, sample});
}

std::vector<Record> MetricReport::means() const {
  std::vector<Record> out;
  for (const auto& t : targets_)
    for (const char* m : kMetricNames) {
      Record r{t, m, 0.0, kReportPeak, 0, {}};
      for (const auto& s : samples_)
        if (s.target == t && s.metric == m) {
          r.value += s.value;
          ++r.n;
        }
      if (r.n) r.value /= static_cast<double>(r.n);
      out.push_back(r);
    }
  return out;
}

Record MetricReport::mean(const std::string& target, const std::string& metric) const {
  for (const auto& r : means())
    if (r.target == target && r.metric == metric) return r;
  throw ConfigError("report has no " + metric + " for target " + target);
}

std::string MetricReport::records_text(bool include_samples) const {
  std::string out;
  if (include_samples)
    for (const auto& r : samples_) out += format_record(r) + "\n";
  for (const auto& r : means()) out += format_record(r) + "\n";
  return out;
}

std::string MetricReport::summary_table() const {
  std::ostringstream os;
  char line[128];
  std::snprintf(line, sizeof line, "%-18s %10s %10s %10s %10s\n", "target", "MAE", "PSNR", "SSIM",
                "Perp");
  os << line;
  for (const auto& t : targets_) {
    const double v[] = {mean(t, "mae").value, mean(t, "psnr").value, mean(t, "ssim").value,
                        mean(t, "perp").value};
    std::snprintf(line, sizeof line, "%-18s %10.4f %10.4f %10.4f %10.5f\n", t.c_str(), v[0], v[1],
                  v[2], v[3]);
    os << line;
  }
  return os.str();
}

}  // namespace xoct::metrics

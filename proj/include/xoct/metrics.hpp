#pragma once

#include <limits>
#include <string>
#include <vector>

#include "xoct/nn.hpp"
#include "xoct/tensor.hpp"

namespace xoct::metrics {

inline constexpr double kReportPeak = 255.0;
/// PSNR of identical inputs.
inline constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

/// Value range of the inputs. Metrics are reported on [0, 255]; inputs are
/// mapped affinely from [lo, hi] first.
struct DataRange {
  double lo = 0.0;
  double hi = 255.0;

  /// The generator's working range.
  static DataRange model() { return {-1.0, 1.0}; }
  double to_report(double v) const { return (v - lo) * kReportPeak / (hi - lo); }
  void validate() const;
};

/// Copy of t mapped to the report range.
Tensor to_report_range(const Tensor& t, DataRange range);

/// Mean absolute difference on the report range, in floating point.
double mae(const Tensor& a, const Tensor& b, DataRange range = {});
double mse(const Tensor& a, const Tensor& b);
/// 10 log10(peak^2 / mse); kPsnrInfinite when mse == 0.
double psnr(const Tensor& a, const Tensor& b, double peak = kReportPeak);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = kReportPeak;
};

/// Mean local SSIM over every window position fully inside the [H,W] image.
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});
/// Mean of per-slice SSIM over z for [D,H,W] volumes.
double ssim_volume(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

/// Frozen-network feature distance for [H,W] images (same form as the
/// perceptual loss). Not comparable to VGG-based numbers.
double perceptual_discrepancy(const nn::PerceptualNet& net, const Tensor& a, const Tensor& b);
/// Mean over z slices for [D,H,W] volumes.
double perceptual_discrepancy_volume(const nn::PerceptualNet& net, const Tensor& a,
                                     const Tensor& b);

struct MetricValues {
  double mae = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double perp = 0.0;
};

/// All four metrics for a pair of images or volumes given in `range`.
MetricValues compare(const nn::PerceptualNet& net, const Tensor& a, const Tensor& b,
                     DataRange range);

/// One line of a report.
struct Record {
  std::string target;  // 3d, proj_full, proj_mean, proj_<layer>
  std::string metric;  // mae, psnr, ssim, perp
  double value = 0.0;
  double peak = kReportPeak;
  std::size_t n = 0;
  std::string sample;  // empty for aggregate records
};

/// Formats as `target=... metric=... value=... peak=... n=...`, with a
/// leading `sample=...` for per-sample records. Infinite values print "inf".
std::string format_record(const Record& r);
/// Inverse of format_record. Throws ParseError.
Record parse_record(const std::string& line);

class MetricReport {
 public:
  /// Adds one sample's values for a target.
  void add(const std::string& sample, const std::string& target, const MetricValues& v);

  /// Per-sample records in insertion order.
  const std::vector<Record>& samples() const { return samples_; }
  /// Mean over samples per (target, metric), in first-seen target order.
  std::vector<Record> means() const;
  std::vector<std::string> targets() const { return targets_; }
  Record mean(const std::string& target, const std::string& metric) const;

  std::string records_text(bool include_samples) const;
  std::string summary_table() const;

 private:
  std::vector<Record> samples_;
  std::vector<std::string> targets_;
};

}  // namespace xoct::metrics

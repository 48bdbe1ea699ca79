#include "xoct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace xoct {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

void Shape::validate() {
  if (dims_.empty()) {
    numel_ = 0;
    return;
  }
  std::size_t n = 1;
  for (std::size_t d : dims_) {
    if (d == 0) throw ShapeError("shape extent must be >= 1, got " + str());
    if (n > std::numeric_limits<std::size_t>::max() / d)
      throw ShapeError("shape element count overflows: " + str());
    n *= d;
  }
  numel_ = n;
}

std::size_t Shape::operator[](std::size_t axis) const {
  if (axis >= dims_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + str());
  return dims_[axis];
}

std::vector<std::size_t> Shape::strides() const {
  std::vector<std::size_t> s(dims_.size(), 1);
  for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
  return s;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << 'x';
    os << dims_[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_.numel())
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_.str());
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.rank())
    throw ShapeError("index rank " + std::to_string(index.size()) + " for shape " + shape_.str());
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_.dims()[axis])
      throw ShapeError("index " + std::to_string(i) + " out of range on axis " +
                       std::to_string(axis) + " of " + shape_.str());
    off = off * shape_.dims()[axis] + i;
    ++axis;
  }
  return off;
}

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }
double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
  return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor t = *this;
  return std::move(t).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  if (shape.numel() != data_.size())
    throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
  shape_ = std::move(shape);
  return std::move(*this);
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// ---------------------------------------------------------------------------
// Resampling and layout

namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     t.shape().str());
}

}  // namespace

Tensor upsample_nearest3d(const Tensor& input, const Triple& factor) {
  require_rank(input, 5, "upsample_nearest3d");
  for (std::size_t f : factor)
    if (f == 0) throw SpecError("upsample_nearest3d: factors must be >= 1");
  const auto& s = input.shape().dims();
  const std::size_t bc = s[0] * s[1], D = s[2], H = s[3], W = s[4];
  const std::size_t OD = D * factor[0], OH = H * factor[1], OW = W * factor[2];
  Tensor out(Shape{s[0], s[1], OD, OH, OW});
  const double* src = input.ptr();
  double* dst = out.ptr();
  for (std::size_t c = 0; c < bc; ++c)
    for (std::size_t z = 0; z < OD; ++z)
      for (std::size_t y = 0; y < OH; ++y) {
        const double* row = src + ((c * D + z / factor[0]) * H + y / factor[1]) * W;
        double* orow = dst + ((c * OD + z) * OH + y) * OW;
        for (std::size_t x = 0; x < OW; ++x) orow[x] = row[x / factor[2]];
      }
  return out;
}

Tensor upsample_nearest3d_backward(const Tensor& grad_out, const Triple& factor) {
  require_rank(grad_out, 5, "upsample_nearest3d_backward");
  const auto& s = grad_out.shape().dims();
  for (std::size_t a = 0; a < 3; ++a)
    if (factor[a] == 0 || s[2 + a] % factor[a] != 0)
      throw SpecError("upsample_nearest3d_backward: extent not divisible by factor");
  const std::size_t bc = s[0] * s[1], OD = s[2], OH = s[3], OW = s[4];
  const std::size_t D = OD / factor[0], H = OH / factor[1], W = OW / factor[2];
  Tensor g(Shape{s[0], s[1], D, H, W});
  const double* src = grad_out.ptr();
  double* dst = g.ptr();
  for (std::size_t c = 0; c < bc; ++c)
    for (std::size_t z = 0; z < OD; ++z)
      for (std::size_t y = 0; y < OH; ++y) {
        const double* orow = src + ((c * OD + z) * OH + y) * OW;
        double* row = dst + ((c * D + z / factor[0]) * H + y / factor[1]) * W;
        for (std::size_t x = 0; x < OW; ++x) row[x / factor[2]] += orow[x];
      }
  return g;
}

Tensor pad3d(const Tensor& input, const Triple& before, const Triple& after) {
  require_rank(input, 5, "pad3d");
  const auto& s = input.shape().dims();
  std::vector<Range> ranges{{0, s[0]}, {0, s[1]}};
  std::vector<std::size_t> dims{s[0], s[1]};
  for (std::size_t a = 0; a < 3; ++a) {
    dims.push_back(s[2 + a] + before[a] + after[a]);
    ranges.push_back({before[a], before[a] + s[2 + a]});
  }
  return unslice(input, Shape(dims), ranges);
}

namespace {

void check_ranges(const Shape& shape, const std::vector<Range>& ranges, const char* op) {
  if (ranges.size() != shape.rank())
    throw ShapeError(std::string(op) + ": expected " + std::to_string(shape.rank()) +
                     " ranges for shape " + shape.str());
  for (std::size_t a = 0; a < ranges.size(); ++a)
    if (ranges[a].start >= ranges[a].stop || ranges[a].stop > shape.dims()[a])
      throw ShapeError(std::string(op) + ": range [" + std::to_string(ranges[a].start) + ", " +
                       std::to_string(ranges[a].stop) + ") out of bounds on axis " +
                       std::to_string(a) + " of " + shape.str());
}

// Visits every innermost run of the hyper-rectangle; fn(full_offset, part_offset, run_length).
template <typename Fn>
void for_each_run(const Shape& full, const std::vector<Range>& ranges, Fn&& fn) {
  const std::size_t rank = full.rank();
  const auto fstr = full.strides();
  std::vector<std::size_t> ext(rank);
  for (std::size_t a = 0; a < rank; ++a) ext[a] = ranges[a].stop - ranges[a].start;
  const std::size_t run = ext[rank - 1];
  std::size_t outer = 1;
  for (std::size_t a = 0; a + 1 < rank; ++a) outer *= ext[a];
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a) off += (ranges[a].start + idx[a]) * fstr[a];
    fn(off, o * run, run);
    for (std::size_t a = rank - 1; a-- > 0;) {
      if (++idx[a] < ext[a]) break;
      idx[a] = 0;
    }
  }
}

}  // namespace

Tensor slice(const Tensor& input, const std::vector<Range>& ranges) {
  check_ranges(input.shape(), ranges, "slice");
  std::vector<std::size_t> dims;
  for (const auto& r : ranges) dims.push_back(r.stop - r.start);
  Tensor out{Shape(dims)};
  const double* src = input.ptr();
  double* dst = out.ptr();
  for_each_run(input.shape(), ranges, [&](std::size_t f, std::size_t p, std::size_t n) {
    std::copy_n(src + f, n, dst + p);
  });
  return out;
}

Tensor unslice(const Tensor& part, const Shape& full, const std::vector<Range>& ranges) {
  check_ranges(full, ranges, "unslice");
  for (std::size_t a = 0; a < ranges.size(); ++a)
    if (ranges[a].stop - ranges[a].start != part.shape()[a])
      throw ShapeError("unslice: part " + part.shape().str() + " does not fit ranges in " +
                       full.str());
  Tensor out{full};
  const double* src = part.ptr();
  double* dst = out.ptr();
  for_each_run(full, ranges, [&](std::size_t f, std::size_t p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dst[f + i] += src[p + i];
  });
  return out;
}

Tensor concat_channels(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  const Shape& first = parts[0].shape();
  if (first.rank() < 2) throw ShapeError("concat_channels: rank must be >= 2");
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.rank() == first.rank();
    for (std::size_t a = 0; ok && a < s.rank(); ++a)
      if (a != 1 && s.dims()[a] != first.dims()[a]) ok = false;
    if (!ok)
      throw ShapeError("concat_channels: " + s.str() + " incompatible with " + first.str());
    channels += s.dims()[1];
  }
  std::vector<std::size_t> dims = first.dims();
  dims[1] = channels;
  Tensor out{Shape(dims)};
  const std::size_t batch = dims[0];
  const std::size_t inner = first.numel() / (first.dims()[0] * first.dims()[1]);
  double* dst = out.ptr();
  for (std::size_t b = 0; b < batch; ++b)
    for (const auto& p : parts) {
      const std::size_t block = p.shape().dims()[1] * inner;
      std::copy_n(p.ptr() + b * block, block, dst);
      dst += block;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {

std::vector<std::size_t> reduction_map(const Shape& input, const std::vector<std::size_t>& axes,
                                       Shape& kept_shape) {
  const std::size_t rank = input.rank();
  std::vector<bool> reduced(rank, false);
  for (std::size_t a : axes) {
    if (a >= rank)
      throw ShapeError("reduce: axis " + std::to_string(a) + " invalid for " + input.str());
    if (reduced[a]) throw ShapeError("reduce: axis " + std::to_string(a) + " listed twice");
    reduced[a] = true;
  }
  std::vector<std::size_t> kept = input.dims();
  for (std::size_t a = 0; a < rank; ++a)
    if (reduced[a]) kept[a] = 1;
  kept_shape = Shape(kept);
  const auto ostr = kept_shape.strides();
  std::vector<std::size_t> map(input.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t i = 0; i < map.size(); ++i) {
    std::size_t off = 0;
    for (std::size_t a = 0; a < rank; ++a)
      if (!reduced[a]) off += idx[a] * ostr[a];
    map[i] = off;
    for (std::size_t a = rank; a-- > 0;) {
      if (++idx[a] < input.dims()[a]) break;
      idx[a] = 0;
    }
  }
  return map;
}

}  // namespace detail

Tensor reduce(const Tensor& input, const std::vector<std::size_t>& axes, ReduceKind kind,
              bool keep_dims) {
  if (input.numel() == 0) {
    if (kind != ReduceKind::Sum) throw DomainError("reduce: empty reduction window");
    return input;
  }
  Shape kept;
  const auto map = detail::reduction_map(input.shape(), axes, kept);
  const std::size_t window = input.numel() / kept.numel();
  Tensor out(kept, kind == ReduceKind::Max ? -std::numeric_limits<double>::infinity() : 0.0);
  const double* src = input.ptr();
  double* dst = out.ptr();
  if (kind == ReduceKind::Max) {
    for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] = std::max(dst[map[i]], src[i]);
  } else {
    for (std::size_t i = 0; i < map.size(); ++i) dst[map[i]] += src[i];
    if (kind == ReduceKind::Mean)
      for (double& v : out.data()) v /= static_cast<double>(window);
  }
  if (keep_dims) return out;
  std::vector<std::size_t> dims;
  for (std::size_t a = 0; a < input.rank(); ++a)
    if (std::find(axes.begin(), axes.end(), a) == axes.end()) dims.push_back(input.dim(a));
  if (dims.empty()) dims.push_back(1);
  return std::move(out).reshaped(Shape(dims));
}

// ---------------------------------------------------------------------------
// Elementwise

double numerically_stable_log_sigmoid(double x) noexcept {
  // log σ(x) = -softplus(-x)
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

Tensor map_unary(const Tensor& input, UnaryFn fn) {
  Tensor out = input;
  auto d = out.data();
  switch (fn.kind) {
    case UnaryKind::Neg:
      for (double& v : d) v = -v;
      break;
    case UnaryKind::Abs:
      for (double& v : d) v = std::abs(v);
      break;
    case UnaryKind::Exp:
      for (double& v : d) v = std::exp(v);
      break;
    case UnaryKind::Log:
      for (double& v : d) {
        if (!(v > 0.0)) throw DomainError("log of non-positive value " + std::to_string(v));
        v = std::log(v);
      }
      break;
    case UnaryKind::Sigmoid:
      for (double& v : d) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      break;
    case UnaryKind::Tanh:
      for (double& v : d) v = std::tanh(v);
      break;
    case UnaryKind::LeakyRelu:
      for (double& v : d) v = v > 0 ? v : fn.slope * v;
      break;
    case UnaryKind::LogSigmoid:
      for (double& v : d) v = numerically_stable_log_sigmoid(v);
      break;
  }
  return out;
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.rank() != b.rank())
    throw ShapeError("broadcast: rank mismatch " + a.str() + " vs " + b.str());
  std::vector<std::size_t> dims(a.rank());
  for (std::size_t i = 0; i < a.rank(); ++i) {
    const std::size_t x = a.dims()[i], y = b.dims()[i];
    if (x == y || y == 1)
      dims[i] = x;
    else if (x == 1)
      dims[i] = y;
    else
      throw ShapeError("broadcast: incompatible shapes " + a.str() + " vs " + b.str());
  }
  return Shape(dims);
}

namespace {

double apply(BinaryKind k, double x, double y) {
  switch (k) {
    case BinaryKind::Add:
      return x + y;
    case BinaryKind::Sub:
      return x - y;
    case BinaryKind::Mul:
      return x * y;
    case BinaryKind::Div:
      if (y == 0.0) throw DomainError("division by zero");
      return x / y;
  }
  return 0.0;
}

// Strides of `s` viewed in the broadcast shape `out` (0 on broadcast axes).
std::vector<std::size_t> broadcast_strides(const Shape& s, const Shape& out) {
  auto st = s.strides();
  for (std::size_t a = 0; a < s.rank(); ++a)
    if (s.dims()[a] == 1 && out.dims()[a] != 1) st[a] = 0;
  return st;
}

}  // namespace

Tensor zip_binary(const Tensor& a, const Tensor& b, BinaryKind kind) {
  if (a.shape() == b.shape()) {
    Tensor out{a.shape()};
    const double* x = a.ptr();
    const double* y = b.ptr();
    double* o = out.ptr();
    const std::size_t n = out.numel();
    switch (kind) {
      case BinaryKind::Add:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
        break;
      case BinaryKind::Sub:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
        break;
      case BinaryKind::Mul:
        for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
        break;
      case BinaryKind::Div:
        for (std::size_t i = 0; i < n; ++i) o[i] = apply(kind, x[i], y[i]);
        break;
    }
    return out;
  }
  const Shape os = broadcast_shape(a.shape(), b.shape());
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  const std::size_t rank = os.rank();
  Tensor out{os};
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) {
    out[i] = apply(kind, a[ia], b[ib]);
    for (std::size_t ax = rank; ax-- > 0;) {
      ia += sa[ax];
      ib += sb[ax];
      if (++idx[ax] < os.dims()[ax]) break;
      ia -= sa[ax] * idx[ax];
      ib -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return out;
}

Tensor sum_to_shape(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  if (grad.rank() != target.rank())
    throw ShapeError("sum_to_shape: rank mismatch " + grad.shape().str() + " vs " + target.str());
  std::vector<std::size_t> axes;
  for (std::size_t a = 0; a < target.rank(); ++a) {
    if (target.dims()[a] == grad.dim(a)) continue;
    if (target.dims()[a] != 1)
      throw ShapeError("sum_to_shape: " + grad.shape().str() + " not broadcast from " +
                       target.str());
    axes.push_back(a);
  }
  return reduce(grad, axes, ReduceKind::Sum, true);
}

}  // namespace xoct

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "xoct/error.hpp"

namespace xoct {

/// Ordered list of positive extents. 5-D activations use (B, C, D, H, W).
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const;
  std::size_t numel() const noexcept { return numel_; }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }

  /// Row-major strides in elements.
  std::vector<std::size_t> strides() const;

  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  void validate();

  std::vector<std::size_t> dims_;
  std::size_t numel_ = 0;  // rank 0 is the empty shape
};

/// Dense row-major tensor of doubles. Value semantics.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t numel() const noexcept { return data_.size(); }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  const double* ptr() const noexcept { return data_.data(); }
  double* ptr() noexcept { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// Element access by full multi-index; bounds checked.
  double at(std::initializer_list<std::size_t> index) const;
  double& at(std::initializer_list<std::size_t> index);

  /// Scalar value of a one-element tensor.
  double item() const;

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
};

// ---------------------------------------------------------------------------
// Convolution

using Triple = std::array<std::size_t, 3>;

/// Kernel geometry for a 3-D convolution. Spatial order is (D, H, W).
struct ConvSpec {
  Triple kernel{1, 1, 1};
  Triple stride{1, 1, 1};
  Triple pad{0, 0, 0};
  std::size_t groups = 1;

  /// floor((in + 2 pad - k) / stride) + 1; throws SpecError when < 1.
  std::size_t out_extent(std::size_t axis, std::size_t in) const;

  /// Cubic kernel with "same" padding, stride 1.
  static ConvSpec same(std::size_t kd, std::size_t kh, std::size_t kw, std::size_t groups = 1);
};

/// Cross-correlation over a zero-padded input.
/// input [B,Cin,D,H,W], weight [Cout,Cin/groups,kd,kh,kw], bias [Cout] (or empty tensor).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias, const ConvSpec& spec);

/// Adjoint of conv3d with respect to its input.
Tensor conv3d_backward_input(const Tensor& grad_out, const Tensor& weight, const Shape& input_shape,
                             const ConvSpec& spec);

/// Adjoints with respect to weight and bias, accumulated into the given tensors.
void conv3d_backward_params(const Tensor& grad_out, const Tensor& input, const ConvSpec& spec,
                            Tensor& grad_weight, Tensor* grad_bias);

/// Shape of conv3d's output (validates every contract).
Shape conv3d_output_shape(const Shape& input, const Shape& weight, const ConvSpec& spec);

// ---------------------------------------------------------------------------
// Resampling, layout

/// Nearest-neighbour replication by an integer factor per spatial axis.
Tensor upsample_nearest3d(const Tensor& input, const Triple& factor);
/// Adjoint of upsample_nearest3d: sums each replicated block.
Tensor upsample_nearest3d_backward(const Tensor& grad_out, const Triple& factor);

/// Zero padding of the three trailing axes of a 5-D tensor.
Tensor pad3d(const Tensor& input, const Triple& before, const Triple& after);

/// Half-open range [start, stop) on one axis.
struct Range {
  std::size_t start;
  std::size_t stop;
};

/// Contiguous copy of a hyper-rectangle; one range per axis.
Tensor slice(const Tensor& input, const std::vector<Range>& ranges);
/// Scatter-add of `part` into a zero tensor of `full` shape at `ranges`.
Tensor unslice(const Tensor& part, const Shape& full, const std::vector<Range>& ranges);

/// Stack along axis 1 in argument order. All other axes must agree.
Tensor concat_channels(std::span<const Tensor> parts);

// ---------------------------------------------------------------------------
// Reductions and elementwise maps

enum class ReduceKind { Sum, Mean, Max };

/// Reduces the listed axes. With keep_dims the reduced axes stay with extent 1;
/// otherwise they are removed (a full reduction yields shape {1}).
Tensor reduce(const Tensor& input, const std::vector<std::size_t>& axes, ReduceKind kind,
              bool keep_dims = false);

enum class UnaryKind { Neg, Abs, Exp, Log, Sigmoid, Tanh, LeakyRelu, LogSigmoid };

struct UnaryFn {
  UnaryKind kind;
  double slope = 0.2;  // leaky_relu only
};

Tensor map_unary(const Tensor& input, UnaryFn fn);

enum class BinaryKind { Add, Sub, Mul, Div };

/// Elementwise op. Ranks must match; an axis may differ only if one side has extent 1.
Tensor zip_binary(const Tensor& a, const Tensor& b, BinaryKind kind);

/// Broadcast result shape of two operands; throws ShapeError if incompatible.
Shape broadcast_shape(const Shape& a, const Shape& b);

/// Sums `grad` down to `target` (the inverse of broadcasting).
Tensor sum_to_shape(const Tensor& grad, const Shape& target);

double numerically_stable_log_sigmoid(double x) noexcept;

}  // namespace xoct

namespace xoct::detail {

/// For each input element (row-major), the flat index of the output cell it
/// reduces into. The output is laid out with reduced axes kept at extent 1.
std::vector<std::size_t> reduction_map(const Shape& input, const std::vector<std::size_t>& axes,
                                       Shape& kept_shape);

}  // namespace xoct::detail

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xoct/tensor.hpp"

namespace xoct::ad {

/// Trainable tensor with its gradient and Adam moments.
struct Parameter {
  Parameter() = default;
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;

  void zero_grad();
  std::size_t numel() const { return value.numel(); }
};

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Record-then-backward graph for one evaluation. Nodes are stored in
/// creation order, which is a topological order of the graph.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Free leaf whose adjoint can be read with grad() after backward().
  Var leaf(Tensor value, bool requires_grad = true);
  /// Leaf bound to a parameter. Its adjoint is added to `p.grad` by backward().
  /// With trainable == false the value is used as a constant.
  Var param(Parameter& p, bool trainable = true);

  /// Reverse sweep from a one-element loss. After it the graph is released.
  void backward(const Var& loss);
  bool released() const { return released_; }

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Accumulated adjoint of a node (zeros if it never received one).
  Tensor grad(const Var& v) const;
  const Tensor& grad_ref(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  /// Records an op. requires_grad is inherited from the parents.
  Var record(std::string_view op, Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  /// Adds `g` to the adjoint of node `id` (no-op if it does not require grad).
  void accumulate(std::size_t id, Tensor g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    std::string_view op;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };

  void check_open() const;

  std::vector<Node> nodes_;
  std::string_view current_op_;
  bool released_ = false;
};

// ---------------------------------------------------------------------------
// Differentiable ops

Var conv3d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec);
Var upsample_nearest3d(const Var& x, const Triple& factor);
Var pad3d(const Var& x, const Triple& before, const Triple& after);
Var slice(const Var& x, const std::vector<Range>& ranges);
Var concat_channels(const std::vector<Var>& parts);
Var reshape(const Var& x, Shape shape);

Var reduce(const Var& x, const std::vector<std::size_t>& axes, ReduceKind kind,
           bool keep_dims = false);
Var sum(const Var& x);
Var mean(const Var& x);

Var neg(const Var& x);
Var abs(const Var& x);
Var exp(const Var& x);
Var log(const Var& x);
Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var leaky_relu(const Var& x, double slope = 0.2);
/// log σ(x), evaluated without overflow for large |x|.
Var log_sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);

/// Per-(batch, channel) normalisation over all trailing axes, no affine terms.
Var instance_norm(const Var& x, double eps = 1e-5);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(double c, const Var& x) { return scale(x, c); }
inline Var operator-(const Var& x) { return neg(x); }

// ---------------------------------------------------------------------------
// Gradient checking

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Coordinates checked per tensor; 0 checks all. Sampled evenly.
  std::size_t max_coords = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst;  // "<tensor>[<index>]"
  std::size_t checked = 0;
  bool pass = true;
};

/// Loss over free inputs: f receives one leaf per input tensor.
using LeafLoss = std::function<Var(Tape&, std::span<const Var>)>;
/// Loss over parameters the closure binds itself (via Tape::param).
using ParamLoss = std::function<Var(Tape&)>;

/// Central differences against backward() for every input coordinate.
/// Relative error is |a - n| / max(|a|, |n|, 1e-8).
GradCheckReport grad_check(const LeafLoss& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt = {});
GradCheckReport grad_check_params(const ParamLoss& f, std::span<Parameter* const> params,
                                  const GradCheckOptions& opt = {});

}  // namespace xoct::ad

namespace xoct::ad::testing {

/// Scales every adjoint produced by the named op's backward rule by `factor`.
/// Empty name disables the fault. Used for negative controls.
void corrupt_backward(std::string op, double factor = 1.5);
std::string corrupted_op();

}  // namespace xoct::ad::testing

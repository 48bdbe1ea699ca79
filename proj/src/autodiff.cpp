#include "xoct/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace xoct::ad {

namespace {

struct Fault {
  std::string op;
  double factor = 1.0;
};

Fault& fault() {
  static Fault f;
  return f;
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

Tensor scaled(Tensor t, double c) {
  for (double& v : t.data()) v *= c;
  return t;
}

Tape& tape_of(std::initializer_list<const Var*> vars) {
  Tape* t = nullptr;
  for (const Var* v : vars) {
    if (!v->valid()) throw Error("autodiff: operation on an unbound Var");
    if (t && &v->tape() != t) throw Error("autodiff: operands recorded on different tapes");
    t = &v->tape();
  }
  return *t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameter, Var, Tape

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.shape()),
      m(value.shape()),
      v(value.shape()) {}

void Parameter::zero_grad() {
  if (!(grad.shape() == value.shape())) grad = Tensor(value.shape());
  std::fill(grad.data().begin(), grad.data().end(), 0.0);
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

void Tape::check_open() const {
  if (released_) throw Error("autodiff: tape already released by backward()");
}

Var Tape::constant(Tensor value) { return leaf(std::move(value), false); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  check_open();
  Node n;
  n.value = std::move(value);
  n.op = "leaf";
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p, bool trainable) {
  Var v = leaf(p.value, trainable);
  if (trainable) nodes_.back().param = &p;
  return v;
}

Var Tape::record(std::string_view op, Tensor value, std::vector<std::size_t> parents,
                 BackwardFn fn) {
  check_open();
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = std::any_of(parents.begin(), parents.end(),
                                [&](std::size_t p) { return nodes_[p].requires_grad; });
  if (n.requires_grad) {
    n.parents = std::move(parents);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, Tensor g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (!(g.shape() == n.value.shape()))
    throw ShapeError("autodiff: adjoint " + g.shape().str() + " for node of shape " +
                     n.value.shape().str() + " in op " + std::string(current_op_));
  const Fault& f = fault();
  if (!f.op.empty() && f.op == current_op_) g = scaled(std::move(g), f.factor);
  if (n.grad.numel() == 0) {
    n.grad = std::move(g);
    return;
  }
  double* dst = n.grad.ptr();
  const double* src = g.ptr();
  for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += src[i];
}

Tensor Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  return n.grad.numel() ? n.grad : zeros_like(n.value);
}

void Tape::backward(const Var& loss) {
  check_open();
  if (&loss.tape() != this) throw Error("autodiff: loss belongs to a different tape");
  if (loss.value().numel() != 1)
    throw ShapeError("backward: loss must be a single scalar, got " + loss.shape().str());
  Node& root = nodes_[loss.id()];
  if (root.requires_grad) root.grad = Tensor(root.value.shape(), 1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.numel() == 0) continue;
    if (n.backward) {
      current_op_ = n.op;
      n.backward(*this, i);
      current_op_ = {};
    }
    if (n.param) {
      Tensor& pg = n.param->grad;
      if (!(pg.shape() == n.value.shape())) pg = Tensor(n.value.shape());
      for (std::size_t k = 0; k < pg.numel(); ++k) pg[k] += n.grad[k];
    }
  }
  for (Node& n : nodes_) n.backward = nullptr;
  released_ = true;
}

// ---------------------------------------------------------------------------
// Layout ops

Var conv3d(const Var& x, const Var& w, const std::optional<Var>& bias, const ConvSpec& spec) {
  Tape& t = bias ? tape_of({&x, &w, &*bias}) : tape_of({&x, &w});
  Tensor out = xoct::conv3d(x.value(), w.value(), bias ? bias->value() : Tensor(), spec);
  std::vector<std::size_t> parents{x.id(), w.id()};
  if (bias) parents.push_back(bias->id());
  const std::size_t xi = x.id(), wi = w.id();
  const std::optional<std::size_t> bi = bias ? std::optional(bias->id()) : std::nullopt;
  return t.record("conv3d", std::move(out), parents, [=](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    if (tp.requires_grad(xi))
      tp.accumulate(xi, conv3d_backward_input(g, tp.value(wi), tp.value(xi).shape(), spec));
    if (tp.requires_grad(wi)) {
      Tensor gw(tp.value(wi).shape());
      conv3d_backward_params(g, tp.value(xi), spec, gw, nullptr);
      tp.accumulate(wi, std::move(gw));
    }
    if (bi && tp.requires_grad(*bi)) {
      Tensor gb = xoct::reduce(g, {0, 2, 3, 4}, ReduceKind::Sum);
      tp.accumulate(*bi, std::move(gb));
    }
  });
}

Var upsample_nearest3d(const Var& x, const Triple& factor) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record("upsample_nearest3d", xoct::upsample_nearest3d(x.value(), factor), {xi},
                  [=](Tape& tp, std::size_t self) {
                    tp.accumulate(xi, upsample_nearest3d_backward(tp.grad_ref(self), factor));
                  });
}

Var pad3d(const Var& x, const Triple& before, const Triple& after) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record("pad3d", xoct::pad3d(x.value(), before, after), {xi},
                  [=](Tape& tp, std::size_t self) {
                    const auto& s = tp.value(xi).shape().dims();
                    std::vector<Range> r{{0, s[0]}, {0, s[1]}};
                    for (std::size_t a = 0; a < 3; ++a) r.push_back({before[a], before[a] + s[2 + a]});
                    tp.accumulate(xi, xoct::slice(tp.grad_ref(self), r));
                  });
}

Var slice(const Var& x, const std::vector<Range>& ranges) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record("slice", xoct::slice(x.value(), ranges), {xi},
                  [=](Tape& tp, std::size_t self) {
                    tp.accumulate(xi, unslice(tp.grad_ref(self), tp.value(xi).shape(), ranges));
                  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no parts");
  Tape& t = tape_of({&parts[0]});
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    tape_of({&parts[0], &p});
    values.push_back(p.value());
    ids.push_back(p.id());
  }
  Tensor out = xoct::concat_channels(values);
  return t.record("concat_channels", std::move(out), ids, [ids](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad_ref(self);
    std::vector<Range> r;
    for (std::size_t d : g.shape().dims()) r.push_back({0, d});
    std::size_t c0 = 0;
    for (std::size_t id : ids) {
      const std::size_t c = tp.value(id).shape()[1];
      r[1] = {c0, c0 + c};
      c0 += c;
      if (tp.requires_grad(id)) tp.accumulate(id, xoct::slice(g, r));
    }
  });
}

Var reshape(const Var& x, Shape shape) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record("reshape", x.value().reshaped(std::move(shape)), {xi},
                  [=](Tape& tp, std::size_t self) {
                    tp.accumulate(xi, tp.grad_ref(self).reshaped(tp.value(xi).shape()));
                  });
}

// ---------------------------------------------------------------------------
// Reductions

Var reduce(const Var& x, const std::vector<std::size_t>& axes, ReduceKind kind, bool keep_dims) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  Tensor out = xoct::reduce(x.value(), axes, kind, keep_dims);
  const char* name = kind == ReduceKind::Sum ? "sum" : kind == ReduceKind::Mean ? "mean" : "max";
  return t.record(name, std::move(out), {xi}, [=](Tape& tp, std::size_t self) {
    const Tensor& x_val = tp.value(xi);
    const Tensor& g = tp.grad_ref(self);
    Shape kept;
    const auto map = detail::reduction_map(x_val.shape(), axes, kept);
    Tensor gx(x_val.shape());
    if (kind == ReduceKind::Max) {
      const Tensor& y = tp.value(self);
      std::vector<bool> taken(kept.numel(), false);
      for (std::size_t i = 0; i < map.size(); ++i)
        if (!taken[map[i]] && x_val[i] == y[map[i]]) {
          gx[i] = g[map[i]];
          taken[map[i]] = true;
        }
    } else {
      const double c = kind == ReduceKind::Mean
                           ? 1.0 / static_cast<double>(x_val.numel() / kept.numel())
                           : 1.0;
      for (std::size_t i = 0; i < map.size(); ++i) gx[i] = g[map[i]] * c;
    }
    tp.accumulate(xi, std::move(gx));
  });
}

Var sum(const Var& x) {
  std::vector<std::size_t> axes(x.shape().rank());
  for (std::size_t a = 0; a < axes.size(); ++a) axes[a] = a;
  return reduce(x, axes, ReduceKind::Sum);
}

Var mean(const Var& x) {
  std::vector<std::size_t> axes(x.shape().rank());
  for (std::size_t a = 0; a < axes.size(); ++a) axes[a] = a;
  return reduce(x, axes, ReduceKind::Mean);
}

// ---------------------------------------------------------------------------
// Unary

namespace {

// dfn(x, y) is the local derivative dy/dx.
template <typename DFn>
Var unary(const Var& x, const char* name, UnaryFn fn, DFn dfn) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record(name, map_unary(x.value(), fn), {xi}, [=](Tape& tp, std::size_t self) {
    const Tensor& xv = tp.value(xi);
    const Tensor& yv = tp.value(self);
    const Tensor& g = tp.grad_ref(self);
    Tensor gx(xv.shape());
    for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] = g[i] * dfn(xv[i], yv[i]);
    tp.accumulate(xi, std::move(gx));
  });
}

}  // namespace

Var neg(const Var& x) {
  return unary(x, "neg", {UnaryKind::Neg}, [](double, double) { return -1.0; });
}
Var abs(const Var& x) {
  return unary(x, "abs", {UnaryKind::Abs},
               [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}
Var exp(const Var& x) {
  return unary(x, "exp", {UnaryKind::Exp}, [](double, double y) { return y; });
}
Var log(const Var& x) {
  return unary(x, "log", {UnaryKind::Log}, [](double v, double) { return 1.0 / v; });
}
Var sigmoid(const Var& x) {
  return unary(x, "sigmoid", {UnaryKind::Sigmoid}, [](double, double y) { return y * (1.0 - y); });
}
Var tanh(const Var& x) {
  return unary(x, "tanh", {UnaryKind::Tanh}, [](double, double y) { return 1.0 - y * y; });
}
Var leaky_relu(const Var& x, double slope) {
  return unary(x, "leaky_relu", {UnaryKind::LeakyRelu, slope},
               [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}
Var log_sigmoid(const Var& x) {
  // d/dx log σ(x) = σ(-x)
  return unary(x, "log_sigmoid", {UnaryKind::LogSigmoid}, [](double v, double) {
    return v >= 0 ? std::exp(-v) / (1.0 + std::exp(-v)) : 1.0 / (1.0 + std::exp(v));
  });
}

// ---------------------------------------------------------------------------
// Binary

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of({&a, &b});
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("add", zip_binary(a.value(), b.value(), BinaryKind::Add), {ai, bi},
                  [=](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_ref(self);
                    if (tp.requires_grad(ai)) tp.accumulate(ai, sum_to_shape(g, tp.value(ai).shape()));
                    if (tp.requires_grad(bi)) tp.accumulate(bi, sum_to_shape(g, tp.value(bi).shape()));
                  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of({&a, &b});
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("sub", zip_binary(a.value(), b.value(), BinaryKind::Sub), {ai, bi},
                  [=](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_ref(self);
                    if (tp.requires_grad(ai)) tp.accumulate(ai, sum_to_shape(g, tp.value(ai).shape()));
                    if (tp.requires_grad(bi))
                      tp.accumulate(bi, scaled(sum_to_shape(g, tp.value(bi).shape()), -1.0));
                  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = tape_of({&a, &b});
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("mul", zip_binary(a.value(), b.value(), BinaryKind::Mul), {ai, bi},
                  [=](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_ref(self);
                    const Tensor& av = tp.value(ai);
                    const Tensor& bv = tp.value(bi);
                    if (tp.requires_grad(ai))
                      tp.accumulate(ai, sum_to_shape(zip_binary(g, bv, BinaryKind::Mul), av.shape()));
                    if (tp.requires_grad(bi))
                      tp.accumulate(bi, sum_to_shape(zip_binary(g, av, BinaryKind::Mul), bv.shape()));
                  });
}

Var div(const Var& a, const Var& b) {
  Tape& t = tape_of({&a, &b});
  const std::size_t ai = a.id(), bi = b.id();
  return t.record("div", zip_binary(a.value(), b.value(), BinaryKind::Div), {ai, bi},
                  [=](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad_ref(self);
                    const Tensor& av = tp.value(ai);
                    const Tensor& bv = tp.value(bi);
                    if (tp.requires_grad(ai))
                      tp.accumulate(ai, sum_to_shape(zip_binary(g, bv, BinaryKind::Div), av.shape()));
                    if (tp.requires_grad(bi)) {
                      // d(a/b)/db = -(a/b) / b
                      Tensor q = zip_binary(tp.value(self), bv, BinaryKind::Div);
                      Tensor gb = zip_binary(g, q, BinaryKind::Mul);
                      tp.accumulate(bi, scaled(sum_to_shape(gb, bv.shape()), -1.0));
                    }
                  });
}

Var scale(const Var& x, double c) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  return t.record("scale", scaled(x.value(), c), {xi}, [=](Tape& tp, std::size_t self) {
    tp.accumulate(xi, scaled(tp.grad_ref(self), c));
  });
}

Var add_scalar(const Var& x, double c) {
  Tape& t = tape_of({&x});
  const std::size_t xi = x.id();
  Tensor out = x.value();
  for (double& v : out.data()) v += c;
  return t.record("add_scalar", std::move(out), {xi}, [=](Tape& tp, std::size_t self) {
    tp.accumulate(xi, tp.grad_ref(self));
  });
}

// ---------------------------------------------------------------------------
// Instance normalisation

Var instance_norm(const Var& x, double eps) {
  Tape& t = tape_of({&x});
  const Tensor& xv = x.value();
  if (xv.rank() < 3) throw ShapeError("instance_norm: expected [B,C,...], got " + xv.shape().str());
  const std::size_t groups = xv.dim(0) * xv.dim(1);
  const std::size_t n = xv.numel() / groups;
  Tensor y(xv.shape());
  Tensor inv_std(Shape{groups});
  for (std::size_t g = 0; g < groups; ++g) {
    const double* src = xv.ptr() + g * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[g] = is;
    double* dst = y.ptr() + g * n;
    for (std::size_t i = 0; i < n; ++i) dst[i] = (src[i] - mu) * is;
  }
  const std::size_t xi = x.id();
  return t.record("instance_norm", std::move(y), {xi},
                  [xi, inv_std = std::move(inv_std), groups, n](Tape& tp, std::size_t self) {
                    const Tensor& yv = tp.value(self);
                    const Tensor& g = tp.grad_ref(self);
                    Tensor gx(yv.shape());
                    for (std::size_t k = 0; k < groups; ++k) {
                      const double* gy = g.ptr() + k * n;
                      const double* yy = yv.ptr() + k * n;
                      double mg = 0.0, mgy = 0.0;
                      for (std::size_t i = 0; i < n; ++i) {
                        mg += gy[i];
                        mgy += gy[i] * yy[i];
                      }
                      mg /= static_cast<double>(n);
                      mgy /= static_cast<double>(n);
                      double* dst = gx.ptr() + k * n;
                      for (std::size_t i = 0; i < n; ++i)
                        dst[i] = inv_std[k] * (gy[i] - mg - yy[i] * mgy);
                    }
                    tp.accumulate(xi, std::move(gx));
                  });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

std::vector<std::size_t> coords(std::size_t n, std::size_t max_coords) {
  std::vector<std::size_t> c;
  if (max_coords == 0 || n <= max_coords) {
    c.resize(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = i;
  } else {
    for (std::size_t k = 0; k < max_coords; ++k) c.push_back(k * n / max_coords);
  }
  return c;
}

double checked_scalar(const Var& loss) {
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss evaluated to a non-finite value");
  return v;
}

void compare(GradCheckReport& r, const std::string& name, std::size_t index, double analytic,
             double numeric, double tol) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  const double rel = std::abs(analytic - numeric) / denom;
  ++r.checked;
  if (r.worst.empty() || rel > r.max_rel_error) {
    r.max_rel_error = rel;
    r.worst = name + "[" + std::to_string(index) + "]";
  }
  if (rel > tol) r.pass = false;
}

}  // namespace

GradCheckReport grad_check(const LeafLoss& f, std::vector<Tensor> inputs,
                           const GradCheckOptions& opt) {
  std::vector<Tensor> analytic;
  {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& in : inputs) leaves.push_back(t.leaf(in));
    Var loss = f(t, leaves);
    checked_scalar(loss);
    t.backward(loss);
    for (const auto& l : leaves) analytic.push_back(t.grad(l));
  }
  auto eval = [&]() {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& in : inputs) leaves.push_back(t.leaf(in, false));
    return checked_scalar(f(t, leaves));
  };
  GradCheckReport r;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j : coords(inputs[i].numel(), opt.max_coords)) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + opt.eps;
      const double fp = eval();
      inputs[i][j] = orig - opt.eps;
      const double fm = eval();
      inputs[i][j] = orig;
      compare(r, "input" + std::to_string(i), j, analytic[i][j], (fp - fm) / (2 * opt.eps), opt.tol);
    }
  return r;
}

GradCheckReport grad_check_params(const ParamLoss& f, std::span<Parameter* const> params,
                                  const GradCheckOptions& opt) {
  for (Parameter* p : params) p->zero_grad();
  std::vector<Tensor> analytic;
  {
    Tape t;
    Var loss = f(t);
    checked_scalar(loss);
    t.backward(loss);
    for (Parameter* p : params) analytic.push_back(p->grad);
  }
  auto eval = [&]() {
    Tape t;
    return checked_scalar(f(t));
  };
  GradCheckReport r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    for (std::size_t j : coords(p.numel(), opt.max_coords)) {
      const double orig = p.value[j];
      p.value[j] = orig + opt.eps;
      const double fp = eval();
      p.value[j] = orig - opt.eps;
      const double fm = eval();
      p.value[j] = orig;
      compare(r, p.name, j, analytic[i][j], (fp - fm) / (2 * opt.eps), opt.tol);
    }
  }
  return r;
}

}  // namespace xoct::ad

namespace xoct::ad::testing {

void corrupt_backward(std::string op, double factor) {
  fault().op = std::move(op);
  fault().factor = factor;
}

std::string corrupted_op() { return fault().op; }

}  // namespace xoct::ad::testing

#include "xoct/optim.hpp"

#include <cmath>

#include "xoct/binary_io.hpp"

namespace xoct::ad {

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer: beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer: beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be > 0");
}

void adam_step(std::span<Parameter* const> params, const OptimizerConfig& cfg) {
  cfg.validate();
  for (const Parameter* p : params) {
    if (!(p->grad.shape() == p->value.shape()))
      throw ShapeError("adam_step: gradient of '" + p->name + "' has shape " +
                       p->grad.shape().str());
    if (!p->grad.all_finite())
      throw NumericError("adam_step: non-finite gradient in parameter '" + p->name + "'");
  }
  for (Parameter* p : params) {
    if (!(p->m.shape() == p->value.shape())) p->m = Tensor(p->value.shape());
    if (!(p->v.shape() == p->value.shape())) p->v = Tensor(p->value.shape());
    ++p->step;
    const double t = static_cast<double>(p->step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    double* theta = p->value.ptr();
    double* m = p->m.ptr();
    double* v = p->v.ptr();
    const double* g = p->grad.ptr();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / c1;
      const double v_hat = v[i] / c2;
      theta[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

std::size_t count_scalars(std::span<Parameter* const> params) {
  std::size_t n = 0;
  for (const Parameter* p : params) n += p->numel();
  return n;
}

// ---------------------------------------------------------------------------

const Tensor& Checkpoint::get(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw Error("checkpoint: missing entry '" + std::string(name) + "'");
}

bool Checkpoint::has(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

void Checkpoint::put(std::string name, Tensor value) {
  for (auto& t : tensors)
    if (t.name == name) {
      t.value = std::move(value);
      return;
    }
  tensors.push_back({std::move(name), std::move(value)});
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  io::ByteWriter w;
  w.bytes("XCKP");
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(ckpt.metadata.size());
  w.bytes(ckpt.metadata);
  w.le<std::uint64_t>(ckpt.tensors.size());
  for (const auto& [name, value] : ckpt.tensors) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(value.rank()));
    for (std::size_t d : value.shape().dims()) w.le<std::uint64_t>(d);
    for (double v : value.data()) w.le<double>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  io::ByteReader r(bytes);
  if (r.bytes(4, "magic") != "XCKP") throw ParseError("checkpoint: bad magic", 0);
  const std::size_t version_at = r.offset();
  if (r.le<std::uint32_t>("version") != kCheckpointVersion)
    throw ParseError("checkpoint: unsupported version", version_at);
  Checkpoint ckpt;
  const auto meta_len = r.le<std::uint64_t>("metadata length");
  ckpt.metadata = std::string(r.bytes(meta_len, "metadata"));
  const auto count = r.le<std::uint64_t>("entry count");
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto name_len = r.le<std::uint32_t>("name length");
    std::string name(r.bytes(name_len, "name"));
    const std::size_t rank_at = r.offset();
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ParseError("checkpoint: invalid rank for '" + name + "'", rank_at);
    std::vector<std::size_t> dims;
    std::size_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const std::size_t at = r.offset();
      const auto d = r.le<std::uint64_t>("dimension");
      if (d == 0 || d > r.remaining()) throw ParseError("checkpoint: invalid extent for '" + name + "'", at);
      dims.push_back(d);
      numel *= d;
    }
    if (numel > r.remaining() / 8)
      throw ParseError("checkpoint: truncated values for '" + name + "'", r.offset());
    std::vector<double> values(numel);
    for (double& v : values) v = r.le<double>("value");
    ckpt.tensors.push_back({std::move(name), Tensor(Shape(dims), std::move(values))});
  }
  if (r.remaining() != 0) throw ParseError("checkpoint: trailing bytes", r.offset());
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  io::write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path)); }

void export_parameters(std::span<Parameter* const> params, Checkpoint& ckpt,
                       bool with_optimizer_state) {
  for (const Parameter* p : params) {
    ckpt.put(p->name, p->value);
    if (!with_optimizer_state) continue;
    ckpt.put(p->name + "#m", p->m);
    ckpt.put(p->name + "#v", p->v);
    ckpt.put(p->name + "#t", Tensor::scalar(static_cast<double>(p->step)));
  }
}

void import_parameters(const Checkpoint& ckpt, std::span<Parameter* const> params,
                       bool with_optimizer_state) {
  auto fetch = [&](const std::string& name, const Shape& shape) {
    const Tensor& t = ckpt.get(name);
    if (!(t.shape() == shape))
      throw ShapeError("checkpoint: entry '" + name + "' has shape " + t.shape().str() +
                       ", expected " + shape.str());
    return t;
  };
  for (Parameter* p : params) {
    p->value = fetch(p->name, p->value.shape());
    p->zero_grad();
    if (!with_optimizer_state) continue;
    p->m = fetch(p->name + "#m", p->value.shape());
    p->v = fetch(p->name + "#v", p->value.shape());
    p->step = static_cast<std::uint64_t>(fetch(p->name + "#t", Shape{1}).item());
  }
}

}  // namespace xoct::ad

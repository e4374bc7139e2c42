#include "cvseg/numerics/layers.hpp"

#include <cmath>

#include "cvseg/errors.hpp"

namespace cvseg {

DiffArray& ParamStore::insert(const std::string& name, DiffArray array, bool trainable) {
  for (const Entry& e : entries_) {
    if (e.name == name) throw ValidationError("duplicate parameter name: " + name);
  }
  entries_.push_back(Entry{name, std::move(array), trainable});
  return entries_.back().array;
}

DiffArray ParamStore::add_glorot(const std::string& name, Shape shape, Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  DiffArray a = DiffArray::zeros(std::move(shape), true);
  for (Index i = 0; i < a.size(); ++i) a.values_mut()[i] = rng.uniform(-bound, bound);
  return insert(name, a, true);
}

DiffArray ParamStore::add_constant(const std::string& name, Shape shape, double value, bool trainable) {
  return insert(name, DiffArray::full(std::move(shape), value, trainable), trainable);
}

std::optional<DiffArray> ParamStore::find(const std::string& name) const {
  for (const Entry& e : entries_) {
    if (e.name == name) return e.array;
  }
  return std::nullopt;
}

void ParamStore::zero_grad() {
  for (Entry& e : entries_) e.array.zero_grad();
}

Index ParamStore::parameter_count() const {
  Index n = 0;
  for (const Entry& e : entries_) {
    if (e.trainable) n += e.array.size();
  }
  return n;
}

Linear make_linear(ParamStore& store, const std::string& prefix, Index in, Index out, bool with_bias, Rng& rng) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_glorot(prefix + ".weight", {in, out}, in, out, rng);
  if (with_bias) l.bias = store.add_constant(prefix + ".bias", {out}, 0.0);
  return l;
}

DiffArray apply(const Linear& layer, const DiffArray& x) {
  if (x.dim(-1) != layer.in) {
    throw DimensionError("linear layer expects width " + std::to_string(layer.in) + ", got " +
                         shape_string(x.shape()));
  }
  DiffArray y = matmul(x, layer.weight);
  return layer.bias.defined() ? add(y, layer.bias) : y;
}

Norm make_norm(ParamStore& store, const std::string& prefix, Index width) {
  Norm n;
  n.gamma = store.add_constant(prefix + ".gamma", {width}, 1.0);
  n.beta = store.add_constant(prefix + ".beta", {width}, 0.0);
  n.stats.mean = store.add_constant(prefix + ".running_mean", {width}, 0.0, false);
  n.stats.var = store.add_constant(prefix + ".running_var", {width}, 1.0, false);
  n.stats.updates = store.add_constant(prefix + ".running_updates", {1}, 0.0, false);
  return n;
}

MlpBlock make_mlp(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng) {
  MlpBlock b;
  b.linear = make_linear(store, prefix + ".linear", in, out, true, rng);
  b.norm = make_norm(store, prefix + ".norm", out);
  return b;
}

DiffArray apply(MlpBlock& block, const DiffArray& x, const ForwardMode& mode) {
  NormOptions opts{mode.training, mode.norm_momentum, mode.norm_epsilon};
  DiffArray h = batch_norm(apply(block.linear, x), block.norm.gamma, block.norm.beta, block.norm.stats, opts);
  return leaky_relu(h, mode.leaky_slope);
}

}  // namespace cvseg

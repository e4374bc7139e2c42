#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cvseg/numerics/ops.hpp"
#include "cvseg/random.hpp"

namespace cvseg {

/// Named registry of every array a model owns. Trainable entries receive
/// gradients and optimizer updates; buffers (normalization running
/// statistics) are only checkpointed.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    DiffArray array;
    bool trainable = true;
  };

  // Glorot-uniform weights, bound sqrt(6 / (fan_in + fan_out)).
  DiffArray add_glorot(const std::string& name, Shape shape, Index fan_in, Index fan_out, Rng& rng);
  DiffArray add_constant(const std::string& name, Shape shape, double value, bool trainable = true);

  const std::vector<Entry>& entries() const { return entries_; }
  std::optional<DiffArray> find(const std::string& name) const;

  void zero_grad();
  // Sum of element counts over trainable entries.
  Index parameter_count() const;

 private:
  DiffArray& insert(const std::string& name, DiffArray array, bool trainable);
  std::vector<Entry> entries_;
};

struct Linear {
  DiffArray weight;  // [in, out]
  DiffArray bias;    // [out]; undefined when bias-free
  Index in = 0;
  Index out = 0;
};

Linear make_linear(ParamStore& store, const std::string& prefix, Index in, Index out, bool with_bias, Rng& rng);

// x[..., in] -> [..., out]
DiffArray apply(const Linear& layer, const DiffArray& x);

struct Norm {
  DiffArray gamma;
  DiffArray beta;
  NormStats stats;
};

Norm make_norm(ParamStore& store, const std::string& prefix, Index width);

struct ForwardMode {
  bool training = true;
  double norm_momentum = 0.99;
  double norm_epsilon = 1e-6;
  double leaky_slope = 0.2;
};

// A shared "mlp" unit: linear -> normalization -> leaky ReLU.
struct MlpBlock {
  Linear linear;
  Norm norm;
};

MlpBlock make_mlp(ParamStore& store, const std::string& prefix, Index in, Index out, Rng& rng);

DiffArray apply(MlpBlock& block, const DiffArray& x, const ForwardMode& mode);

}  // namespace cvseg

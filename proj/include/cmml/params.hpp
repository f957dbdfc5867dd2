#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

// Named parameter collection. std::map keeps iteration order deterministic,
// which every training path relies on.
using ParamMap = std::map<std::string, Tensor>;

// Glorot-style uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(int rows, int cols, RngStream& rng);

// FNV-1a over the raw double bits of every parameter, in name order.
std::uint64_t param_checksum(const ParamMap& params);

// Resolves parameter names to tensors. During training an override map holds
// tape-bound versions of (a subset of) the raw parameters, so the same
// forward code serves both training and pure inference.
class ParamLookup {
 public:
  explicit ParamLookup(const ParamMap& raw) : raw_(&raw) {}
  ParamLookup(const ParamMap& raw, const ParamMap& bound) : raw_(&raw), bound_(&bound) {}

  const Tensor& operator()(const std::string& name) const;
  bool has(const std::string& name) const;

 private:
  const ParamMap* raw_;
  const ParamMap* bound_ = nullptr;
};

}  // namespace cmml

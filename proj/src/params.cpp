#include "cmml/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace cmml {

Tensor glorot_uniform(int rows, int cols, RngStream& rng) {
  double a = std::sqrt(6.0 / (rows + cols));
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.uniform(-a, a);
  return Tensor(rows, cols, std::move(v));
}

const Tensor& ParamLookup::operator()(const std::string& name) const {
  if (bound_) {
    auto it = bound_->find(name);
    if (it != bound_->end()) return it->second;
  }
  auto it = raw_->find(name);
  if (it == raw_->end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

bool ParamLookup::has(const std::string& name) const {
  if (bound_ && bound_->count(name)) return true;
  return raw_->count(name) > 0;
}

std::uint64_t param_checksum(const ParamMap& params) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& [name, tensor] : params) {
    mix(name.data(), name.size());
    const auto& v = tensor.values();
    mix(v.data(), v.size() * sizeof(double));
  }
  return h;
}

}  // namespace cmml

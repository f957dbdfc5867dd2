#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "cmml/params.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Per-parameter Adam moments. Shapes mirror the parameter map they were
// built from; the step count increments by exactly one per step().
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const ParamMap& params, AdamConfig config = {});

  // Applies one Adam update in place. Parameters without a gradient entry
  // are left untouched; shape mismatches throw.
  void step(ParamMap& params, const ParamMap& grads);

  std::int64_t step_count() const { return t_; }
  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }

  const ParamMap& first_moments() const { return m_; }
  const ParamMap& second_moments() const { return v_; }

  // Checkpoint restore path.
  void restore(ParamMap m, ParamMap v, std::int64_t t);

 private:
  AdamConfig config_;
  ParamMap m_;
  ParamMap v_;
  std::int64_t t_ = 0;
};

// Functional form of the update.
void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state);

}  // namespace cmml

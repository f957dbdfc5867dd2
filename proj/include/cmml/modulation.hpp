#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cmml/backbone.hpp"
#include "cmml/params.hpp"
#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

struct ModulationConfig {
  enum class Variant { kWeight, kSigmoidLayer, kFilm, kSoftModular };

  Variant variant = Variant::kFilm;
  std::vector<int> hyper_hidden{64, 64, 64};

  // Soft modularization: k module layers of m modules, each producing a
  // d-wide representation, routed by context-conditioned probability columns.
  int soft_layers = 3;
  int soft_modules = 4;
  int soft_width = 32;
  int route_width = 64;

  void validate() const;
};

ModulationConfig::Variant modulation_variant_from_string(const std::string& s);
std::string to_string(ModulationConfig::Variant v);

// Per-layer routing probabilities; each of the `layers` matrices is
// modules x modules and every column (one per source module) sums to 1.
struct RouteTensor {
  int layers = 0;
  int modules = 0;
  std::vector<Tensor> p;

  void validate(double tol = 1e-6) const;
};

// Weight parity between the soft-modular base network and the dense backbone
// it replaces: m modules of d x d weights per layer against one dense
// hidden-width^2 layer.
struct SoftParity {
  long module_weights_per_layer = 0;
  long dense_weights_per_layer = 0;
  bool matched = false;
};

SoftParity soft_parameter_parity(const ModulationConfig& mod, const BackboneConfig& backbone);

// Hypernetwork parameters for the non-modular variants: a shared ReLU trunk
// over the conditioning vector plus per-target linear heads.
void init_hyper_params(const ModulationConfig& mod, int conditioning_dim,
                       const BackboneConfig& backbone, ParamMap& params, RngStream& rng);

// Soft-modular parameters: input projection, per-layer module transforms,
// scalar readout, and the route network. Throws if the parameter-count
// parity with the configured backbone does not hold exactly.
void init_soft_params(const ModulationConfig& mod, int conditioning_dim, int pair_dim,
                      const BackboneConfig& backbone, ParamMap& params, RngStream& rng);

// Final-layer weight generation: the hypernetwork emits (w_h, b_h) per query
// example and the score is w_h . h_ui + b_h, replacing the backbone head.
Tensor weight_modulation(const Tensor& c_h, const Tensor& h_ui, const ModulationConfig& mod,
                         const ParamLookup& params);

// Per-layer sigmoid gating of the backbone's hidden outputs.
Tensor layer_mod_sigmoid(const Tensor& c_h, const Tensor& e_u, const Tensor& e_i,
                         const BackboneConfig& backbone, const ModulationConfig& mod,
                         const ParamLookup& params);

// Feature-wise linear modulation: per-layer scale and shift of the hidden
// outputs, generated from the hybrid context.
Tensor layer_mod_film(const Tensor& c_h, const Tensor& e_u, const Tensor& e_i,
                      const BackboneConfig& backbone, const ModulationConfig& mod,
                      const ParamLookup& params);

// Soft modularization over a per-example routed module network. Returns the
// scores and one RouteTensor per query example.
std::pair<Tensor, std::vector<RouteTensor>> soft_modular_forward(const Tensor& c_h,
                                                                 const Tensor& e_u,
                                                                 const Tensor& e_i,
                                                                 const ModulationConfig& mod,
                                                                 const ParamLookup& params);

}  // namespace cmml

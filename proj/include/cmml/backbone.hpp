#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cmml/params.hpp"
#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

struct FieldSpec {
  std::string name;
  int vocab_size = 0;
  int dim = 0;
};

// Categorical feature layout for users and items. Every id appearing in the
// data must be below its field's vocabulary size.
struct FeatureSchema {
  std::vector<FieldSpec> user_fields;
  std::vector<FieldSpec> item_fields;

  int user_dim() const;
  int item_dim() const;
  int pair_dim() const { return user_dim() + item_dim(); }
  void validate() const;
};

struct BackboneConfig {
  std::vector<int> hidden_sizes{64, 64, 64};
  int output_dim = 1;
  bool frozen_embeddings = false;  // scenario setting: pre-generated tables stay fixed

  void validate() const;
};

struct BackboneActivations {
  Tensor e_u;                  // n x user_dim
  Tensor e_i;                  // n x item_dim
  std::vector<Tensor> hidden;  // per-layer outputs as fed to the next layer
  Tensor h_ui;                 // final hidden representation
  Tensor score;                // n x 1
};

// Registers embedding tables ("embed.user.<field>", "embed.item.<field>").
void init_embedding_params(const FeatureSchema& schema, ParamMap& params, RngStream& rng);

// Registers hidden stack and output head ("backbone.l<i>.{W,b}",
// "backbone.out.{w,b}").
void init_backbone_params(const BackboneConfig& config, int input_dim, ParamMap& params,
                          RngStream& rng, bool include_head = true);

// Looks up one entity's embeddings: `ids_per_field[f]` holds the field-f id
// of every example. Fields are concatenated per example. Out-of-vocabulary
// ids throw with the field name.
Tensor embed_fields(const std::vector<FieldSpec>& fields,
                    const std::vector<std::vector<int>>& ids_per_field, const std::string& prefix,
                    const ParamLookup& params);

// Convenience for single-id entities.
std::pair<Tensor, Tensor> embed(const FeatureSchema& schema, const std::vector<int>& user_ids,
                                const std::vector<int>& item_ids, const ParamLookup& params);

// Optional per-layer transform applied to each activated hidden output before
// it feeds the next layer (FiLM and sigmoid modulation plug in here).
using LayerHook = std::function<Tensor(int layer_index, const Tensor& activated)>;

// ReLU MLP over concat(e_u, e_i) plus a linear scoring head. With
// `include_head == false` the score is left empty (weight modulation and the
// soft-modular network provide their own readout).
BackboneActivations backbone_forward(const Tensor& e_u, const Tensor& e_i,
                                     const BackboneConfig& config, const ParamLookup& params,
                                     const LayerHook& hook = nullptr, bool include_head = true);

}  // namespace cmml

#include "cmml/backbone.hpp"

#include <stdexcept>

namespace cmml {

int FeatureSchema::user_dim() const {
  int d = 0;
  for (const auto& f : user_fields) d += f.dim;
  return d;
}

int FeatureSchema::item_dim() const {
  int d = 0;
  for (const auto& f : item_fields) d += f.dim;
  return d;
}

void FeatureSchema::validate() const {
  if (user_fields.empty() || item_fields.empty()) {
    throw std::invalid_argument("FeatureSchema: user and item need at least one field each");
  }
  for (const auto& fields : {user_fields, item_fields}) {
    for (const auto& f : fields) {
      if (f.vocab_size <= 0 || f.dim <= 0) {
        throw std::invalid_argument("FeatureSchema: field " + f.name +
                                    " needs positive vocabulary size and dimension");
      }
    }
  }
}

void BackboneConfig::validate() const {
  if (hidden_sizes.empty()) throw std::invalid_argument("BackboneConfig: no hidden layers");
  for (int h : hidden_sizes) {
    if (h <= 0) throw std::invalid_argument("BackboneConfig: hidden sizes must be positive");
  }
  if (output_dim != 1) throw std::invalid_argument("BackboneConfig: output dim must be 1");
}

void init_embedding_params(const FeatureSchema& schema, ParamMap& params, RngStream& rng) {
  schema.validate();
  for (const auto& f : schema.user_fields) {
    params["embed.user." + f.name] = glorot_uniform(f.vocab_size, f.dim, rng);
  }
  for (const auto& f : schema.item_fields) {
    params["embed.item." + f.name] = glorot_uniform(f.vocab_size, f.dim, rng);
  }
}

void init_backbone_params(const BackboneConfig& config, int input_dim, ParamMap& params,
                          RngStream& rng, bool include_head) {
  config.validate();
  int in = input_dim;
  for (std::size_t i = 0; i < config.hidden_sizes.size(); ++i) {
    int out = config.hidden_sizes[i];
    params["backbone.l" + std::to_string(i) + ".W"] = glorot_uniform(in, out, rng);
    params["backbone.l" + std::to_string(i) + ".b"] = Tensor::zeros(1, out);
    in = out;
  }
  if (include_head) {
    params["backbone.out.w"] = glorot_uniform(in, 1, rng);
    params["backbone.out.b"] = Tensor::zeros(1, 1);
  }
}

Tensor embed_fields(const std::vector<FieldSpec>& fields,
                    const std::vector<std::vector<int>>& ids_per_field, const std::string& prefix,
                    const ParamLookup& params) {
  if (fields.empty()) throw std::invalid_argument("embed_fields: no fields");
  if (ids_per_field.size() != fields.size()) {
    throw std::invalid_argument("embed_fields: got " + std::to_string(ids_per_field.size()) +
                                " id lists for " + std::to_string(fields.size()) + " fields");
  }
  Tensor out;
  for (std::size_t f = 0; f < fields.size(); ++f) {
    const auto& field = fields[f];
    const auto& ids = ids_per_field[f];
    if (ids.empty()) throw std::invalid_argument("embed_fields: empty id list for " + field.name);
    if (f > 0 && static_cast<int>(ids.size()) != out.rows()) {
      throw std::invalid_argument("embed_fields: id list lengths differ across fields");
    }
    for (int id : ids) {
      if (id < 0 || id >= field.vocab_size) {
        throw std::out_of_range("embed_fields: id " + std::to_string(id) +
                                " out of vocabulary for field " + field.name + " (size " +
                                std::to_string(field.vocab_size) + ")");
      }
    }
    Tensor rows = take_rows(params(prefix + field.name), ids);
    out = (f == 0) ? rows : concat(out, rows, 1);
  }
  return out;
}

std::pair<Tensor, Tensor> embed(const FeatureSchema& schema, const std::vector<int>& user_ids,
                                const std::vector<int>& item_ids, const ParamLookup& params) {
  if (user_ids.size() != item_ids.size()) {
    throw std::invalid_argument("embed: user/item id counts differ");
  }
  std::vector<std::vector<int>> u(schema.user_fields.size(), user_ids);
  std::vector<std::vector<int>> i(schema.item_fields.size(), item_ids);
  return {embed_fields(schema.user_fields, u, "embed.user.", params),
          embed_fields(schema.item_fields, i, "embed.item.", params)};
}

BackboneActivations backbone_forward(const Tensor& e_u, const Tensor& e_i,
                                     const BackboneConfig& config, const ParamLookup& params,
                                     const LayerHook& hook, bool include_head) {
  if (e_u.rows() != e_i.rows()) {
    throw std::invalid_argument("backbone_forward: embedding batch sizes differ (" +
                                e_u.shape_str() + " vs " + e_i.shape_str() + ")");
  }
  BackboneActivations acts;
  acts.e_u = e_u;
  acts.e_i = e_i;
  Tensor x = concat(e_u, e_i, 1);
  for (std::size_t i = 0; i < config.hidden_sizes.size(); ++i) {
    std::string base = "backbone.l" + std::to_string(i);
    Tensor l = relu(add(matmul(x, params(base + ".W")), params(base + ".b")));
    if (hook) l = hook(static_cast<int>(i), l);
    acts.hidden.push_back(l);
    x = l;
  }
  acts.h_ui = x;
  if (include_head) {
    acts.score = add(matmul(x, params("backbone.out.w")), params("backbone.out.b"));
  }
  return acts;
}

}  // namespace cmml

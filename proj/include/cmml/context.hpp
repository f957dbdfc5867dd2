#pragma once

#include <string>
#include <vector>

#include "cmml/params.hpp"
#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"

namespace cmml {

struct EncoderConfig {
  enum class Variant { kPoolingMean, kPoolingMax, kSequential };

  Variant variant = Variant::kSequential;
  std::vector<int> mlp_hidden{128, 128};
  int gru_hidden = 64;
  // 0 means "match the concatenated pair embedding width", which the dot
  // generator requires.
  int context_dim = 0;
  // Append each support pair's label to the encoder input. Disable for the
  // strict reading where only the pair embeddings feed the encoder.
  bool include_labels = true;

  void validate() const;
  int resolved_context_dim(int pair_dim) const;
  int input_dim(int pair_dim) const { return pair_dim + (include_labels ? 1 : 0); }
};

struct GeneratorConfig {
  enum class Variant { kDot, kMlp };

  Variant variant = Variant::kDot;
  std::vector<int> mlp_hidden{64, 64};
  // 0 means "match the concatenated pair embedding width".
  int hybrid_dim = 0;

  void validate() const;
  int resolved_hybrid_dim(int pair_dim) const;
};

EncoderConfig::Variant encoder_variant_from_string(const std::string& s);
std::string to_string(EncoderConfig::Variant v);
GeneratorConfig::Variant generator_variant_from_string(const std::string& s);
std::string to_string(GeneratorConfig::Variant v);

void init_encoder_params(const EncoderConfig& config, int pair_dim, ParamMap& params,
                         RngStream& rng);
void init_generator_params(const GeneratorConfig& config, int context_dim, int pair_dim,
                           ParamMap& params, RngStream& rng);

// Pooling aggregated encoder: each support row through a shared ReLU MLP,
// then mean or max pooling over rows. `support` is n x input_dim.
Tensor encode_pooling(const Tensor& support, const EncoderConfig& config,
                      const ParamLookup& params);

// Sequential aggregated encoder: support rows through a GRU (zero initial
// state), final output through the shared MLP.
Tensor encode_sequential(const Tensor& support, const EncoderConfig& config,
                         const ParamLookup& params);

Tensor encode_context(const Tensor& support, const EncoderConfig& config,
                      const ParamLookup& params);

// Hybrid context per query example. `pair_embeddings` is q x pair_dim, the
// concatenated (e_u, e_i) rows; `context` is 1 x d_c.
Tensor hybrid_dot(const Tensor& context, const Tensor& pair_embeddings);
Tensor hybrid_mlp(const Tensor& context, const Tensor& pair_embeddings,
                  const GeneratorConfig& config, const ParamLookup& params);
Tensor hybrid_context(const Tensor& context, const Tensor& pair_embeddings,
                      const GeneratorConfig& config, const ParamLookup& params);

// Reusable ReLU MLP with a linear readout; parameter names are
// "<prefix>.l<i>.{W,b}" plus "<prefix>.out.{W,b}".
void init_mlp_params(const std::string& prefix, int input_dim, const std::vector<int>& hidden,
                     int output_dim, ParamMap& params, RngStream& rng);
Tensor mlp_forward(const std::string& prefix, const Tensor& x, std::size_t hidden_layers,
                   const ParamLookup& params);

}  // namespace cmml

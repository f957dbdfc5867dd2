#include "cmml/context.hpp"

#include <stdexcept>

namespace cmml {

void EncoderConfig::validate() const {
  for (int h : mlp_hidden) {
    if (h <= 0) throw std::invalid_argument("EncoderConfig: MLP hidden sizes must be positive");
  }
  if (gru_hidden <= 0) throw std::invalid_argument("EncoderConfig: GRU hidden size must be positive");
  if (context_dim < 0) throw std::invalid_argument("EncoderConfig: context dim must be >= 0");
}

int EncoderConfig::resolved_context_dim(int pair_dim) const {
  return context_dim > 0 ? context_dim : pair_dim;
}

void GeneratorConfig::validate() const {
  for (int h : mlp_hidden) {
    if (h <= 0) throw std::invalid_argument("GeneratorConfig: MLP hidden sizes must be positive");
  }
  if (hybrid_dim < 0) throw std::invalid_argument("GeneratorConfig: hybrid dim must be >= 0");
}

int GeneratorConfig::resolved_hybrid_dim(int pair_dim) const {
  if (variant == Variant::kDot) return pair_dim;
  return hybrid_dim > 0 ? hybrid_dim : pair_dim;
}

EncoderConfig::Variant encoder_variant_from_string(const std::string& s) {
  if (s == "pooling-mean") return EncoderConfig::Variant::kPoolingMean;
  if (s == "pooling-max") return EncoderConfig::Variant::kPoolingMax;
  if (s == "sequential") return EncoderConfig::Variant::kSequential;
  throw std::invalid_argument("unknown encoder variant: " + s);
}

std::string to_string(EncoderConfig::Variant v) {
  switch (v) {
    case EncoderConfig::Variant::kPoolingMean: return "pooling-mean";
    case EncoderConfig::Variant::kPoolingMax: return "pooling-max";
    case EncoderConfig::Variant::kSequential: return "sequential";
  }
  return "?";
}

GeneratorConfig::Variant generator_variant_from_string(const std::string& s) {
  if (s == "dot") return GeneratorConfig::Variant::kDot;
  if (s == "mlp") return GeneratorConfig::Variant::kMlp;
  throw std::invalid_argument("unknown generator variant: " + s);
}

std::string to_string(GeneratorConfig::Variant v) {
  return v == GeneratorConfig::Variant::kDot ? "dot" : "mlp";
}

void init_mlp_params(const std::string& prefix, int input_dim, const std::vector<int>& hidden,
                     int output_dim, ParamMap& params, RngStream& rng) {
  int in = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    params[prefix + ".l" + std::to_string(i) + ".W"] = glorot_uniform(in, hidden[i], rng);
    params[prefix + ".l" + std::to_string(i) + ".b"] = Tensor::zeros(1, hidden[i]);
    in = hidden[i];
  }
  params[prefix + ".out.W"] = glorot_uniform(in, output_dim, rng);
  params[prefix + ".out.b"] = Tensor::zeros(1, output_dim);
}

Tensor mlp_forward(const std::string& prefix, const Tensor& x, std::size_t hidden_layers,
                   const ParamLookup& params) {
  Tensor h = x;
  for (std::size_t i = 0; i < hidden_layers; ++i) {
    std::string base = prefix + ".l" + std::to_string(i);
    h = relu(add(matmul(h, params(base + ".W")), params(base + ".b")));
  }
  return add(matmul(h, params(prefix + ".out.W")), params(prefix + ".out.b"));
}

void init_encoder_params(const EncoderConfig& config, int pair_dim, ParamMap& params,
                         RngStream& rng) {
  config.validate();
  int d_c = config.resolved_context_dim(pair_dim);
  int in = config.input_dim(pair_dim);
  if (config.variant == EncoderConfig::Variant::kSequential) {
    int h = config.gru_hidden;
    for (const char* gate : {"z", "r", "n"}) {
      params[std::string("encoder.gru.W") + gate] = glorot_uniform(in, h, rng);
      params[std::string("encoder.gru.U") + gate] = glorot_uniform(h, h, rng);
      params[std::string("encoder.gru.b") + gate] = Tensor::zeros(1, h);
    }
    init_mlp_params("encoder.mlp", h, config.mlp_hidden, d_c, params, rng);
  } else {
    init_mlp_params("encoder.mlp", in, config.mlp_hidden, d_c, params, rng);
  }
}

Tensor encode_pooling(const Tensor& support, const EncoderConfig& config,
                      const ParamLookup& params) {
  if (support.empty()) throw std::invalid_argument("encode_pooling: empty support set");
  Tensor per_pair = mlp_forward("encoder.mlp", support, config.mlp_hidden.size(), params);
  if (config.variant == EncoderConfig::Variant::kPoolingMax) return max_pool_rows(per_pair);
  return mean_pool_rows(per_pair);
}

namespace {

// One GRU step: update/reset gates, candidate state, convex combination.
Tensor gru_step(const Tensor& x, const Tensor& h, const ParamLookup& params) {
  Tensor z = sigmoid(add(add(matmul(x, params("encoder.gru.Wz")), matmul(h, params("encoder.gru.Uz"))),
                         params("encoder.gru.bz")));
  Tensor r = sigmoid(add(add(matmul(x, params("encoder.gru.Wr")), matmul(h, params("encoder.gru.Ur"))),
                         params("encoder.gru.br")));
  Tensor n = tanh_act(add(add(matmul(x, params("encoder.gru.Wn")),
                              matmul(elementwise_mul(r, h), params("encoder.gru.Un"))),
                          params("encoder.gru.bn")));
  Tensor one_minus_z = sub(Tensor::full(z.rows(), z.cols(), 1.0), z);
  return add(elementwise_mul(one_minus_z, n), elementwise_mul(z, h));
}

}  // namespace

Tensor encode_sequential(const Tensor& support, const EncoderConfig& config,
                         const ParamLookup& params) {
  if (support.empty()) throw std::invalid_argument("encode_sequential: empty support set");
  Tensor h = Tensor::zeros(1, config.gru_hidden);
  for (int t = 0; t < support.rows(); ++t) {
    Tensor x = take_rows(support, {t});
    h = gru_step(x, h, params);
  }
  return mlp_forward("encoder.mlp", h, config.mlp_hidden.size(), params);
}

Tensor encode_context(const Tensor& support, const EncoderConfig& config,
                      const ParamLookup& params) {
  if (config.variant == EncoderConfig::Variant::kSequential) {
    return encode_sequential(support, config, params);
  }
  return encode_pooling(support, config, params);
}

Tensor hybrid_dot(const Tensor& context, const Tensor& pair_embeddings) {
  if (context.rows() != 1) {
    throw std::invalid_argument("hybrid_dot: context must be a single row, got " +
                                context.shape_str());
  }
  if (context.cols() != pair_embeddings.cols()) {
    throw std::invalid_argument("hybrid_dot: context dim " + context.shape_str() +
                                " does not match pair embeddings " + pair_embeddings.shape_str());
  }
  return elementwise_mul(pair_embeddings, context);
}

void init_generator_params(const GeneratorConfig& config, int context_dim, int pair_dim,
                           ParamMap& params, RngStream& rng) {
  config.validate();
  if (config.variant == GeneratorConfig::Variant::kDot) return;  // parameter-free
  init_mlp_params("generator", context_dim + pair_dim, config.mlp_hidden,
                  config.resolved_hybrid_dim(pair_dim), params, rng);
}

Tensor hybrid_mlp(const Tensor& context, const Tensor& pair_embeddings,
                  const GeneratorConfig& config, const ParamLookup& params) {
  if (context.rows() != 1) {
    throw std::invalid_argument("hybrid_mlp: context must be a single row, got " +
                                context.shape_str());
  }
  // Broadcast the task context to every query row, then fuse.
  Tensor tiled = matmul(Tensor::full(pair_embeddings.rows(), 1, 1.0), context);
  Tensor x = concat(tiled, pair_embeddings, 1);
  return mlp_forward("generator", x, config.mlp_hidden.size(), params);
}

Tensor hybrid_context(const Tensor& context, const Tensor& pair_embeddings,
                      const GeneratorConfig& config, const ParamLookup& params) {
  if (config.variant == GeneratorConfig::Variant::kDot) {
    return hybrid_dot(context, pair_embeddings);
  }
  return hybrid_mlp(context, pair_embeddings, config, params);
}

}  // namespace cmml

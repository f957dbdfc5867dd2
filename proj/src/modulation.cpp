#include "cmml/modulation.hpp"

#include <cmath>
#include <stdexcept>

#include "cmml/context.hpp"

namespace cmml {

void ModulationConfig::validate() const {
  for (int h : hyper_hidden) {
    if (h <= 0) throw std::invalid_argument("ModulationConfig: hyper hidden sizes must be positive");
  }
  if (soft_layers <= 0 || soft_modules <= 0 || soft_width <= 0 || route_width <= 0) {
    throw std::invalid_argument("ModulationConfig: soft-modular sizes must be positive");
  }
}

ModulationConfig::Variant modulation_variant_from_string(const std::string& s) {
  if (s == "weight") return ModulationConfig::Variant::kWeight;
  if (s == "sigmoid") return ModulationConfig::Variant::kSigmoidLayer;
  if (s == "film") return ModulationConfig::Variant::kFilm;
  if (s == "soft") return ModulationConfig::Variant::kSoftModular;
  throw std::invalid_argument("unknown modulation variant: " + s);
}

std::string to_string(ModulationConfig::Variant v) {
  switch (v) {
    case ModulationConfig::Variant::kWeight: return "weight";
    case ModulationConfig::Variant::kSigmoidLayer: return "sigmoid";
    case ModulationConfig::Variant::kFilm: return "film";
    case ModulationConfig::Variant::kSoftModular: return "soft";
  }
  return "?";
}

void RouteTensor::validate(double tol) const {
  if (static_cast<int>(p.size()) != layers) {
    throw std::logic_error("RouteTensor: expected " + std::to_string(layers) + " matrices");
  }
  for (const Tensor& mat : p) {
    if (mat.rows() != modules || mat.cols() != modules) {
      throw std::logic_error("RouteTensor: matrix is " + mat.shape_str());
    }
    for (int j = 0; j < modules; ++j) {
      double s = 0.0;
      for (int i = 0; i < modules; ++i) {
        double v = mat.at(i, j);
        if (v < 0.0 || v > 1.0) throw std::logic_error("RouteTensor: entry outside [0,1]");
        s += v;
      }
      if (std::fabs(s - 1.0) > tol) {
        throw std::logic_error("RouteTensor: column " + std::to_string(j) + " sums to " +
                               std::to_string(s));
      }
    }
  }
}

SoftParity soft_parameter_parity(const ModulationConfig& mod, const BackboneConfig& backbone) {
  SoftParity parity;
  parity.module_weights_per_layer =
      static_cast<long>(mod.soft_modules) * mod.soft_width * mod.soft_width;
  int dense_width = backbone.hidden_sizes.empty() ? 0 : backbone.hidden_sizes.front();
  for (int h : backbone.hidden_sizes) {
    if (h != dense_width) {
      parity.dense_weights_per_layer = -1;  // non-uniform stack, parity undefined
      parity.matched = false;
      return parity;
    }
  }
  parity.dense_weights_per_layer = static_cast<long>(dense_width) * dense_width;
  parity.matched = parity.module_weights_per_layer == parity.dense_weights_per_layer;
  return parity;
}

namespace {

std::string hyper_trunk_layer(std::size_t i) { return "hyper.l" + std::to_string(i); }

Tensor hyper_trunk(const Tensor& c_h, const ModulationConfig& mod, const ParamLookup& params) {
  Tensor h = c_h;
  for (std::size_t i = 0; i < mod.hyper_hidden.size(); ++i) {
    std::string base = hyper_trunk_layer(i);
    h = relu(add(matmul(h, params(base + ".W")), params(base + ".b")));
  }
  return h;
}

Tensor linear_head(const std::string& name, const Tensor& x, const ParamLookup& params) {
  return add(matmul(x, params(name + ".W")), params(name + ".b"));
}

void init_trunk(const ModulationConfig& mod, int conditioning_dim, ParamMap& params,
                RngStream& rng) {
  int in = conditioning_dim;
  for (std::size_t i = 0; i < mod.hyper_hidden.size(); ++i) {
    params[hyper_trunk_layer(i) + ".W"] = glorot_uniform(in, mod.hyper_hidden[i], rng);
    params[hyper_trunk_layer(i) + ".b"] = Tensor::zeros(1, mod.hyper_hidden[i]);
    in = mod.hyper_hidden[i];
  }
}

void init_head(const std::string& name, int in, int out, ParamMap& params, RngStream& rng) {
  params[name + ".W"] = glorot_uniform(in, out, rng);
  params[name + ".b"] = Tensor::zeros(1, out);
}

}  // namespace

void init_hyper_params(const ModulationConfig& mod, int conditioning_dim,
                       const BackboneConfig& backbone, ParamMap& params, RngStream& rng) {
  mod.validate();
  backbone.validate();
  init_trunk(mod, conditioning_dim, params, rng);
  int trunk_out = mod.hyper_hidden.empty() ? conditioning_dim : mod.hyper_hidden.back();
  switch (mod.variant) {
    case ModulationConfig::Variant::kWeight:
      init_head("hyper.head.w", trunk_out, backbone.hidden_sizes.back(), params, rng);
      init_head("hyper.head.b", trunk_out, 1, params, rng);
      break;
    case ModulationConfig::Variant::kSigmoidLayer:
      for (std::size_t i = 0; i < backbone.hidden_sizes.size(); ++i) {
        init_head("hyper.head" + std::to_string(i) + ".g", trunk_out, backbone.hidden_sizes[i],
                  params, rng);
      }
      break;
    case ModulationConfig::Variant::kFilm:
      for (std::size_t i = 0; i < backbone.hidden_sizes.size(); ++i) {
        init_head("hyper.head" + std::to_string(i) + ".w", trunk_out, backbone.hidden_sizes[i],
                  params, rng);
        init_head("hyper.head" + std::to_string(i) + ".b", trunk_out, backbone.hidden_sizes[i],
                  params, rng);
      }
      break;
    case ModulationConfig::Variant::kSoftModular:
      throw std::invalid_argument("init_hyper_params: soft variant uses init_soft_params");
  }
}

Tensor weight_modulation(const Tensor& c_h, const Tensor& h_ui, const ModulationConfig& mod,
                         const ParamLookup& params) {
  if (c_h.rows() != h_ui.rows()) {
    throw std::invalid_argument("weight_modulation: batch sizes differ (" + c_h.shape_str() +
                                " vs " + h_ui.shape_str() + ")");
  }
  Tensor trunk = hyper_trunk(c_h, mod, params);
  Tensor w_h = linear_head("hyper.head.w", trunk, params);
  Tensor b_h = linear_head("hyper.head.b", trunk, params);
  if (w_h.cols() != h_ui.cols()) {
    throw std::invalid_argument("weight_modulation: generated weight dim " + w_h.shape_str() +
                                " does not match hidden " + h_ui.shape_str());
  }
  // Row-wise dot product of generated weights with the hidden representation.
  Tensor prod = elementwise_mul(w_h, h_ui);
  Tensor dot = matmul(prod, Tensor::full(h_ui.cols(), 1, 1.0));
  return add(dot, b_h);
}

namespace {

Tensor modulated_backbone(const Tensor& c_h, const Tensor& e_u, const Tensor& e_i,
                          const BackboneConfig& backbone, const ModulationConfig& mod,
                          const ParamLookup& params, bool film) {
  if (c_h.rows() != e_u.rows()) {
    throw std::invalid_argument("layer modulation: context batch " + c_h.shape_str() +
                                " does not match embeddings " + e_u.shape_str());
  }
  Tensor trunk = hyper_trunk(c_h, mod, params);
  LayerHook hook = [&](int layer, const Tensor& activated) {
    std::string head = "hyper.head" + std::to_string(layer);
    if (film) {
      Tensor w_h = linear_head(head + ".w", trunk, params);
      Tensor b_h = linear_head(head + ".b", trunk, params);
      if (w_h.cols() != activated.cols()) {
        throw std::invalid_argument("layer_mod_film: head width " + w_h.shape_str() +
                                    " does not match layer output " + activated.shape_str());
      }
      return add(elementwise_mul(w_h, activated), b_h);
    }
    Tensor gate = sigmoid(linear_head(head + ".g", trunk, params));
    if (gate.cols() != activated.cols()) {
      throw std::invalid_argument("layer_mod_sigmoid: gate width " + gate.shape_str() +
                                  " does not match layer output " + activated.shape_str());
    }
    return elementwise_mul(gate, activated);
  };
  return backbone_forward(e_u, e_i, backbone, params, hook, /*include_head=*/true).score;
}

}  // namespace

Tensor layer_mod_sigmoid(const Tensor& c_h, const Tensor& e_u, const Tensor& e_i,
                         const BackboneConfig& backbone, const ModulationConfig& mod,
                         const ParamLookup& params) {
  return modulated_backbone(c_h, e_u, e_i, backbone, mod, params, /*film=*/false);
}

Tensor layer_mod_film(const Tensor& c_h, const Tensor& e_u, const Tensor& e_i,
                      const BackboneConfig& backbone, const ModulationConfig& mod,
                      const ParamLookup& params) {
  return modulated_backbone(c_h, e_u, e_i, backbone, mod, params, /*film=*/true);
}

void init_soft_params(const ModulationConfig& mod, int conditioning_dim, int pair_dim,
                      const BackboneConfig& backbone, ParamMap& params, RngStream& rng) {
  mod.validate();
  SoftParity parity = soft_parameter_parity(mod, backbone);
  if (!parity.matched) {
    throw std::invalid_argument(
        "init_soft_params: module weights per layer (" +
        std::to_string(parity.module_weights_per_layer) +
        ") must equal the dense backbone layer weight count (" +
        std::to_string(parity.dense_weights_per_layer) +
        "); adjust modules/width or the backbone hidden sizes");
  }
  init_head("soft.in", pair_dim, mod.soft_width, params, rng);
  for (int l = 0; l < mod.soft_layers; ++l) {
    for (int j = 0; j < mod.soft_modules; ++j) {
      init_head("soft.l" + std::to_string(l) + ".m" + std::to_string(j), mod.soft_width,
                mod.soft_width, params, rng);
    }
  }
  params["soft.out.w"] = glorot_uniform(mod.soft_width, 1, rng);
  params["soft.out.b"] = Tensor::zeros(1, 1);

  // Route trunk h_r^l and one logits head per module layer; logits for layer
  // l come from h_r^{l-1}, with h_r^0 the conditioning vector itself.
  int in = conditioning_dim;
  for (int l = 0; l < mod.soft_layers; ++l) {
    init_head("route.head" + std::to_string(l), in, mod.soft_modules * mod.soft_modules, params,
              rng);
    if (l + 1 < mod.soft_layers) {
      init_head("route.l" + std::to_string(l), in, mod.route_width, params, rng);
      in = mod.route_width;
    }
  }
}

std::pair<Tensor, std::vector<RouteTensor>> soft_modular_forward(const Tensor& c_h,
                                                                 const Tensor& e_u,
                                                                 const Tensor& e_i,
                                                                 const ModulationConfig& mod,
                                                                 const ParamLookup& params) {
  if (c_h.rows() != e_u.rows() || e_u.rows() != e_i.rows()) {
    throw std::invalid_argument("soft_modular_forward: batch sizes differ");
  }
  const int k = mod.soft_layers;
  const int m = mod.soft_modules;
  Tensor pair = concat(e_u, e_i, 1);

  // Constant selectors for extracting route scalars.
  std::vector<Tensor> row_sel, col_sel;
  for (int i = 0; i < m; ++i) {
    std::vector<double> r(static_cast<std::size_t>(m), 0.0);
    r[static_cast<std::size_t>(i)] = 1.0;
    row_sel.push_back(Tensor::row(r));
    col_sel.push_back(Tensor::column(r));
  }

  Tensor scores;
  std::vector<RouteTensor> routes;
  routes.reserve(static_cast<std::size_t>(c_h.rows()));

  for (int ex = 0; ex < c_h.rows(); ++ex) {
    Tensor cond = take_rows(c_h, {ex});
    Tensor x = take_rows(pair, {ex});
    Tensor proj = add(matmul(x, params("soft.in.W")), params("soft.in.b"));
    std::vector<Tensor> modules(static_cast<std::size_t>(m), proj);

    RouteTensor route;
    route.layers = k;
    route.modules = m;

    Tensor h_r = cond;
    for (int l = 0; l < k; ++l) {
      Tensor logits = linear_head("route.head" + std::to_string(l), h_r, params);
      Tensor sigma = reshape(logits, m, m);
      Tensor p = softmax_columns(sigma);  // column j: source module j over destinations
      route.p.push_back(p.detached());

      std::vector<Tensor> transformed;
      transformed.reserve(static_cast<std::size_t>(m));
      for (int j = 0; j < m; ++j) {
        std::string base = "soft.l" + std::to_string(l) + ".m" + std::to_string(j);
        transformed.push_back(relu(add(matmul(modules[static_cast<std::size_t>(j)], params(base + ".W")),
                                       params(base + ".b"))));
      }
      std::vector<Tensor> mixed;
      mixed.reserve(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) {
        Tensor dest_weights = matmul(row_sel[static_cast<std::size_t>(i)], p);  // 1 x m
        Tensor acc;
        for (int j = 0; j < m; ++j) {
          Tensor w_ij = matmul(dest_weights, col_sel[static_cast<std::size_t>(j)]);  // 1 x 1
          Tensor term = matmul(w_ij, transformed[static_cast<std::size_t>(j)]);
          acc = (j == 0) ? term : add(acc, term);
        }
        mixed.push_back(acc);
      }
      modules = std::move(mixed);

      if (l + 1 < k) {
        std::string base = "route.l" + std::to_string(l);
        h_r = relu(add(matmul(h_r, params(base + ".W")), params(base + ".b")));
      }
    }

    Tensor stacked = modules[0];
    for (int j = 1; j < m; ++j) stacked = concat(stacked, modules[static_cast<std::size_t>(j)], 0);
    Tensor pooled = mean_pool_rows(stacked);
    Tensor score = add(matmul(pooled, params("soft.out.w")), params("soft.out.b"));
    scores = (ex == 0) ? score : concat(scores, score, 0);
    routes.push_back(std::move(route));
  }
  return {scores, std::move(routes)};
}

}  // namespace cmml

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmml/backbone.hpp"
#include "cmml/context.hpp"
#include "cmml/modulation.hpp"
#include "cmml/rng.hpp"
#include "oracles.hpp"

using namespace cmml;

namespace {

Tensor random_tensor(int rows, int cols, RngStream& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.normal() * scale;
  return Tensor(rows, cols, std::move(v));
}

// Straight-line reimplementation of the trunk-plus-heads hypernetwork and the
// modulated backbone, plain loops over raw values.
struct FlatNet {
  const ParamMap& p;

  std::vector<double> linear(const std::string& w, const std::string& b,
                             const std::vector<double>& x) const {
    const Tensor& W = p.at(w);
    const Tensor& B = p.at(b);
    std::vector<double> out(static_cast<std::size_t>(W.cols()));
    for (int j = 0; j < W.cols(); ++j) {
      double s = B.at(0, j);
      for (int i = 0; i < W.rows(); ++i) s += x[static_cast<std::size_t>(i)] * W.at(i, j);
      out[static_cast<std::size_t>(j)] = s;
    }
    return out;
  }

  static void relu_inplace(std::vector<double>& v) {
    for (double& x : v) x = x > 0.0 ? x : 0.0;
  }

  std::vector<double> trunk(std::vector<double> x, std::size_t layers) const {
    for (std::size_t i = 0; i < layers; ++i) {
      x = linear("hyper.l" + std::to_string(i) + ".W", "hyper.l" + std::to_string(i) + ".b", x);
      relu_inplace(x);
    }
    return x;
  }
};

}  // namespace

TEST_CASE("weight modulation with a constant hypernetwork equals a fixed linear head") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kWeight;
  mod.hyper_hidden = {6};
  BackboneConfig backbone;
  backbone.hidden_sizes = {5};
  ParamMap params;
  RngStream rng(1, 0);
  init_hyper_params(mod, /*conditioning_dim=*/4, backbone, params, rng);
  // zero head weights; bias preset to (w*, b*) -> output independent of C_h
  params["hyper.head.w.W"] = Tensor::zeros(6, 5);
  params["hyper.head.w.b"] = Tensor::row({1, -2, 3, 0.5, 2});
  params["hyper.head.b.W"] = Tensor::zeros(6, 1);
  params["hyper.head.b.b"] = Tensor::scalar(0.25);
  ParamLookup P(params);

  RngStream data_rng(2, 0);
  Tensor h_ui = random_tensor(4, 5, data_rng);
  for (int trial = 0; trial < 3; ++trial) {
    Tensor c_h = random_tensor(4, 4, data_rng);
    Tensor score = weight_modulation(c_h, h_ui, mod, P);
    for (int i = 0; i < 4; ++i) {
      double expect = 0.25;
      std::vector<double> w = {1, -2, 3, 0.5, 2};
      for (int j = 0; j < 5; ++j) expect += w[static_cast<std::size_t>(j)] * h_ui.at(i, j);
      CHECK(score.at(i, 0) == doctest::Approx(expect));
    }
  }
}

TEST_CASE("weight modulation with zero hidden equals the generated bias") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kWeight;
  mod.hyper_hidden = {6};
  BackboneConfig backbone;
  backbone.hidden_sizes = {5};
  ParamMap params;
  RngStream rng(3, 0);
  init_hyper_params(mod, 4, backbone, params, rng);
  ParamLookup P(params);
  RngStream data_rng(4, 0);
  Tensor c_h = random_tensor(2, 4, data_rng);
  Tensor h_ui = Tensor::zeros(2, 5);
  Tensor score = weight_modulation(c_h, h_ui, mod, P);

  FlatNet flat{params};
  for (int i = 0; i < 2; ++i) {
    std::vector<double> c;
    for (int j = 0; j < 4; ++j) c.push_back(c_h.at(i, j));
    auto t = flat.trunk(c, 1);
    auto b = flat.linear("hyper.head.b.W", "hyper.head.b.b", t);
    CHECK(score.at(i, 0) == doctest::Approx(b[0]));
  }
}

TEST_CASE("weight modulation gradient w.r.t. hypernetwork parameters matches finite differences") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kWeight;
  mod.hyper_hidden = {5};
  BackboneConfig backbone;
  backbone.hidden_sizes = {4};
  ParamMap params;
  RngStream rng(5, 0);
  init_hyper_params(mod, 3, backbone, params, rng);
  RngStream data_rng(6, 0);
  Tensor c_h = random_tensor(3, 3, data_rng);
  Tensor h_ui = random_tensor(3, 4, data_rng);

  auto eval = [&](const ParamMap& p) {
    ParamLookup P(p);
    Tensor s = weight_modulation(c_h, h_ui, mod, P);
    return sum(elementwise_mul(s, s)).item();
  };

  Tape tape;
  ParamMap bound;
  for (auto& [k, v] : params) bound[k] = tape.watch(v);
  ParamLookup P(params, bound);
  Tensor s = weight_modulation(c_h, h_ui, mod, P);
  Gradients g = tape.backward(sum(elementwise_mul(s, s)));
  ParamMap analytic;
  for (auto& [k, v] : bound) analytic[k] = g.at(v);

  auto res = oracle::check_gradients_ladder(eval, params, analytic, 1e-4);
  CHECK(res.max_rel_err < 1e-4);
}

namespace {

struct LayerModFixture {
  ModulationConfig mod;
  BackboneConfig backbone;
  ParamMap params;
  Tensor e_u, e_i, c_h;

  explicit LayerModFixture(ModulationConfig::Variant variant, std::uint64_t seed) {
    mod.variant = variant;
    mod.hyper_hidden = {6, 6};
    backbone.hidden_sizes = {5, 5};
    RngStream rng(seed, 0);
    init_hyper_params(mod, 4, backbone, params, rng);
    init_backbone_params(backbone, 6, params, rng);
    RngStream data_rng(seed, 1);
    e_u = random_tensor(3, 3, data_rng);
    e_i = random_tensor(3, 3, data_rng);
    c_h = random_tensor(3, 4, data_rng);
  }
};

}  // namespace

TEST_CASE("sigmoid gates saturated at one reproduce the unmodulated backbone") {
  LayerModFixture f(ModulationConfig::Variant::kSigmoidLayer, 7);
  // gate pre-activation forced to +/-30
  for (std::size_t i = 0; i < f.backbone.hidden_sizes.size(); ++i) {
    std::string head = "hyper.head" + std::to_string(i) + ".g";
    f.params[head + ".W"] = Tensor::zeros(6, 5);
    f.params[head + ".b"] = Tensor::full(1, 5, 30.0);
  }
  ParamLookup P(f.params);
  Tensor modulated = layer_mod_sigmoid(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P);
  Tensor plain = backbone_forward(f.e_u, f.e_i, f.backbone, P).score;
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(modulated.at(i, 0) - plain.at(i, 0)) < 1e-6);
  }

  // gates ~ 0: hidden activations vanish, score collapses to the head bias
  for (std::size_t i = 0; i < f.backbone.hidden_sizes.size(); ++i) {
    f.params["hyper.head" + std::to_string(i) + ".g.b"] = Tensor::full(1, 5, -30.0);
  }
  ParamLookup P2(f.params);
  Tensor gated_off = layer_mod_sigmoid(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P2);
  double head_bias = f.params["backbone.out.b"].item();
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(gated_off.at(i, 0) - head_bias) < 1e-6);
}

TEST_CASE("film identity (w=1, b=0) reproduces the backbone bitwise") {
  LayerModFixture f(ModulationConfig::Variant::kFilm, 8);
  for (std::size_t i = 0; i < f.backbone.hidden_sizes.size(); ++i) {
    std::string head = "hyper.head" + std::to_string(i);
    f.params[head + ".w.W"] = Tensor::zeros(6, 5);
    f.params[head + ".w.b"] = Tensor::full(1, 5, 1.0);
    f.params[head + ".b.W"] = Tensor::zeros(6, 5);
    f.params[head + ".b.b"] = Tensor::zeros(1, 5);
  }
  ParamLookup P(f.params);
  Tensor modulated = layer_mod_film(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P);
  Tensor plain = backbone_forward(f.e_u, f.e_i, f.backbone, P).score;
  CHECK(modulated.same_values(plain));
}

TEST_CASE("film with w=0 passes the generated shift through the next layer") {
  LayerModFixture f(ModulationConfig::Variant::kFilm, 9);
  for (std::size_t i = 0; i < f.backbone.hidden_sizes.size(); ++i) {
    std::string head = "hyper.head" + std::to_string(i);
    f.params[head + ".w.W"] = Tensor::zeros(6, 5);
    f.params[head + ".w.b"] = Tensor::zeros(1, 5);
  }
  ParamLookup P(f.params);
  Tensor score = layer_mod_film(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P);
  // layer outputs equal b_h regardless of the backbone input: two different
  // inputs must give identical scores
  RngStream other(10, 2);
  Tensor score2 = layer_mod_film(f.c_h, random_tensor(3, 3, other), random_tensor(3, 3, other),
                                 f.backbone, f.mod, P);
  CHECK(score.same_values(score2));
}

TEST_CASE("random layer modulation matches the straight-line oracle") {
  for (auto variant :
       {ModulationConfig::Variant::kSigmoidLayer, ModulationConfig::Variant::kFilm}) {
    LayerModFixture f(variant, 11);
    ParamLookup P(f.params);
    Tensor score = variant == ModulationConfig::Variant::kFilm
                       ? layer_mod_film(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P)
                       : layer_mod_sigmoid(f.c_h, f.e_u, f.e_i, f.backbone, f.mod, P);

    FlatNet flat{f.params};
    for (int ex = 0; ex < 3; ++ex) {
      std::vector<double> c;
      for (int j = 0; j < 4; ++j) c.push_back(f.c_h.at(ex, j));
      auto t = flat.trunk(c, 2);
      std::vector<double> x;
      for (int j = 0; j < 3; ++j) x.push_back(f.e_u.at(ex, j));
      for (int j = 0; j < 3; ++j) x.push_back(f.e_i.at(ex, j));
      for (std::size_t l = 0; l < 2; ++l) {
        x = flat.linear("backbone.l" + std::to_string(l) + ".W",
                        "backbone.l" + std::to_string(l) + ".b", x);
        FlatNet::relu_inplace(x);
        std::string head = "hyper.head" + std::to_string(l);
        if (variant == ModulationConfig::Variant::kFilm) {
          auto w = flat.linear(head + ".w.W", head + ".w.b", t);
          auto b = flat.linear(head + ".b.W", head + ".b.b", t);
          for (std::size_t j = 0; j < x.size(); ++j) x[j] = w[j] * x[j] + b[j];
        } else {
          auto gpre = flat.linear(head + ".g.W", head + ".g.b", t);
          for (std::size_t j = 0; j < x.size(); ++j) x[j] *= 1.0 / (1.0 + std::exp(-gpre[j]));
        }
      }
      auto out = flat.linear("backbone.out.w", "backbone.out.b", x);
      CHECK(score.at(ex, 0) == doctest::Approx(out[0]).epsilon(1e-10));
    }
  }
}

TEST_CASE("soft modular parameter parity holds for the paper configuration") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  BackboneConfig backbone;  // (64, 64, 64)
  SoftParity parity = soft_parameter_parity(mod, backbone);
  CHECK(parity.matched);
  CHECK(parity.module_weights_per_layer == 4 * 32 * 32);
  CHECK(parity.dense_weights_per_layer == 64 * 64);

  // mismatched sizes are rejected at construction
  ModulationConfig bad = mod;
  bad.soft_width = 16;
  ParamMap params;
  RngStream rng(12, 0);
  CHECK_THROWS_AS(init_soft_params(bad, 8, 8, backbone, params, rng), std::invalid_argument);
}

TEST_CASE("soft modular routes are valid probability columns") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  mod.soft_layers = 3;
  mod.soft_modules = 4;
  mod.soft_width = 32;
  BackboneConfig backbone;
  ParamMap params;
  RngStream rng(13, 0);
  init_soft_params(mod, 6, 8, backbone, params, rng);
  ParamLookup P(params);
  RngStream data_rng(14, 0);
  Tensor c_h = random_tensor(5, 6, data_rng);
  Tensor e_u = random_tensor(5, 4, data_rng);
  Tensor e_i = random_tensor(5, 4, data_rng);
  auto [score, routes] = soft_modular_forward(c_h, e_u, e_i, mod, P);
  CHECK(score.rows() == 5);
  CHECK(score.cols() == 1);
  CHECK(routes.size() == 5);
  for (const auto& route : routes) {
    CHECK(route.layers == 3);
    CHECK(route.modules == 4);
    route.validate(1e-6);
    for (const Tensor& mat : route.p) {
      for (double v : mat.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }
}

TEST_CASE("single-module soft network routes with probability exactly one") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  mod.soft_layers = 2;
  mod.soft_modules = 1;
  mod.soft_width = 3;
  BackboneConfig backbone;
  backbone.hidden_sizes = {3, 3};
  ParamMap params;
  RngStream rng(15, 0);
  init_soft_params(mod, 4, 4, backbone, params, rng);
  ParamLookup P(params);
  RngStream data_rng(16, 0);
  Tensor c_h = random_tensor(2, 4, data_rng);
  Tensor e_u = random_tensor(2, 2, data_rng);
  Tensor e_i = random_tensor(2, 2, data_rng);
  auto [score, routes] = soft_modular_forward(c_h, e_u, e_i, mod, P);
  for (const auto& route : routes) {
    for (const Tensor& mat : route.p) CHECK(mat.item() == 1.0);
  }

  // with routing pinned to 1 the network is a plain layer stack
  FlatNet flat{params};
  for (int ex = 0; ex < 2; ++ex) {
    std::vector<double> x = {e_u.at(ex, 0), e_u.at(ex, 1), e_i.at(ex, 0), e_i.at(ex, 1)};
    x = flat.linear("soft.in.W", "soft.in.b", x);
    for (int l = 0; l < 2; ++l) {
      x = flat.linear("soft.l" + std::to_string(l) + ".m0.W",
                      "soft.l" + std::to_string(l) + ".m0.b", x);
      FlatNet::relu_inplace(x);
    }
    double s = params["soft.out.b"].item();
    for (int j = 0; j < 3; ++j) s += x[static_cast<std::size_t>(j)] * params["soft.out.w"].at(j, 0);
    CHECK(score.at(ex, 0) == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("equal logits within a column give the uniform route") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  mod.soft_layers = 1;
  mod.soft_modules = 4;
  mod.soft_width = 4;
  BackboneConfig backbone;
  backbone.hidden_sizes = {8};
  ParamMap params;
  RngStream rng(17, 0);
  init_soft_params(mod, 3, 4, backbone, params, rng);
  // zero logits head -> all logits equal -> uniform columns
  params["route.head0.W"] = Tensor::zeros(3, 16);
  params["route.head0.b"] = Tensor::zeros(1, 16);
  ParamLookup P(params);
  RngStream data_rng(18, 0);
  auto [score, routes] = soft_modular_forward(random_tensor(1, 3, data_rng),
                                              random_tensor(1, 2, data_rng),
                                              random_tensor(1, 2, data_rng), mod, P);
  for (double v : routes[0].p[0].values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("defaults produce a route tensor of three 4x4 matrices") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  BackboneConfig backbone;
  ParamMap params;
  RngStream rng(19, 0);
  init_soft_params(mod, 16, 16, backbone, params, rng);
  ParamLookup P(params);
  RngStream data_rng(20, 0);
  Tensor c_h = random_tensor(1, 16, data_rng);
  Tensor e_u = random_tensor(1, 8, data_rng);
  Tensor e_i = random_tensor(1, 8, data_rng);
  auto [score, routes] = soft_modular_forward(c_h, e_u, e_i, mod, P);
  CHECK(routes[0].p.size() == 3);
  for (const Tensor& mat : routes[0].p) {
    CHECK(mat.rows() == 4);
    CHECK(mat.cols() == 4);
  }
}

TEST_CASE("soft modular joint gradient passes the finite-difference check") {
  ModulationConfig mod;
  mod.variant = ModulationConfig::Variant::kSoftModular;
  mod.soft_layers = 2;
  mod.soft_modules = 4;
  mod.soft_width = 3;  // 4 * 3^2 = 36 = 6^2, parity with a 6-wide stack
  mod.route_width = 4;
  BackboneConfig backbone;
  backbone.hidden_sizes = {6, 6};
  ParamMap params;
  RngStream rng(21, 0);
  init_soft_params(mod, 4, 4, backbone, params, rng);
  RngStream data_rng(22, 0);
  Tensor c_h = random_tensor(2, 4, data_rng);
  Tensor e_u = random_tensor(2, 2, data_rng);
  Tensor e_i = random_tensor(2, 2, data_rng);

  auto eval = [&](const ParamMap& p) {
    ParamLookup P(p);
    auto [s, r] = soft_modular_forward(c_h, e_u, e_i, mod, P);
    return sum(elementwise_mul(s, s)).item();
  };

  Tape tape;
  ParamMap bound;
  for (auto& [k, v] : params) bound[k] = tape.watch(v);
  ParamLookup P(params, bound);
  auto [s, r] = soft_modular_forward(c_h, e_u, e_i, mod, P);
  Gradients g = tape.backward(sum(elementwise_mul(s, s)));
  ParamMap analytic;
  for (auto& [k, v] : bound) analytic[k] = g.at(v);

  auto res = oracle::check_gradients_ladder(eval, params, analytic, 1e-4);
  CHECK(res.max_rel_err < 1e-4);
}

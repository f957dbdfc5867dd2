#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cmml/optim.hpp"
#include "cmml/params.hpp"
#include "cmml/rng.hpp"
#include "cmml/tensor.hpp"
#include "oracles.hpp"

using namespace cmml;

namespace {

Tensor random_tensor(int rows, int cols, RngStream& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (double& x : v) x = rng.normal() * scale;
  return Tensor(rows, cols, std::move(v));
}

}  // namespace

TEST_CASE("matmul identity returns the operand") {
  RngStream rng(3, 0);
  Tensor a = random_tensor(3, 3, rng);
  Tensor out = matmul(Tensor::identity(3), a);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(out.at(i, j) == doctest::Approx(a.at(i, j)).epsilon(1e-15));
}

TEST_CASE("softmax of all-zero columns is uniform") {
  Tensor x = Tensor::zeros(2, 2);
  Tensor p = softmax_columns(x);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(p.at(i, j) == doctest::Approx(0.5));
}

TEST_CASE("mean_pool_rows hand arithmetic") {
  Tensor x = Tensor::from_rows({{1, 3}, {5, 7}});
  Tensor m = mean_pool_rows(x);
  CHECK(m.at(0, 0) == doctest::Approx(3.0));
  CHECK(m.at(0, 1) == doctest::Approx(5.0));
}

TEST_CASE("shape errors name the op and both shapes") {
  Tensor a = Tensor::zeros(2, 3);
  Tensor b = Tensor::zeros(4, 5);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("4x5"), std::invalid_argument);
  CHECK_THROWS_AS(forward_op(OpKind::kAdd, std::span<const Tensor>{}), std::invalid_argument);
}

TEST_CASE("broadcast add over the leading batch dimension") {
  Tensor x = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  Tensor b = Tensor::row({10, 20});
  Tensor y = add(x, b);
  CHECK(y.at(0, 0) == 11);
  CHECK(y.at(2, 1) == 26);
  // column broadcast is rejected
  CHECK_THROWS_AS(add(x, Tensor::column({1, 2, 3})), std::invalid_argument);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tape tape;
  Tensor x = tape.watch(Tensor::row({1, 2, 3}));
  Tensor loss = sum(elementwise_mul(x, x));
  Gradients g = tape.backward(loss);
  Tensor gx = g.at(x);
  CHECK(gx.at(0, 0) == doctest::Approx(2.0));
  CHECK(gx.at(0, 1) == doctest::Approx(4.0));
  CHECK(gx.at(0, 2) == doctest::Approx(6.0));
}

TEST_CASE("constant root yields zero gradients for unreached leaves") {
  Tape tape;
  Tensor x = tape.watch(Tensor::row({1, 2}));
  Tensor c = tape.watch(Tensor::scalar(5.0));
  Tensor root = sum(c);
  Gradients g = tape.backward(root);
  CHECK_FALSE(g.reached(x));
  Tensor gx = g.at(x);
  CHECK(gx.at(0, 0) == 0.0);
  CHECK(gx.at(0, 1) == 0.0);
}

TEST_CASE("backward contract errors") {
  Tape tape;
  Tensor x = tape.watch(Tensor::row({1, 2}));
  Tensor y = relu(x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // non-scalar root
  Tensor s = sum(y);
  tape.backward(s);
  CHECK_THROWS_AS(tape.backward(s), std::logic_error);  // stale tape
  Tape other;
  Tensor z = other.watch(Tensor::row({1}));
  CHECK_THROWS_AS(concat(x, z, 1), std::invalid_argument);  // two tapes
}

TEST_CASE("two-layer MLP gradients match central finite differences") {
  RngStream rng(11, 0);
  ParamMap params;
  params["W1"] = random_tensor(4, 5, rng, 0.7);
  params["b1"] = random_tensor(1, 5, rng, 0.3);
  params["W2"] = random_tensor(5, 1, rng, 0.7);
  params["b2"] = random_tensor(1, 1, rng, 0.3);
  Tensor x = random_tensor(3, 4, rng);
  Tensor target = random_tensor(3, 1, rng);

  auto loss_fn = [&](const ParamMap& p, Tape* tape) {
    ParamMap bound = p;
    if (tape) {
      for (auto& [k, v] : bound) v = tape->watch(v);
    }
    Tensor h = relu(add(matmul(x, bound["W1"]), bound["b1"]));
    Tensor out = add(matmul(h, bound["W2"]), bound["b2"]);
    Tensor diff = sub(out, target);
    return mean(elementwise_mul(diff, diff));
  };

  Tape tape;
  ParamMap bound = params;
  for (auto& [k, v] : bound) v = tape.watch(v);
  Tensor h = relu(add(matmul(x, bound["W1"]), bound["b1"]));
  Tensor out = add(matmul(h, bound["W2"]), bound["b2"]);
  Tensor diff = sub(out, target);
  Tensor loss = mean(elementwise_mul(diff, diff));
  Gradients g = tape.backward(loss);
  ParamMap analytic;
  for (auto& [k, v] : bound) analytic[k] = g.at(v);
  // keyed by original names for the checker
  ParamMap analytic_named;
  for (auto& [k, v] : params) analytic_named[k] = analytic[k];

  auto eval = [&](const ParamMap& p) { return loss_fn(p, nullptr).item(); };
  auto res = oracle::check_gradients(eval, params, analytic_named, 1e-5);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("every differentiable op passes a finite-difference property check") {
  // Builds a scalar pipeline around each op so FD applies, over several seeds.
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    RngStream rng(seed, 42);
    ParamMap params;
    params["A"] = random_tensor(3, 4, rng);
    params["B"] = random_tensor(4, 3, rng);
    params["C"] = random_tensor(3, 4, rng);

    struct Case {
      const char* name;
      std::function<Tensor(const ParamMap&)> build;
    };
    std::vector<Case> cases = {
        {"matmul", [](const ParamMap& p) { return matmul(p.at("A"), p.at("B")); }},
        {"add", [](const ParamMap& p) { return add(p.at("A"), p.at("C")); }},
        {"sub", [](const ParamMap& p) { return sub(p.at("A"), p.at("C")); }},
        {"mul", [](const ParamMap& p) { return elementwise_mul(p.at("A"), p.at("C")); }},
        {"concat0", [](const ParamMap& p) { return concat(p.at("A"), p.at("C"), 0); }},
        {"concat1", [](const ParamMap& p) { return concat(p.at("A"), p.at("C"), 1); }},
        {"relu", [](const ParamMap& p) { return relu(p.at("A")); }},
        {"sigmoid", [](const ParamMap& p) { return sigmoid(p.at("A")); }},
        {"tanh", [](const ParamMap& p) { return tanh_act(p.at("A")); }},
        {"softmax", [](const ParamMap& p) { return softmax_columns(p.at("A")); }},
        {"meanpool", [](const ParamMap& p) { return mean_pool_rows(p.at("A")); }},
        {"maxpool", [](const ParamMap& p) { return max_pool_rows(p.at("A")); }},
        {"scale", [](const ParamMap& p) { return scale(p.at("A"), -1.7); }},
        {"take_rows", [](const ParamMap& p) { return take_rows(p.at("A"), {2, 0, 2}); }},
        {"reshape", [](const ParamMap& p) { return reshape(p.at("A"), 4, 3); }},
    };

    for (const auto& c : cases) {
      CAPTURE(c.name);
      CAPTURE(seed);
      // Weighted sum makes the root scalar sensitive to every output entry.
      auto scalarize = [&](const Tensor& t) {
        Tensor w(t.rows(), t.cols(), [&] {
          std::vector<double> v(static_cast<std::size_t>(t.size()));
          for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.3 + 0.1 * static_cast<double>(i % 7);
          return v;
        }());
        return sum(elementwise_mul(t, w));
      };
      Tape tape;
      ParamMap bound = params;
      for (auto& [k, v] : bound) v = tape.watch(v);
      Tensor root = scalarize(c.build(bound));
      Gradients g = tape.backward(root);
      ParamMap analytic;
      for (auto& [k, v] : bound) analytic[k] = g.at(v);

      auto eval = [&](const ParamMap& p) { return scalarize(c.build(p)).item(); };
      auto res = oracle::check_gradients_ladder(eval, params, analytic, 1e-4);
      CHECK_MESSAGE(res.max_rel_err < 1e-4, c.name << " max rel err " << res.max_rel_err);
    }
  }
}

TEST_CASE("softmax columns sum to one with entries in (0,1)") {
  RngStream rng(5, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(4, 6, rng, 3.0);
    Tensor p = softmax_columns(x);
    for (int j = 0; j < p.cols(); ++j) {
      double s = 0.0;
      for (int i = 0; i < p.rows(); ++i) {
        double v = p.at(i, j);
        CHECK(v > 0.0);
        CHECK(v < 1.0);
        s += v;
      }
      CHECK(std::fabs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("row pooling is permutation invariant") {
  RngStream rng(7, 2);
  Tensor x = random_tensor(8, 5, rng);
  Tensor mean_ref = mean_pool_rows(x);
  Tensor max_ref = max_pool_rows(x);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> perm = rng.permutation(8);
    Tensor shuffled = take_rows(x, perm);
    Tensor m = mean_pool_rows(shuffled);
    Tensor mx = max_pool_rows(shuffled);
    for (int j = 0; j < 5; ++j) {
      CHECK(std::fabs(m.at(0, j) - mean_ref.at(0, j)) < 1e-6);
      CHECK(mx.at(0, j) == max_ref.at(0, j));  // exact for max
    }
  }
}

TEST_CASE("tape replay produces bit-identical gradients") {
  auto run = [] {
    RngStream rng(9, 3);
    ParamMap params;
    params["W"] = Tensor(3, 3, [&] {
      RngStream r2(9, 4);
      std::vector<double> v(9);
      for (double& x : v) x = r2.normal();
      return v;
    }());
    Tensor x = Tensor::from_rows({{0.5, -1.0, 2.0}});
    Tape tape;
    Tensor w = tape.watch(params["W"]);
    Tensor loss = sum(tanh_act(matmul(x, w)));
    Gradients g = tape.backward(loss);
    return g.at(w);
  };
  Tensor g1 = run();
  Tensor g2 = run();
  CHECK(g1.same_values(g2));
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  ParamMap params;
  params["p"] = Tensor::row({1.0, -2.0, 3.0});
  ParamMap grads;
  grads["p"] = Tensor::zeros(1, 3);
  AdamState state(params, {.lr = 0.1});
  ParamMap before = params;
  for (int i = 0; i < 25; ++i) adam_step(params, grads, state);
  CHECK(params["p"].same_values(before["p"]));
  CHECK(state.step_count() == 25);
}

TEST_CASE("adam first step magnitude is close to lr") {
  // Closed form: step 1 moves each coordinate by lr * g / (|g| + eps') which
  // is within [0.9 lr, lr] for |g| >> eps.
  ParamMap params;
  params["p"] = Tensor::row({0.0, 0.0, 0.0});
  ParamMap grads;
  grads["p"] = Tensor::row({2.0, -0.5, 10.0});
  AdamConfig cfg;
  cfg.lr = 1e-4;  // paper default
  AdamState state(params, cfg);
  adam_step(params, grads, state);
  for (int j = 0; j < 3; ++j) {
    double delta = std::fabs(params["p"].at(0, j));
    CHECK(delta <= cfg.lr * (1.0 + 1e-12));
    CHECK(delta >= 0.9 * cfg.lr);
    // sign opposes the gradient
    CHECK(params["p"].at(0, j) * grads["p"].at(0, j) < 0.0);
  }
}

TEST_CASE("adam default learning rate is 1e-4") {
  AdamConfig cfg;
  CHECK(cfg.lr == 1e-4);
}

TEST_CASE("adam shape mismatch throws") {
  ParamMap params;
  params["p"] = Tensor::row({1.0, 2.0});
  ParamMap grads;
  grads["p"] = Tensor::row({1.0, 2.0, 3.0});
  AdamState state(params);
  CHECK_THROWS_AS(adam_step(params, grads, state), std::invalid_argument);
}

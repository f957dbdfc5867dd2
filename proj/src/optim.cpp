#include "cmml/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace cmml {

AdamState::AdamState(const ParamMap& params, AdamConfig config) : config_(config) {
  for (const auto& [name, p] : params) {
    m_.emplace(name, Tensor::zeros(p.rows(), p.cols()));
    v_.emplace(name, Tensor::zeros(p.rows(), p.cols()));
  }
}

void AdamState::step(ParamMap& params, const ParamMap& grads) {
  ++t_;
  double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) {
      throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                  " does not match parameter " + name + " " + p.shape_str());
    }
    auto mit = m_.find(name);
    auto vit = v_.find(name);
    if (mit == m_.end() || vit == v_.end()) {
      throw std::invalid_argument("adam_step: state missing for parameter " + name);
    }
    const auto& gv = g.values();
    std::vector<double> mv = mit->second.values();
    std::vector<double> vv = vit->second.values();
    std::vector<double> pv = p.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = config_.beta1 * mv[i] + (1.0 - config_.beta1) * gv[i];
      vv[i] = config_.beta2 * vv[i] + (1.0 - config_.beta2) * gv[i] * gv[i];
      double m_hat = mv[i] / bc1;
      double v_hat = vv[i] / bc2;
      pv[i] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
    p = Tensor(p.rows(), p.cols(), std::move(pv));
    mit->second = Tensor(g.rows(), g.cols(), std::move(mv));
    vit->second = Tensor(g.rows(), g.cols(), std::move(vv));
  }
}

void AdamState::restore(ParamMap m, ParamMap v, std::int64_t t) {
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = t;
}

void adam_step(ParamMap& params, const ParamMap& grads, AdamState& state) {
  state.step(params, grads);
}

}  // namespace cmml

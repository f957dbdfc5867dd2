#pragma once

// Test-only oracles, independent of the library's differentiation and
// evaluation paths. Nothing here may call back into tape machinery.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cmml/params.hpp"
#include "cmml/tensor.hpp"

namespace oracle {

inline double rel_err(double a, double b) {
  return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)});
}

struct GradCheck {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};

// Central finite differences of a scalar-valued function of a parameter map,
// compared against analytic gradients. `f` must be a pure function of the
// parameter values.
template <typename F>
GradCheck check_gradients(F&& f, const cmml::ParamMap& params, const cmml::ParamMap& analytic,
                          double h = 1e-5) {
  GradCheck result;
  for (const auto& [name, p] : params) {
    auto ait = analytic.find(name);
    const std::vector<double>* avals = nullptr;
    if (ait != analytic.end()) avals = &ait->second.values();
    for (int i = 0; i < p.size(); ++i) {
      cmml::ParamMap perturbed = params;
      std::vector<double> plus = p.values();
      std::vector<double> minus = p.values();
      plus[static_cast<std::size_t>(i)] += h;
      minus[static_cast<std::size_t>(i)] -= h;
      perturbed[name] = cmml::Tensor(p.rows(), p.cols(), plus);
      double fp = f(perturbed);
      perturbed[name] = cmml::Tensor(p.rows(), p.cols(), minus);
      double fm = f(perturbed);
      double fd = (fp - fm) / (2.0 * h);
      double an = avals ? (*avals)[static_cast<std::size_t>(i)] : 0.0;
      double e = rel_err(an, fd);
      if (e > result.max_rel_err) {
        result.max_rel_err = e;
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

// Same check with a step-size ladder: a finite-difference step that crosses a
// ReLU/max kink invalidates the comparison at that h, so retry with smaller
// steps before declaring failure. A wrong gradient rule fails at every h.
template <typename F>
GradCheck check_gradients_ladder(F&& f, const cmml::ParamMap& params,
                                 const cmml::ParamMap& analytic, double tol) {
  GradCheck last;
  for (double h : {1e-5, 1e-6, 1e-7}) {
    last = check_gradients(f, params, analytic, h);
    if (last.max_rel_err < tol) return last;
  }
  return last;
}

}  // namespace oracle

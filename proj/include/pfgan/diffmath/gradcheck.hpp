#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pfgan/diffmath/graph.hpp"

namespace pfgan {

// Builds a scalar loss on the given graph. Must be a deterministic function
// of the current parameter values (dropout masks frozen by the caller).
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t components = 0;
};

// Compares the analytic gradient of `loss` with respect to every scalar of
// every param in `params` against the central difference
// (f(p + eps) - f(p - eps)) / (2 eps). The error per component is
// |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check_report(const LossBuilder& loss, std::vector<Param*> params,
                                         double eps = 1e-5, double floor = 1e-8) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  if (!(floor > 0.0)) throw ConfigError("grad_check: floor must be positive");
  for (auto* p : params) p->zero_grad();
  double base = 0.0;
  {
    Graph g(true);
    Var l = loss(g);
    base = l.item();
    g.backward(l);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);

  auto eval = [&]() {
    Graph g(false);
    return loss(g).item();
  };
  if (eval() != base) {
    throw OracleInvalidError("grad_check: loss is not deterministic across evaluations");
  }

  GradCheckReport rep;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& w = params[pi]->value.values();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double orig = w[k];
      w[k] = orig + eps;
      const double fp = eval();
      w[k] = orig - eps;
      const double fm = eval();
      w[k] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][k];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++rep.components;
      if (rep.worst_param.empty() || err > rep.max_relative_error) {
        rep.max_relative_error = err;
        rep.worst_param = params[pi]->name;
        rep.worst_index = k;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return rep;
}

inline GradCheckReport grad_check_report(const LossBuilder& loss, ParamSet& params,
                                         double eps = 1e-5, double floor = 1e-8) {
  std::vector<Param*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  return grad_check_report(loss, std::move(ptrs), eps, floor);
}

inline double grad_check(const LossBuilder& loss, ParamSet& params, double eps = 1e-5) {
  return grad_check_report(loss, params, eps).max_relative_error;
}

inline double grad_check(const LossBuilder& loss, std::vector<Param*> params, double eps = 1e-5) {
  return grad_check_report(loss, std::move(params), eps).max_relative_error;
}

}  // namespace pfgan

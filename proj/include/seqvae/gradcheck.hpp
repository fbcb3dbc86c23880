#pragma once

#include <functional>
#include <string>
#include <vector>

#include "seqvae/nn.hpp"

namespace seqvae {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // per-parameter max relative error, in registration order
  std::vector<std::pair<std::string, double>> per_param;
};

// Verifies analytic gradients against central finite differences.
// builder must return a scalar loss Var and be a deterministic function of the
// store's parameters (sample any noise beforehand and close over it).
inline GradCheckReport grad_check(ParamStore& store,
                                  const std::function<Var(const Binding&)>& builder,
                                  double eps = 1e-5) {
  if (eps <= 0.0) throw ConfigError("grad_check: eps must be positive");

  Binding bind(store, true);
  Var loss = builder(bind);
  if (loss.numel() != 1) throw NumericError("grad_check: builder must return a scalar");
  backward(loss);

  GradCheckReport rep;
  for (const auto& name : store.param_names()) {
    const Tensor& analytic = bind[name].grad();
    if (!analytic.all_finite()) {
      throw NumericError("grad_check: non-finite analytic gradient in " + name);
    }
    Tensor& theta = store.param(name);
    double param_worst = 0.0;
    for (size_t i = 0; i < theta.numel(); ++i) {
      double orig = theta[i];
      double f_plus, f_minus;
      {
        NoGradGuard ng;
        theta[i] = orig + eps;
        Binding bp(store, false);
        f_plus = builder(bp).item();
        theta[i] = orig - eps;
        Binding bm(store, false);
        f_minus = builder(bm).item();
        theta[i] = orig;
      }
      double numeric = (f_plus - f_minus) / (2.0 * eps);
      if (!std::isfinite(numeric)) {
        throw NumericError("grad_check: non-finite numeric gradient in " + name + "[" +
                           std::to_string(i) + "]");
      }
      double a = analytic[i];
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      double rel = std::abs(a - numeric) / denom;
      if (rel > param_worst) param_worst = rel;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
    rep.per_param.emplace_back(name, param_worst);
  }
  return rep;
}

}  // namespace seqvae

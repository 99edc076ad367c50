#pragma once

#include "tokensynth/autodiff.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace tokensynth::testing {

// Compares analytic gradients of a scalar-valued function against central
// finite differences. The function is re-evaluated with perturbed copies of
// one input at a time; it must read inputs through the passed Vars only.
struct GradCheckResult {
  bool ok = true;
  double worst_rel = 0.0;
  long checked = 0;
  std::string detail;
};

struct GradCheckOpts {
  double eps = 1e-5;
  double tol = 1e-3;
  // 0 checks every element; otherwise a strided subset per input.
  long max_per_input = 0;
  // Functions that call ad::grad internally (penalty terms) need live graphs
  // during the finite-difference evaluations too.
  bool graph_in_eval = false;
};

inline GradCheckResult gradcheck(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& fn,
    const std::vector<Tensor>& inputs, GradCheckOpts opts = {}) {
  std::vector<ad::Var> vars;
  for (const auto& t : inputs) vars.push_back(ad::leaf(t.clone(), true));
  ad::Var out = fn(vars);
  if (out.numel() != 1) throw std::runtime_error("gradcheck: fn must return a scalar");
  std::vector<ad::Var> analytic = ad::grad(out, vars, false);

  auto eval = [&](size_t vi, long j, double delta) {
    std::vector<ad::Var> pv;
    for (size_t k = 0; k < inputs.size(); ++k) {
      Tensor t = inputs[k].clone();
      if (k == vi) t.at(j) += delta;
      pv.push_back(ad::leaf(std::move(t), opts.graph_in_eval));
    }
    if (opts.graph_in_eval) return fn(pv).value().at(0);
    ad::NoGradGuard ng;
    return fn(pv).value().at(0);
  };

  GradCheckResult res;
  for (size_t vi = 0; vi < vars.size(); ++vi) {
    const long n = inputs[vi].numel();
    long step = 1;
    if (opts.max_per_input > 0 && n > opts.max_per_input)
      step = (n + opts.max_per_input - 1) / opts.max_per_input;
    for (long j = 0; j < n; j += step) {
      const double fd = (eval(vi, j, opts.eps) - eval(vi, j, -opts.eps)) / (2.0 * opts.eps);
      const double an = analytic[vi].value().at(j);
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
      ++res.checked;
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.detail = "input " + std::to_string(vi) + " elem " + std::to_string(j) +
                     " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
      }
      if (rel > opts.tol) res.ok = false;
    }
  }
  return res;
}

// Variant for models that own their parameters: `build` must construct the
// scalar loss from the live param Vars each call, and `params` are those
// Vars. Values are perturbed in place and restored.
inline GradCheckResult gradcheck_params(const std::function<ad::Var()>& build,
                                        const std::vector<ad::Var>& params,
                                        GradCheckOpts opts = {}) {
  ad::Var out = build();
  if (out.numel() != 1) throw std::runtime_error("gradcheck: fn must return a scalar");
  std::vector<ad::Var> analytic = ad::grad(out, params, false);

  auto eval = [&]() {
    if (opts.graph_in_eval) return build().value().at(0);
    ad::NoGradGuard ng;
    return build().value().at(0);
  };

  GradCheckResult res;
  for (size_t vi = 0; vi < params.size(); ++vi) {
    Tensor& t = params[vi].value_ref();
    const long n = t.numel();
    long step = 1;
    if (opts.max_per_input > 0 && n > opts.max_per_input)
      step = (n + opts.max_per_input - 1) / opts.max_per_input;
    for (long j = 0; j < n; j += step) {
      const double saved = t.at(j);
      t.at(j) = saved + opts.eps;
      const double fp = eval();
      t.at(j) = saved - opts.eps;
      const double fm = eval();
      t.at(j) = saved;
      const double fd = (fp - fm) / (2.0 * opts.eps);
      const double an = analytic[vi].value().at(j);
      const double rel = std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-6});
      ++res.checked;
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.detail = "param " + std::to_string(vi) + " elem " + std::to_string(j) +
                     " analytic " + std::to_string(an) + " fd " + std::to_string(fd);
      }
      if (rel > opts.tol) res.ok = false;
    }
  }
  return res;
}

}  // namespace tokensynth::testing

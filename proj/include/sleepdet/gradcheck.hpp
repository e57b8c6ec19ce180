#pragma once

#include <functional>
#include <random>
#include <vector>

#include "sleepdet/autodiff.hpp"
#include "sleepdet/tensor.hpp"

// Central finite differences against the analytic backward pass, always in
// float64. The builder is re-invoked for every perturbed evaluation, so it
// must be deterministic in its inputs.

namespace sleepdet::ad {

struct GradCheckOptions {
  double h = 1e-5;
  int64_t max_coords = 10000;  // random subsample above this many coordinates
  uint64_t subsample_seed = 0x5eed;
  // Relative error with an absolute floor in the denominator, so near-zero
  // gradient pairs do not register as large relative discrepancies.
  double denom_floor = 1e-3;
  // A difference quotient that straddles an activation kink (selu at zero,
  // a maxpool argmax tie) reports a large error even for a correct backward.
  // Coordinates above this trigger are re-evaluated at shrinking steps; the
  // crossing disappears with the step, a wrong gradient does not.
  double refine_trigger = 1e-6;
  int refine_levels = 3;  // h/4, h/16, h/64
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
};

using Builder =
    std::function<NodePtr<double>(Graph<double>&, const std::vector<NodePtr<double>>&)>;

/// Checks d(scalar builder output)/d(inputs) for every requires-grad input.
inline GradCheckResult grad_check(const Builder& build, std::vector<Tensor<double>> inputs,
                                  GradCheckOptions opts = {}) {
  // Analytic gradients.
  std::vector<Tensor<double>> grads(inputs.size());
  {
    Graph<double> g;
    std::vector<NodePtr<double>> leaves;
    leaves.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i) {
      grads[i] = Tensor<double>::zeros(inputs[i].shape);
      leaves.push_back(g.param(inputs[i], &grads[i]));
    }
    auto root = build(g, leaves);
    g.backward(root);
  }

  auto eval = [&](const std::vector<Tensor<double>>& vals) {
    Graph<double> g(/*recording=*/false);
    std::vector<NodePtr<double>> leaves;
    leaves.reserve(vals.size());
    for (const auto& v : vals) leaves.push_back(g.input(v));
    return build(g, leaves)->value.data[0];
  };

  int64_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  std::vector<std::pair<size_t, int64_t>> coords;
  if (total <= opts.max_coords) {
    for (size_t i = 0; i < inputs.size(); ++i)
      for (int64_t k = 0; k < inputs[i].numel(); ++k) coords.emplace_back(i, k);
  } else {
    std::mt19937_64 rng(opts.subsample_seed);
    for (int64_t n = 0; n < opts.max_coords; ++n) {
      std::uniform_int_distribution<int64_t> flat(0, total - 1);
      int64_t pos = flat(rng);
      for (size_t i = 0; i < inputs.size(); ++i) {
        if (pos < inputs[i].numel()) {
          coords.emplace_back(i, pos);
          break;
        }
        pos -= inputs[i].numel();
      }
    }
  }

  GradCheckResult res;
  for (const auto& [i, k] : coords) {
    const double orig = inputs[i].data[static_cast<size_t>(k)];
    const double analytic = grads[i].data[static_cast<size_t>(k)];
    const auto error_at = [&](double h) {
      inputs[i].data[static_cast<size_t>(k)] = orig + h;
      const double fp = eval(inputs);
      inputs[i].data[static_cast<size_t>(k)] = orig - h;
      const double fm = eval(inputs);
      inputs[i].data[static_cast<size_t>(k)] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), opts.denom_floor});
      return std::abs(numeric - analytic) / denom;
    };
    double err = error_at(opts.h);
    double h = opts.h;
    for (int level = 0; level < opts.refine_levels && err > opts.refine_trigger; ++level) {
      h /= 4.0;
      err = std::min(err, error_at(h));
    }
    res.max_rel_error = std::max(res.max_rel_error, err);
    ++res.coords_checked;
  }
  return res;
}

}  // namespace sleepdet::ad

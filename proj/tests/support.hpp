#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "lmfb/params.hpp"
#include "lmfb/tape.hpp"
#include "lmfb/tensor.hpp"

namespace testsupport {

// Central finite differences on a scalar loss. `loss_fn` must rebuild the
// whole forward pass from the current parameter values on a fresh tape, so
// it stays independent of any cached analytic path.
inline double fd_gradient(const std::function<double()>& loss_fn, double& slot, double step) {
  const double keep = slot;
  slot = keep + step;
  const double up = loss_fn();
  slot = keep - step;
  const double down = loss_fn();
  slot = keep;
  return (up - down) / (2.0 * step);
}

struct GradCheckResult {
  double worst_rel = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares analytic grads (already populated on the tensors) with central
// differences, elementwise, using rel = |a - n| / max(1, |a|, |n|).
inline GradCheckResult grad_check(std::vector<lmfb::Tensor> leaves,
                                  const std::function<double()>& loss_fn,
                                  double step = 1e-4) {
  GradCheckResult res;
  for (auto& leaf : leaves) {
    auto vals = leaf.values();
    auto grads = leaf.grad();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double numeric = fd_gradient(loss_fn, vals[i], step);
      const double analytic = grads[i];
      const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
      const double rel = std::fabs(analytic - numeric) / denom;
      if (rel > res.worst_rel) {
        res.worst_rel = rel;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
      ++res.checked;
    }
  }
  return res;
}

inline GradCheckResult grad_check_store(lmfb::ParamStore& store,
                                        const std::function<double()>& loss_fn,
                                        double step = 1e-4) {
  std::vector<lmfb::Tensor> leaves;
  for (std::size_t i = 0; i < store.count(); ++i)
    if (store.tensor(i).requires_grad()) leaves.push_back(store.tensor(i));
  return grad_check(std::move(leaves), loss_fn, step);
}

}  // namespace testsupport

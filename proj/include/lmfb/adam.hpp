#pragma once

#include <cmath>
#include <vector>

#include "lmfb/params.hpp"

namespace lmfb {

// AdamW over a ParamStore. Gradient accumulation is the caller's business:
// zero_grads, run backward, then step(lr). Weight decay is decoupled and
// defaults to zero.
class AdamW {
 public:
  explicit AdamW(ParamStore& params, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8, double weight_decay = 0.0)
      : params_(&params), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
    m_.resize(params.count());
    v_.resize(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
      m_[i].assign(params.tensor(i).size(), 0.0);
      v_[i].assign(params.tensor(i).size(), 0.0);
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_->count(); ++i) {
      Tensor& p = params_->tensor(i);
      if (!p.requires_grad()) continue;
      auto vals = p.values();
      auto grads = p.grad();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const double g = grads[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        vals[j] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * vals[j]);
      }
    }
    params_->mark_dirty();
  }

 private:
  ParamStore* params_;
  double beta1_, beta2_, eps_, wd_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Clip gradients to a global L2 norm; no-op when max_norm <= 0.
inline void clip_grad_norm(ParamStore& params, double max_norm) {
  if (max_norm <= 0.0) return;
  const double norm = params.grad_norm();
  if (norm > max_norm) params.scale_grads(max_norm / norm);
}

}  // namespace lmfb

#pragma once

// Adam over the parameter registry. Moments are kept in the parameter scalar
// type so checkpoint-resumed runs see the identical state they saved.

#include <cmath>
#include <vector>

#include "t2diff/nn.hpp"

namespace t2diff {

template <typename S>
class Adam {
 public:
  Adam(std::vector<NamedParam<S>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params_) {
      m_.emplace_back((std::size_t)p.tensor.numel(), S(0));
      v_.emplace_back((std::size_t)p.tensor.numel(), S(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, (double)t_);
    const double bc2 = 1.0 - std::pow(beta2_, (double)t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<S>& p = params_[i].tensor;
      const std::vector<S>& g = p.grad();
      S* w = p.mut_data();
      S* m = m_[i].data();
      S* v = v_[i].data();
      for (std::size_t j = 0; j < g.size(); ++j) {
        m[j] = (S)(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
        v[j] = (S)(beta2_ * v[j] + (1.0 - beta2_) * (double)g[j] * (double)g[j]);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] -= (S)(lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  std::vector<NamedParam<S>> params_;
  std::vector<std::vector<S>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
};

}  // namespace t2diff

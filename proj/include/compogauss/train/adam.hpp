#pragma once

#include "compogauss/ad/graph.hpp"

namespace cg::train {

// Adam with per-parameter step counters (bias correction stays exact when a
// parameter group only updates on the steps that touch it).
template <class T>
class Adam {
 public:
  Adam(std::vector<ad::Var<T>*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      slots_[i].m = Tensor<T>(params_[i]->val().shape());
      slots_[i].v = Tensor<T>(params_[i]->val().shape());
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step() {
    for (size_t i = 0; i < params_.size(); ++i) {
      ad::Var<T>& p = *params_[i];
      if (p.grad_view().empty()) continue;
      Slot& s = slots_[i];
      ++s.t;
      double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
      double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
      Tensor<T>& val = p.val();
      const Tensor<T>& g = p.grad_view();
      for (int64_t k = 0; k < val.numel(); ++k) {
        double gk = static_cast<double>(g[k]);
        double m = beta1_ * static_cast<double>(s.m[k]) + (1.0 - beta1_) * gk;
        double v = beta2_ * static_cast<double>(s.v[k]) + (1.0 - beta2_) * gk * gk;
        s.m[k] = static_cast<T>(m);
        s.v[k] = static_cast<T>(v);
        double mh = m / bc1;
        double vh = v / bc2;
        val[k] = static_cast<T>(static_cast<double>(val[k]) - lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  void zero_grad() {
    for (ad::Var<T>* p : params_) p->zero_grad();
  }

 private:
  struct Slot {
    Tensor<T> m, v;
    int64_t t = 0;
  };
  std::vector<ad::Var<T>*> params_;
  std::vector<Slot> slots_;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace cg::train

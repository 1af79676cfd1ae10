#pragma once

#include <functional>
#include <string>
#include <vector>

#include "compogauss/ad/graph.hpp"

namespace cg::train {

template <class T>
struct GradCheckGroup {
  std::string name;
  ad::Var<T>* var = nullptr;
  std::vector<int64_t> indices;  // subset to probe; empty = all
};

struct GradCheckGroupReport {
  std::string name;
  double max_rel_err = 0;
  double max_abs_grad = 0;  // largest analytic gradient magnitude in the group
  int64_t probed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0;
  bool pass = false;
  std::vector<GradCheckGroupReport> groups;
};

// Central differences against reverse-mode adjoints. `build_loss` must
// reconstruct the loss graph deterministically from the current parameter
// values (any sampling noise frozen outside).
template <class T>
GradCheckReport gradient_check(const std::function<ad::Var<T>()>& build_loss,
                               std::vector<GradCheckGroup<T>> groups, T step, double tolerance) {
  ad::Var<T> loss = build_loss();
  CG_CHECK(loss.val().numel() == 1, "gradient_check: loss must be scalar");
  CG_CHECK(std::isfinite(static_cast<double>(loss.val()[0])), "gradient_check: non-finite loss");
  for (auto& g : groups) g.var->zero_grad();
  ad::backward(loss);

  auto eval = [&build_loss]() {
    ad::Var<T> l = build_loss();
    CG_CHECK(std::isfinite(static_cast<double>(l.val()[0])), "gradient_check: non-finite loss");
    return static_cast<double>(l.val()[0]);
  };

  GradCheckReport report;
  for (auto& g : groups) {
    GradCheckGroupReport gr;
    gr.name = g.name;
    std::vector<int64_t> idx = g.indices;
    if (idx.empty())
      for (int64_t i = 0; i < g.var->val().numel(); ++i) idx.push_back(i);
    const Tensor<T>& grad = g.var->grad_view();
    for (int64_t i : idx) {
      double an = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      gr.max_abs_grad = std::max(gr.max_abs_grad, std::abs(an));
      T save = g.var->val()[i];
      g.var->val()[i] = save + step;
      double fp = eval();
      g.var->val()[i] = save - step;
      double fm = eval();
      g.var->val()[i] = save;
      double fd = (fp - fm) / (2.0 * static_cast<double>(step));
      double err;
      if (std::abs(an) < 1e-9 && std::abs(fd) < 1e-9)
        err = 0.0;  // both effectively zero
      else
        err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
      gr.max_rel_err = std::max(gr.max_rel_err, err);
      ++gr.probed;
    }
    report.max_rel_err = std::max(report.max_rel_err, gr.max_rel_err);
    report.groups.push_back(std::move(gr));
  }
  report.pass = report.max_rel_err < tolerance;
  return report;
}

}  // namespace cg::train

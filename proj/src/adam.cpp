#include "cardioquant/adam.hpp"

#include <cmath>

namespace cq {

AdamState::AdamState(float lr, float beta1, float beta2, float eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void AdamState::step(Graph& g) {
  ++step_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(step_));
  for (const std::string& name : g.parameter_names()) {
    Tensor& p = g.param(name);
    const Tensor& grad = g.param_grad(name);
    if (grad.numel() != p.numel()) {
      throw StateError("adam: no gradient stored for parameter " + name);
    }
    Moments& mo = moments_[name];
    if (mo.m.empty()) {
      mo.m.assign(p.numel(), 0.0f);
      mo.v.assign(p.numel(), 0.0f);
    } else if (mo.m.size() != p.numel()) {
      throw StateError("adam: parameter " + name + " changed size mid-run");
    }
    float* pd = p.data();
    const float* gd = grad.data();
    for (std::size_t i = 0; i < p.numel(); ++i) {
      mo.m[i] = beta1_ * mo.m[i] + (1.0f - beta1_) * gd[i];
      mo.v[i] = beta2_ * mo.v[i] + (1.0f - beta2_) * gd[i] * gd[i];
      const float mhat = static_cast<float>(mo.m[i] / bc1);
      const float vhat = static_cast<float>(mo.v[i] / bc2);
      pd[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

}  // namespace cq

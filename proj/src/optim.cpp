#include "fiqa/optim.hpp"

#include <cmath>

#include "fiqa/error.hpp"

namespace fiqa {

Adam::Adam(std::vector<ParamGroup> groups, AdamOptions options)
    : groups_(std::move(groups)), opt_(options) {
  for (const auto& g : groups_) {
    std::vector<State> s;
    for (const nn::Parameter* p : g.params) {
      s.push_back({std::vector<float>(p->value.size(), 0.0f), std::vector<float>(p->value.size(), 0.0f)});
    }
    state_.push_back(std::move(s));
  }
}

void Adam::step() {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(opt_.beta1, t);
  const double bc2_sqrt = std::sqrt(1.0 - std::pow(opt_.beta2, t));
  const auto b1 = static_cast<float>(opt_.beta1);
  const auto b2 = static_cast<float>(opt_.beta2);
  const auto wd = static_cast<float>(opt_.weight_decay);
  const auto eps = static_cast<float>(opt_.eps);
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const auto step_size = static_cast<float>(lr(gi) / bc1);
    const auto inv_bc2 = static_cast<float>(1.0 / bc2_sqrt);
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      nn::Parameter& p = *groups_[gi].params[pi];
      State& s = state_[gi][pi];
      float* w = p.value.data();
      const float* g = p.grad.data();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float grad = g[i] + wd * w[i];
        s.m[i] = b1 * s.m[i] + (1.0f - b1) * grad;
        s.v[i] = b2 * s.v[i] + (1.0f - b2) * grad * grad;
        const float denom = std::sqrt(s.v[i]) * inv_bc2 + eps;
        w[i] -= step_size * s.m[i] / denom;
      }
    }
  }
}

void Adam::zero_grad() {
  for (auto& g : groups_) {
    for (nn::Parameter* p : g.params) p->zero_grad();
  }
}

double step_lr(double base, double factor, int step, int epoch) {
  if (step <= 0) throw Error(ErrorKind::InvalidConfig, "lr_step_epochs must be positive");
  return base * std::pow(factor, epoch / step);
}

}  // namespace fiqa

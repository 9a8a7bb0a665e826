#pragma once

#include <cstdint>
#include <vector>

#include "fiqa/nn/module.hpp"

namespace fiqa {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // L2 penalty added to the gradient (coupled, not decoupled AdamW).
  double weight_decay = 0.0;
};

struct ParamGroup {
  std::vector<nn::Parameter*> params;
  double lr_multiplier = 1.0;
};

class Adam {
 public:
  Adam(std::vector<ParamGroup> groups, AdamOptions options);

  // Each group runs at base_lr * its multiplier.
  void set_lr(double base_lr) { base_lr_ = base_lr; }
  double lr(std::size_t group) const { return base_lr_ * groups_[group].lr_multiplier; }
  void step();
  void zero_grad();
  std::int64_t steps() const { return steps_; }

 private:
  struct State {
    std::vector<float> m;
    std::vector<float> v;
  };
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<State>> state_;
  AdamOptions opt_;
  double base_lr_ = 0.0;
  std::int64_t steps_ = 0;
};

// base * factor^floor(epoch / step); epoch counts from 0.
double step_lr(double base, double factor, int step, int epoch);

}  // namespace fiqa

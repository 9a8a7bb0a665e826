#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fiqa/nn/module.hpp"

namespace fiqa::nn {

// MLP regression head: (Linear -> ReLU -> Dropout)* -> Linear(1).
// Parameters are stored as float tensors (shared with the optimizer and the
// checkpoint format); arithmetic runs in double so that the scalar output and
// its gradients are exact to double rounding.
class RegressionHead {
 public:
  enum class Op { Linear, ReLU, Dropout };
  struct LayerInfo {
    Op op;
    int in = 0;
    int out = 0;
    double rate = 0.0;
  };

  RegressionHead(int in_features, std::vector<int> hidden, double dropout_rate);

  int in_features() const { return in_features_; }
  double dropout_rate() const { return dropout_rate_; }
  // Ordered layer list, indexed like the parameter names (head.<i>.weight).
  const std::vector<LayerInfo>& layers() const { return layers_; }

  // features: N x in_features (any trailing spatial dims of size 1).
  std::vector<double> forward(const Tensor& features, Mode mode);
  // grad: dL/dq for each sample of the last train-mode forward. Returns
  // dL/dfeatures with the feature tensor's shape.
  Tensor backward(std::span<const double> grad);

  void collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
  void initialize(std::mt19937_64& rng);
  void set_dropout_seed(std::uint64_t seed) { dropout_rng_.seed(seed); }

 private:
  struct Dense {
    Parameter weight;  // out x in
    Parameter bias;    // out
  };
  using Matrix = std::vector<double>;  // row-major N x width

  int in_features_;
  double dropout_rate_;
  std::vector<LayerInfo> layers_;
  std::vector<Dense> dense_;
  std::vector<int> dense_index_;  // layer index of each Dense
  std::mt19937_64 dropout_rng_{0};

  // Cached per layer boundary during training.
  std::vector<Matrix> activations_;
  std::vector<std::vector<std::uint8_t>> masks_;
  Shape feature_shape_{};
};

}  // namespace fiqa::nn

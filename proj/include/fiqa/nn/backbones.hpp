#pragma once

#include <cstdint>
#include <memory>
#include <random>

#include "fiqa/nn/layers.hpp"

namespace fiqa::nn {

// Squeeze-and-excitation gate: x * hardsigmoid(fc2(relu(fc1(gap(x))))).
class SqueezeExcitation : public Module {
 public:
  SqueezeExcitation(int channels, int squeeze_channels);

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "SqueezeExcitation"; }

 private:
  GlobalAvgPool pool_;
  Conv2d fc1_;
  ReLU relu_;
  Conv2d fc2_;
  Hardsigmoid gate_;
  Tensor input_;
  Tensor scale_;
};

enum class Activation { ReLU, Hardswish };

struct MobileBlockConfig {
  int in_channels;
  int kernel;
  int expanded_channels;
  int out_channels;
  bool use_se;
  Activation activation;
  int stride;
};

// MobileNetV3 inverted residual: [expand] -> depthwise -> [SE] -> project,
// with an identity shortcut when shapes allow.
class MobileInvertedResidual : public Module {
 public:
  explicit MobileInvertedResidual(const MobileBlockConfig& cfg);

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<NamedBuffer>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "InvertedResidual"; }
  std::vector<Module*> children() override { return {&block_}; }

 private:
  Sequential block_;
  bool residual_;
};

// ShuffleNetV2 unit. Stride 1 splits channels and transforms one half;
// stride 2 transforms the full input through both branches. Outputs are
// concatenated and channel-shuffled with two groups.
class ShuffleUnit : public Module {
 public:
  ShuffleUnit(int in_channels, int out_channels, int stride);

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<NamedBuffer>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "InvertedResidual"; }
  std::vector<Module*> children() override { return {&branch1_, &branch2_}; }

 private:
  int stride_;
  int branch_channels_;
  Sequential branch1_;
  Sequential branch2_;
  Shape input_shape_{};
};

// Backbone truncated before its classifier and followed by global average
// pooling, so forward yields N x feature_dim x 1 x 1.
class Backbone : public Module {
 public:
  virtual int feature_dim() const = 0;
  // Fresh weights for training from scratch.
  virtual void initialize(std::mt19937_64& rng) = 0;
};

std::unique_ptr<Backbone> make_mobilenet_v3_small();
std::unique_ptr<Backbone> make_shufflenet_v2_x0_5();

int make_divisible(double value, int divisor);

}  // namespace fiqa::nn

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "fiqa/nn/module.hpp"

namespace fiqa::nn {

struct ConvOptions {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;
  int groups = 1;
  bool bias = false;
};

// 2-D convolution, square kernel, zero padding. Three kernels: pointwise
// (1x1, stride 1) as a GEMM, depthwise as direct loops, everything else via
// im2col + GEMM per group.
class Conv2d : public Module {
 public:
  explicit Conv2d(const ConvOptions& options);

  const ConvOptions& options() const { return opt_; }
  Parameter& weight() { return weight_; }
  Parameter* bias() { return bias_ ? &*bias_ : nullptr; }

  Shape output_shape(const Shape& input) const;

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "Conv2d"; }

 private:
  bool is_pointwise() const;
  bool is_depthwise() const;
  void check_input(const Shape& s) const;

  ConvOptions opt_;
  Parameter weight_;
  std::optional<Parameter> bias_;
  Tensor input_;
};

class BatchNorm2d : public Module {
 public:
  BatchNorm2d(int channels, double eps, double momentum);

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }
  double eps() const { return eps_; }
  // Cumulative mode: running statistics restart and become the plain average
  // of every following train-mode batch, as with momentum=None in torch.
  void set_cumulative(bool on);

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override;
  void collect_buffers(const std::string& prefix,
                       std::vector<NamedBuffer>& out) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "BatchNorm2d"; }

 private:
  int channels_;
  double eps_;
  double momentum_;
  bool cumulative_ = false;
  std::int64_t tracked_batches_ = 0;
  Parameter weight_;
  Parameter bias_;
  Tensor running_mean_;
  Tensor running_var_;
  Tensor normalized_;
  std::vector<double> inv_std_;
};

class ReLU : public Module {
 public:
  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "ReLU"; }

 private:
  std::vector<std::uint8_t> active_;
};

class Hardswish : public Module {
 public:
  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "Hardswish"; }

 private:
  Tensor input_;
};

class Hardsigmoid : public Module {
 public:
  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "Hardsigmoid"; }

 private:
  Tensor input_;
};

class MaxPool2d : public Module {
 public:
  MaxPool2d(int kernel, int stride, int padding);

  Shape output_shape(const Shape& input) const;

  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "MaxPool2d"; }

 private:
  int kernel_;
  int stride_;
  int padding_;
  Shape input_shape_{};
  std::vector<std::int32_t> argmax_;
};

// Spatial mean: N x C x H x W -> N x C x 1 x 1.
class GlobalAvgPool : public Module {
 public:
  Tensor forward(Tensor x, Mode mode) override;
  Tensor backward(Tensor grad) override;
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override;
  std::string type_name() const override { return "AdaptiveAvgPool2d"; }

 private:
  Shape input_shape_{};
};

// Initializers used when no pretrained weights are supplied.
void kaiming_normal_fan_out(Parameter& weight, std::mt19937_64& rng);
void constant_fill(Parameter& p, float value);

}  // namespace fiqa::nn

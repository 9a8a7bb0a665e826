#include "fiqa/nn/backbones.hpp"

#include <algorithm>
#include <array>
#include <cstring>

#include "fiqa/error.hpp"

namespace fiqa::nn {

namespace {

constexpr double kMobileBnEps = 1e-3;
constexpr double kMobileBnMomentum = 0.01;
constexpr double kShuffleBnEps = 1e-5;
constexpr double kShuffleBnMomentum = 0.1;

// conv -> bn [-> activation] as one Sequential, named like torchvision's
// Conv2dNormActivation (0: conv, 1: bn, 2: activation).
std::unique_ptr<Sequential> conv_bn_act(const ConvOptions& conv, double eps, double momentum,
                                        std::optional<Activation> act) {
  auto seq = std::make_unique<Sequential>();
  seq->push<Conv2d>(conv);
  seq->push<BatchNorm2d>(conv.out_channels, eps, momentum);
  if (act == Activation::ReLU) seq->push<ReLU>();
  if (act == Activation::Hardswish) seq->push<Hardswish>();
  return seq;
}

void initialize_module(Module& module, std::mt19937_64& rng) {
  std::vector<NamedParameter> params;
  module.collect_parameters("", params);
  for (auto& p : params) {
    const Shape s = p.param->value.shape();
    const bool is_bias = p.name.size() >= 4 && p.name.compare(p.name.size() - 4, 4, "bias") == 0;
    if (s.c == 1 && s.h == 1 && s.w == 1) {
      // 1-D: BN affine terms and conv biases.
      const bool bn_weight = !is_bias && p.name.find("fc") == std::string::npos;
      p.param->value.fill(bn_weight ? 1.0f : 0.0f);
    } else {
      kaiming_normal_fan_out(*p.param, rng);
    }
  }
  std::vector<NamedBuffer> buffers;
  module.collect_buffers("", buffers);
  for (auto& b : buffers) {
    const bool is_var = b.name.find("running_var") != std::string::npos;
    b.tensor->fill(is_var ? 1.0f : 0.0f);
  }
}

class MobileNetV3Small : public Backbone {
 public:
  MobileNetV3Small() {
    static constexpr std::array<MobileBlockConfig, 11> kBlocks{{
        {16, 3, 16, 16, true, Activation::ReLU, 2},
        {16, 3, 72, 24, false, Activation::ReLU, 2},
        {24, 3, 88, 24, false, Activation::ReLU, 1},
        {24, 5, 96, 40, true, Activation::Hardswish, 2},
        {40, 5, 240, 40, true, Activation::Hardswish, 1},
        {40, 5, 240, 40, true, Activation::Hardswish, 1},
        {40, 5, 120, 48, true, Activation::Hardswish, 1},
        {48, 5, 144, 48, true, Activation::Hardswish, 1},
        {48, 5, 288, 96, true, Activation::Hardswish, 2},
        {96, 5, 576, 96, true, Activation::Hardswish, 1},
        {96, 5, 576, 96, true, Activation::Hardswish, 1},
    }};
    features_.add("0", conv_bn_act({3, 16, 3, 2, 1, 1, false}, kMobileBnEps, kMobileBnMomentum,
                                   Activation::Hardswish));
    for (const auto& cfg : kBlocks) features_.push<MobileInvertedResidual>(cfg);
    features_.add("12", conv_bn_act({96, 576, 1, 1, 0, 1, false}, kMobileBnEps,
                                    kMobileBnMomentum, Activation::Hardswish));
  }

  int feature_dim() const override { return 576; }

  void initialize(std::mt19937_64& rng) override { initialize_module(features_, rng); }

  Tensor forward(Tensor x, Mode mode) override {
    return pool_.forward(features_.forward(std::move(x), mode), mode);
  }
  Tensor backward(Tensor grad) override {
    return features_.backward(pool_.backward(std::move(grad)));
  }
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override {
    features_.collect_parameters(join_name(prefix, "features"), out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override {
    features_.collect_buffers(join_name(prefix, "features"), out);
  }
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override {
    const Shape s = features_.trace(input, join_name(name, "features"), out);
    return pool_.trace(s, join_name(name, "avgpool"), out);
  }
  std::string type_name() const override { return "MobileNetV3Small"; }
  std::vector<Module*> children() override { return {&features_}; }

 private:
  Sequential features_;
  GlobalAvgPool pool_;
};

class ShuffleNetV2 : public Backbone {
 public:
  explicit ShuffleNetV2(const std::array<int, 5>& channels) : feature_dim_(channels[4]) {
    conv1_.push<Conv2d>(ConvOptions{3, channels[0], 3, 2, 1, 1, false});
    conv1_.push<BatchNorm2d>(channels[0], kShuffleBnEps, kShuffleBnMomentum);
    conv1_.push<ReLU>();
    static constexpr std::array<int, 3> kRepeats{4, 8, 4};
    int in = channels[0];
    for (int stage = 0; stage < 3; ++stage) {
      const int out = channels[stage + 1];
      stages_[stage].push<ShuffleUnit>(in, out, 2);
      for (int r = 1; r < kRepeats[stage]; ++r) stages_[stage].push<ShuffleUnit>(out, out, 1);
      in = out;
    }
    conv5_.push<Conv2d>(ConvOptions{in, channels[4], 1, 1, 0, 1, false});
    conv5_.push<BatchNorm2d>(channels[4], kShuffleBnEps, kShuffleBnMomentum);
    conv5_.push<ReLU>();
  }

  int feature_dim() const override { return feature_dim_; }

  void initialize(std::mt19937_64& rng) override {
    initialize_module(conv1_, rng);
    for (auto& st : stages_) initialize_module(st, rng);
    initialize_module(conv5_, rng);
  }

  Tensor forward(Tensor x, Mode mode) override {
    x = maxpool_.forward(conv1_.forward(std::move(x), mode), mode);
    for (auto& st : stages_) x = st.forward(std::move(x), mode);
    return pool_.forward(conv5_.forward(std::move(x), mode), mode);
  }
  Tensor backward(Tensor grad) override {
    grad = conv5_.backward(pool_.backward(std::move(grad)));
    for (auto it = stages_.rbegin(); it != stages_.rend(); ++it) grad = it->backward(std::move(grad));
    return conv1_.backward(maxpool_.backward(std::move(grad)));
  }
  void collect_parameters(const std::string& prefix,
                          std::vector<NamedParameter>& out) override {
    conv1_.collect_parameters(join_name(prefix, "conv1"), out);
    for (int i = 0; i < 3; ++i) {
      stages_[i].collect_parameters(join_name(prefix, "stage" + std::to_string(i + 2)), out);
    }
    conv5_.collect_parameters(join_name(prefix, "conv5"), out);
  }
  void collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) override {
    conv1_.collect_buffers(join_name(prefix, "conv1"), out);
    for (int i = 0; i < 3; ++i) {
      stages_[i].collect_buffers(join_name(prefix, "stage" + std::to_string(i + 2)), out);
    }
    conv5_.collect_buffers(join_name(prefix, "conv5"), out);
  }
  Shape trace(const Shape& input, const std::string& name,
              std::vector<LayerCost>& out) override {
    Shape s = conv1_.trace(input, join_name(name, "conv1"), out);
    s = maxpool_.trace(s, join_name(name, "maxpool"), out);
    for (int i = 0; i < 3; ++i) {
      s = stages_[i].trace(s, join_name(name, "stage" + std::to_string(i + 2)), out);
    }
    s = conv5_.trace(s, join_name(name, "conv5"), out);
    return pool_.trace(s, join_name(name, "avgpool"), out);
  }
  std::string type_name() const override { return "ShuffleNetV2"; }
  std::vector<Module*> children() override {
    return {&conv1_, &stages_[0], &stages_[1], &stages_[2], &conv5_};
  }

 private:
  int feature_dim_;
  Sequential conv1_;
  MaxPool2d maxpool_{3, 2, 1};
  std::array<Sequential, 3> stages_;
  Sequential conv5_;
  GlobalAvgPool pool_;
};

}  // namespace

int make_divisible(double value, int divisor) {
  int v = std::max(divisor, static_cast<int>(value + divisor / 2.0) / divisor * divisor);
  if (v < 0.9 * value) v += divisor;
  return v;
}

// --------------------------------------------------------- SqueezeExcitation

SqueezeExcitation::SqueezeExcitation(int channels, int squeeze_channels)
    : fc1_({channels, squeeze_channels, 1, 1, 0, 1, true}),
      fc2_({squeeze_channels, channels, 1, 1, 0, 1, true}) {}

Tensor SqueezeExcitation::forward(Tensor x, Mode mode) {
  Tensor s = pool_.forward(x, mode);
  s = fc1_.forward(std::move(s), mode);
  s = relu_.forward(std::move(s), mode);
  s = fc2_.forward(std::move(s), mode);
  s = gate_.forward(std::move(s), mode);
  const Shape shape = x.shape();
  const std::size_t plane = shape.plane();
  Tensor y(shape);
  for (int n = 0; n < shape.n; ++n) {
    for (int c = 0; c < shape.c; ++c) {
      const float g = s.at(n, c, 0, 0);
      const float* src = x.channel(n, c);
      float* dst = y.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * g;
    }
  }
  if (mode == Mode::Train) {
    input_ = std::move(x);
    scale_ = std::move(s);
  }
  return y;
}

Tensor SqueezeExcitation::backward(Tensor grad) {
  if (input_.empty() || grad.shape() != input_.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "SqueezeExcitation: backward without matching forward");
  }
  const Shape shape = input_.shape();
  const std::size_t plane = shape.plane();
  Tensor dscale(Shape{shape.n, shape.c, 1, 1});
  for (int n = 0; n < shape.n; ++n) {
    for (int c = 0; c < shape.c; ++c) {
      const float* g = grad.channel(n, c);
      const float* src = input_.channel(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(g[i]) * src[i];
      dscale.at(n, c, 0, 0) = static_cast<float>(acc);
    }
  }
  Tensor ds = gate_.backward(std::move(dscale));
  ds = fc2_.backward(std::move(ds));
  ds = relu_.backward(std::move(ds));
  ds = fc1_.backward(std::move(ds));
  Tensor dx = pool_.backward(std::move(ds));
  for (int n = 0; n < shape.n; ++n) {
    for (int c = 0; c < shape.c; ++c) {
      const float gscale = scale_.at(n, c, 0, 0);
      const float* g = grad.channel(n, c);
      float* d = dx.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) d[i] += g[i] * gscale;
    }
  }
  input_ = Tensor();
  scale_ = Tensor();
  return dx;
}

void SqueezeExcitation::collect_parameters(const std::string& prefix,
                                           std::vector<NamedParameter>& out) {
  fc1_.collect_parameters(join_name(prefix, "fc1"), out);
  fc2_.collect_parameters(join_name(prefix, "fc2"), out);
}

Shape SqueezeExcitation::trace(const Shape& input, const std::string& name,
                               std::vector<LayerCost>& out) {
  Shape s = pool_.trace(input, join_name(name, "avgpool"), out);
  s = fc1_.trace(s, join_name(name, "fc1"), out);
  s = relu_.trace(s, join_name(name, "activation"), out);
  s = fc2_.trace(s, join_name(name, "fc2"), out);
  gate_.trace(s, join_name(name, "scale_activation"), out);
  out.push_back({join_name(name, "scale"), "Mul", 0, 0, input, true});
  return input;
}

// ---------------------------------------------------- MobileInvertedResidual

MobileInvertedResidual::MobileInvertedResidual(const MobileBlockConfig& cfg)
    : residual_(cfg.stride == 1 && cfg.in_channels == cfg.out_channels) {
  if (cfg.expanded_channels != cfg.in_channels) {
    block_.add(std::to_string(block_.size()),
               conv_bn_act({cfg.in_channels, cfg.expanded_channels, 1, 1, 0, 1, false},
                           kMobileBnEps, kMobileBnMomentum, cfg.activation));
  }
  block_.add(std::to_string(block_.size()),
             conv_bn_act({cfg.expanded_channels, cfg.expanded_channels, cfg.kernel, cfg.stride,
                          (cfg.kernel - 1) / 2, cfg.expanded_channels, false},
                         kMobileBnEps, kMobileBnMomentum, cfg.activation));
  if (cfg.use_se) {
    block_.push<SqueezeExcitation>(cfg.expanded_channels,
                                   make_divisible(cfg.expanded_channels / 4, 8));
  }
  block_.add(std::to_string(block_.size()),
             conv_bn_act({cfg.expanded_channels, cfg.out_channels, 1, 1, 0, 1, false},
                         kMobileBnEps, kMobileBnMomentum, std::nullopt));
}

Tensor MobileInvertedResidual::forward(Tensor x, Mode mode) {
  if (!residual_) return block_.forward(std::move(x), mode);
  Tensor y = block_.forward(x, mode);
  float* out = y.data();
  const float* in = x.data();
  for (std::size_t i = 0; i < y.size(); ++i) out[i] += in[i];
  return y;
}

Tensor MobileInvertedResidual::backward(Tensor grad) {
  if (!residual_) return block_.backward(std::move(grad));
  Tensor dx = block_.backward(grad);
  float* d = dx.data();
  const float* g = grad.data();
  for (std::size_t i = 0; i < dx.size(); ++i) d[i] += g[i];
  return dx;
}

void MobileInvertedResidual::collect_parameters(const std::string& prefix,
                                                std::vector<NamedParameter>& out) {
  block_.collect_parameters(join_name(prefix, "block"), out);
}

void MobileInvertedResidual::collect_buffers(const std::string& prefix,
                                             std::vector<NamedBuffer>& out) {
  block_.collect_buffers(join_name(prefix, "block"), out);
}

Shape MobileInvertedResidual::trace(const Shape& input, const std::string& name,
                                    std::vector<LayerCost>& out) {
  const Shape s = block_.trace(input, join_name(name, "block"), out);
  if (residual_) out.push_back({join_name(name, "add"), "Add", 0, 0, s, true});
  return s;
}

// --------------------------------------------------------------- ShuffleUnit

ShuffleUnit::ShuffleUnit(int in_channels, int out_channels, int stride)
    : stride_(stride), branch_channels_(out_channels / 2) {
  if (out_channels % 2 != 0 || (stride == 1 && in_channels != out_channels)) {
    throw Error(ErrorKind::InconsistentSpec, "invalid ShuffleUnit channel configuration");
  }
  const int bf = branch_channels_;
  if (stride > 1) {
    branch1_.push<Conv2d>(ConvOptions{in_channels, in_channels, 3, stride, 1, in_channels, false});
    branch1_.push<BatchNorm2d>(in_channels, kShuffleBnEps, kShuffleBnMomentum);
    branch1_.push<Conv2d>(ConvOptions{in_channels, bf, 1, 1, 0, 1, false});
    branch1_.push<BatchNorm2d>(bf, kShuffleBnEps, kShuffleBnMomentum);
    branch1_.push<ReLU>();
  }
  branch2_.push<Conv2d>(ConvOptions{stride > 1 ? in_channels : bf, bf, 1, 1, 0, 1, false});
  branch2_.push<BatchNorm2d>(bf, kShuffleBnEps, kShuffleBnMomentum);
  branch2_.push<ReLU>();
  branch2_.push<Conv2d>(ConvOptions{bf, bf, 3, stride, 1, bf, false});
  branch2_.push<BatchNorm2d>(bf, kShuffleBnEps, kShuffleBnMomentum);
  branch2_.push<Conv2d>(ConvOptions{bf, bf, 1, 1, 0, 1, false});
  branch2_.push<BatchNorm2d>(bf, kShuffleBnEps, kShuffleBnMomentum);
  branch2_.push<ReLU>();
}

namespace {

// Concatenate two equal-width halves along channels and shuffle with two
// groups: output channel 2j+i comes from half i, channel j.
Tensor concat_shuffle(const Tensor& a, const Tensor& b) {
  const Shape s = a.shape();
  const int half = s.c;
  Tensor out(Shape{s.n, 2 * half, s.h, s.w});
  const std::size_t bytes = s.plane() * sizeof(float);
  for (int n = 0; n < s.n; ++n) {
    for (int j = 0; j < half; ++j) {
      std::memcpy(out.channel(n, 2 * j), a.channel(n, j), bytes);
      std::memcpy(out.channel(n, 2 * j + 1), b.channel(n, j), bytes);
    }
  }
  return out;
}

// Inverse of concat_shuffle.
void unshuffle_split(const Tensor& grad, Tensor& a, Tensor& b) {
  const Shape s = grad.shape();
  const int half = s.c / 2;
  a = Tensor(Shape{s.n, half, s.h, s.w});
  b = Tensor(Shape{s.n, half, s.h, s.w});
  const std::size_t bytes = s.plane() * sizeof(float);
  for (int n = 0; n < s.n; ++n) {
    for (int j = 0; j < half; ++j) {
      std::memcpy(a.channel(n, j), grad.channel(n, 2 * j), bytes);
      std::memcpy(b.channel(n, j), grad.channel(n, 2 * j + 1), bytes);
    }
  }
}

Tensor channel_range(const Tensor& x, int first, int count) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, count, s.h, s.w});
  const std::size_t bytes = count * s.plane() * sizeof(float);
  for (int n = 0; n < s.n; ++n) std::memcpy(out.sample(n), x.channel(n, first), bytes);
  return out;
}

}  // namespace

Tensor ShuffleUnit::forward(Tensor x, Mode mode) {
  const Shape in = x.shape();
  if (stride_ == 1 && in.c != 2 * branch_channels_) {
    throw Error(ErrorKind::ShapeMismatch, "ShuffleUnit: unexpected input " + to_string(in));
  }
  if (mode == Mode::Train) input_shape_ = in;
  if (stride_ == 1) {
    Tensor left = channel_range(x, 0, branch_channels_);
    Tensor right = channel_range(x, branch_channels_, branch_channels_);
    x = Tensor();
    return concat_shuffle(left, branch2_.forward(std::move(right), mode));
  }
  Tensor b1 = branch1_.forward(x, mode);
  Tensor b2 = branch2_.forward(std::move(x), mode);
  return concat_shuffle(b1, b2);
}

Tensor ShuffleUnit::backward(Tensor grad) {
  Tensor ga;
  Tensor gb;
  unshuffle_split(grad, ga, gb);
  grad = Tensor();
  if (stride_ == 1) {
    Tensor dright = branch2_.backward(std::move(gb));
    Tensor dx(input_shape_);
    const std::size_t bytes = branch_channels_ * input_shape_.plane() * sizeof(float);
    for (int n = 0; n < input_shape_.n; ++n) {
      std::memcpy(dx.channel(n, 0), ga.sample(n), bytes);
      std::memcpy(dx.channel(n, branch_channels_), dright.sample(n), bytes);
    }
    return dx;
  }
  Tensor dx = branch1_.backward(std::move(ga));
  Tensor d2 = branch2_.backward(std::move(gb));
  float* d = dx.data();
  const float* e = d2.data();
  for (std::size_t i = 0; i < dx.size(); ++i) d[i] += e[i];
  return dx;
}

void ShuffleUnit::collect_parameters(const std::string& prefix,
                                     std::vector<NamedParameter>& out) {
  branch1_.collect_parameters(join_name(prefix, "branch1"), out);
  branch2_.collect_parameters(join_name(prefix, "branch2"), out);
}

void ShuffleUnit::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  branch1_.collect_buffers(join_name(prefix, "branch1"), out);
  branch2_.collect_buffers(join_name(prefix, "branch2"), out);
}

Shape ShuffleUnit::trace(const Shape& input, const std::string& name,
                         std::vector<LayerCost>& out) {
  Shape s2;
  if (stride_ == 1) {
    Shape half = input;
    half.c = branch_channels_;
    s2 = branch2_.trace(half, join_name(name, "branch2"), out);
  } else {
    branch1_.trace(input, join_name(name, "branch1"), out);
    s2 = branch2_.trace(input, join_name(name, "branch2"), out);
  }
  Shape result = s2;
  result.c = 2 * branch_channels_;
  out.push_back({join_name(name, "shuffle"), "ChannelShuffle", 0, 0, result, true});
  return result;
}

// ------------------------------------------------------------------ factories

std::unique_ptr<Backbone> make_mobilenet_v3_small() {
  return std::make_unique<MobileNetV3Small>();
}

std::unique_ptr<Backbone> make_shufflenet_v2_x0_5() {
  return std::make_unique<ShuffleNetV2>(std::array<int, 5>{24, 48, 96, 192, 1024});
}

}  // namespace fiqa::nn

#include "fiqa/nn/head.hpp"

#include <cmath>

#include "fiqa/error.hpp"

namespace fiqa::nn {

RegressionHead::RegressionHead(int in_features, std::vector<int> hidden, double dropout_rate)
    : in_features_(in_features), dropout_rate_(dropout_rate) {
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw Error(ErrorKind::InconsistentSpec, "dropout rate must lie in [0, 1)");
  }
  int width = in_features;
  hidden.push_back(1);
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    const int out = hidden[i];
    if (out <= 0) throw Error(ErrorKind::InconsistentSpec, "head widths must be positive");
    dense_index_.push_back(static_cast<int>(layers_.size()));
    layers_.push_back({Op::Linear, width, out, 0.0});
    Dense d;
    d.weight = Parameter(Shape{out, width, 1, 1});
    d.bias = Parameter(Shape{out, 1, 1, 1});
    dense_.push_back(std::move(d));
    if (i + 1 < hidden.size()) {
      layers_.push_back({Op::ReLU, out, out, 0.0});
      layers_.push_back({Op::Dropout, out, out, dropout_rate});
    }
    width = out;
  }
}

std::vector<double> RegressionHead::forward(const Tensor& features, Mode mode) {
  const Shape fs = features.shape();
  if (static_cast<int>(fs.sample_size()) != in_features_) {
    throw Error(ErrorKind::ShapeMismatch, "head expects " + std::to_string(in_features_) +
                                              " features, got " + to_string(fs));
  }
  const int n = fs.n;
  Matrix x(features.data(), features.data() + features.size());
  const bool train = mode == Mode::Train;
  if (train) {
    activations_.clear();
    masks_.clear();
    feature_shape_ = fs;
  }
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  std::size_t next_dense = 0;
  for (const auto& layer : layers_) {
    if (train) activations_.push_back(x);
    switch (layer.op) {
      case Op::Linear: {
        const Dense& d = dense_[next_dense++];
        const float* w = d.weight.value.data();
        const float* b = d.bias.value.data();
        Matrix y(static_cast<std::size_t>(n) * layer.out);
        for (int s = 0; s < n; ++s) {
          const double* xs = x.data() + static_cast<std::size_t>(s) * layer.in;
          for (int o = 0; o < layer.out; ++o) {
            const float* wr = w + static_cast<std::size_t>(o) * layer.in;
            double acc = b[o];
            for (int i = 0; i < layer.in; ++i) acc += static_cast<double>(wr[i]) * xs[i];
            y[static_cast<std::size_t>(s) * layer.out + o] = acc;
          }
        }
        x = std::move(y);
        break;
      }
      case Op::ReLU:
        for (double& v : x) v = v > 0.0 ? v : 0.0;
        break;
      case Op::Dropout:
        if (train && layer.rate > 0.0) {
          std::vector<std::uint8_t> mask(x.size());
          for (std::size_t i = 0; i < x.size(); ++i) {
            // 53-bit uniform from the raw engine output, independent of the
            // standard library's distribution implementations.
            const double u = static_cast<double>(dropout_rng_() >> 11) * 0x1.0p-53;
            mask[i] = u >= layer.rate;
            x[i] = mask[i] ? x[i] * keep_scale : 0.0;
          }
          masks_.push_back(std::move(mask));
        } else if (train) {
          masks_.emplace_back(x.size(), 1);
        }
        break;
    }
  }
  return x;
}

Tensor RegressionHead::backward(std::span<const double> grad) {
  if (activations_.size() != layers_.size()) {
    throw Error(ErrorKind::ShapeMismatch, "head: backward without a train-mode forward");
  }
  const int n = feature_shape_.n;
  if (static_cast<int>(grad.size()) != n) {
    throw Error(ErrorKind::LengthMismatch, "head: gradient length does not match batch");
  }
  Matrix g(grad.begin(), grad.end());
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  std::size_t dense_left = dense_.size();
  std::size_t masks_left = masks_.size();
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerInfo& layer = layers_[li];
    const Matrix& x = activations_[li];
    switch (layer.op) {
      case Op::Linear: {
        Dense& d = dense_[--dense_left];
        const float* w = d.weight.value.data();
        float* dw = d.weight.grad.data();
        float* db = d.bias.grad.data();
        for (int o = 0; o < layer.out; ++o) {
          double acc_b = 0.0;
          float* dwr = dw + static_cast<std::size_t>(o) * layer.in;
          for (int i = 0; i < layer.in; ++i) {
            double acc = 0.0;
            for (int s = 0; s < n; ++s) {
              acc += g[static_cast<std::size_t>(s) * layer.out + o] *
                     x[static_cast<std::size_t>(s) * layer.in + i];
            }
            dwr[i] += static_cast<float>(acc);
          }
          for (int s = 0; s < n; ++s) acc_b += g[static_cast<std::size_t>(s) * layer.out + o];
          db[o] += static_cast<float>(acc_b);
        }
        Matrix gx(static_cast<std::size_t>(n) * layer.in, 0.0);
        for (int s = 0; s < n; ++s) {
          for (int o = 0; o < layer.out; ++o) {
            const double go = g[static_cast<std::size_t>(s) * layer.out + o];
            const float* wr = w + static_cast<std::size_t>(o) * layer.in;
            double* gxs = gx.data() + static_cast<std::size_t>(s) * layer.in;
            for (int i = 0; i < layer.in; ++i) gxs[i] += go * wr[i];
          }
        }
        g = std::move(gx);
        break;
      }
      case Op::ReLU:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = x[i] > 0.0 ? g[i] : 0.0;
        break;
      case Op::Dropout: {
        const auto& mask = masks_[--masks_left];
        if (layer.rate > 0.0) {
          for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask[i] ? g[i] * keep_scale : 0.0;
        }
        break;
      }
    }
  }
  Tensor dfeat(feature_shape_);
  for (std::size_t i = 0; i < g.size(); ++i) dfeat.data()[i] = static_cast<float>(g[i]);
  activations_.clear();
  masks_.clear();
  return dfeat;
}

void RegressionHead::collect_parameters(const std::string& prefix,
                                        std::vector<NamedParameter>& out) {
  for (std::size_t i = 0; i < dense_.size(); ++i) {
    const std::string base = join_name(prefix, std::to_string(dense_index_[i]));
    out.push_back({join_name(base, "weight"), &dense_[i].weight});
    out.push_back({join_name(base, "bias"), &dense_[i].bias});
  }
}

void RegressionHead::initialize(std::mt19937_64& rng) {
  for (auto& d : dense_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(d.weight.value.shape().c));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (float& v : d.weight.value.values()) v = static_cast<float>(dist(rng));
    d.bias.value.fill(0.0f);
  }
}

}  // namespace fiqa::nn

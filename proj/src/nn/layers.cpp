#include "fiqa/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include <Eigen/Dense>

#include "fiqa/error.hpp"

namespace fiqa::nn {

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

// Pairwise-ish float sum: kLanes independent partial sums (vectorizable),
// combined in double.
constexpr std::size_t kLanes = 16;

double plane_sum(const float* v, std::size_t n) {
  float lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += v[i + l];
  }
  double acc = 0.0;
  for (; i < n; ++i) acc += v[i];
  for (std::size_t l = 0; l < kLanes; ++l) acc += lanes[l];
  return acc;
}

void require_cache(const Tensor& cache, const char* layer) {
  if (cache.empty()) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(layer) + ": backward called without a train-mode forward");
  }
}

void require_same(const Shape& a, const Shape& b, const char* layer) {
  if (!(a == b)) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(layer) + ": gradient " + to_string(a) +
                    " does not match output " + to_string(b));
  }
}

// Valid output columns [lo, hi) for kernel tap kx: 0 <= ox*s - p + kx < w.
inline void tap_range(int kx, int stride, int pad, int in_w, int out_w, int& lo, int& hi) {
  const int off = kx - pad;
  lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
  const int last = in_w - 1 - off;
  hi = last < 0 ? 0 : std::min(out_w, last / stride + 1);
  if (hi < lo) hi = lo;
}

void im2col(const float* in, int channels, int h, int w, int k, int stride, int pad,
            int out_h, int out_w, float* col) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    const float* src = in + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        int lo, hi;
        tap_range(kx, stride, pad, w, out_w, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          float* row = dst + static_cast<std::size_t>(oy) * out_w;
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + out_w, 0.0f);
            continue;
          }
          const float* src_row = src + static_cast<std::size_t>(iy) * w;
          std::fill(row, row + lo, 0.0f);
          for (int ox = lo; ox < hi; ++ox) row[ox] = src_row[ox * stride - pad + kx];
          std::fill(row + hi, row + out_w, 0.0f);
        }
      }
    }
  }
}

void col2im(const float* col, int channels, int h, int w, int k, int stride, int pad,
            int out_h, int out_w, float* out) {
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;
  for (int c = 0; c < channels; ++c) {
    float* dst = out + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * out_plane;
        int lo, hi;
        tap_range(kx, stride, pad, w, out_w, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const float* row = src + static_cast<std::size_t>(oy) * out_w;
          float* dst_row = dst + static_cast<std::size_t>(iy) * w;
          for (int ox = lo; ox < hi; ++ox) dst_row[ox * stride - pad + kx] += row[ox];
        }
      }
    }
  }
}

}  // namespace

std::string join_name(const std::string& prefix, const std::string& child) {
  if (prefix.empty()) return child;
  if (child.empty()) return prefix;
  return prefix + "." + child;
}

void Module::collect_parameters(const std::string&, std::vector<NamedParameter>&) {}
void Module::collect_buffers(const std::string&, std::vector<NamedBuffer>&) {}

Shape Module::trace(const Shape& input, const std::string& name,
                    std::vector<LayerCost>& out) {
  Shape probe = input;
  probe.n = 1;
  Tensor y = forward(Tensor(probe), Mode::Eval);
  Shape result = y.shape();
  result.n = input.n;
  std::vector<NamedParameter> params;
  collect_parameters("", params);
  std::int64_t count = 0;
  for (const auto& p : params) count += static_cast<std::int64_t>(p.param->value.size());
  out.push_back({name, type_name(), 0, count, result, false});
  return result;
}

// ---------------------------------------------------------------- Sequential

Sequential& Sequential::add(std::string name, std::unique_ptr<Module> module) {
  children_.emplace_back(std::move(name), std::move(module));
  return *this;
}

Tensor Sequential::forward(Tensor x, Mode mode) {
  for (auto& [name, child] : children_) x = child->forward(std::move(x), mode);
  return x;
}

Tensor Sequential::backward(Tensor grad) {
  for (auto it = children_.rbegin(); it != children_.rend(); ++it) {
    grad = it->second->backward(std::move(grad));
  }
  return grad;
}

void Sequential::collect_parameters(const std::string& prefix,
                                    std::vector<NamedParameter>& out) {
  for (auto& [name, child] : children_) child->collect_parameters(join_name(prefix, name), out);
}

std::vector<Module*> Sequential::children() {
  std::vector<Module*> out;
  for (auto& [name, child] : children_) out.push_back(child.get());
  return out;
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  for (auto& [name, child] : children_) child->collect_buffers(join_name(prefix, name), out);
}

Shape Sequential::trace(const Shape& input, const std::string& name,
                        std::vector<LayerCost>& out) {
  Shape s = input;
  for (auto& [child_name, child] : children_) s = child->trace(s, join_name(name, child_name), out);
  return s;
}

// -------------------------------------------------------------------- Conv2d

Conv2d::Conv2d(const ConvOptions& options) : opt_(options) {
  if (opt_.in_channels <= 0 || opt_.out_channels <= 0 || opt_.kernel <= 0 ||
      opt_.stride <= 0 || opt_.padding < 0 || opt_.groups <= 0 ||
      opt_.in_channels % opt_.groups != 0 || opt_.out_channels % opt_.groups != 0) {
    throw Error(ErrorKind::InconsistentSpec, "invalid Conv2d options");
  }
  weight_ = Parameter({opt_.out_channels, opt_.in_channels / opt_.groups, opt_.kernel, opt_.kernel});
  if (opt_.bias) bias_.emplace(Shape{opt_.out_channels, 1, 1, 1});
}

bool Conv2d::is_pointwise() const {
  return opt_.kernel == 1 && opt_.stride == 1 && opt_.padding == 0 && opt_.groups == 1;
}

bool Conv2d::is_depthwise() const {
  return opt_.groups == opt_.in_channels && opt_.groups == opt_.out_channels;
}

Shape Conv2d::output_shape(const Shape& input) const {
  const int oh = (input.h + 2 * opt_.padding - opt_.kernel) / opt_.stride + 1;
  const int ow = (input.w + 2 * opt_.padding - opt_.kernel) / opt_.stride + 1;
  return {input.n, opt_.out_channels, oh, ow};
}

void Conv2d::check_input(const Shape& s) const {
  if (s.c != opt_.in_channels || s.h + 2 * opt_.padding < opt_.kernel ||
      s.w + 2 * opt_.padding < opt_.kernel) {
    throw Error(ErrorKind::ShapeMismatch,
                "Conv2d expects " + std::to_string(opt_.in_channels) +
                    " input channels and room for the kernel, got " + to_string(s));
  }
}

Tensor Conv2d::forward(Tensor x, Mode mode) {
  check_input(x.shape());
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  Tensor y = is_depthwise() ? Tensor(os) : Tensor::uninitialized(os);
  const int k = opt_.kernel;
  const int s = opt_.stride;
  const int p = opt_.padding;
  const std::size_t out_plane = os.plane();

  if (is_pointwise()) {
    ConstMapRM w(weight_.value.data(), opt_.out_channels, opt_.in_channels);
    for (int n = 0; n < in.n; ++n) {
      ConstMapRM xin(x.sample(n), in.c, static_cast<Eigen::Index>(in.plane()));
      MapRM yout(y.sample(n), os.c, static_cast<Eigen::Index>(out_plane));
      yout.noalias() = w * xin;
    }
  } else if (is_depthwise()) {
    for (int n = 0; n < in.n; ++n) {
      for (int c = 0; c < in.c; ++c) {
        const float* src = x.channel(n, c);
        float* dst = y.channel(n, c);
        const float* wk = weight_.value.data() + static_cast<std::size_t>(c) * k * k;
        for (int oy = 0; oy < os.h; ++oy) {
          float* out_row = dst + static_cast<std::size_t>(oy) * os.w;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= in.h) continue;
            const float* in_row = src + static_cast<std::size_t>(iy) * in.w;
            for (int kx = 0; kx < k; ++kx) {
              const float wv = wk[ky * k + kx];
              int lo, hi;
              tap_range(kx, s, p, in.w, os.w, lo, hi);
              const float* base = in_row - p + kx;
              if (s == 1) {
                for (int ox = lo; ox < hi; ++ox) out_row[ox] += wv * base[ox];
              } else {
                for (int ox = lo; ox < hi; ++ox) out_row[ox] += wv * base[ox * s];
              }
            }
          }
        }
      }
    }
  } else {
    const int cin_g = opt_.in_channels / opt_.groups;
    const int cout_g = opt_.out_channels / opt_.groups;
    const int rows = cin_g * k * k;
    std::vector<float> col(static_cast<std::size_t>(rows) * out_plane);
    for (int n = 0; n < in.n; ++n) {
      for (int g = 0; g < opt_.groups; ++g) {
        im2col(x.sample(n) + static_cast<std::size_t>(g) * cin_g * in.plane(), cin_g, in.h,
               in.w, k, s, p, os.h, os.w, col.data());
        ConstMapRM w(weight_.value.data() + static_cast<std::size_t>(g) * cout_g * rows,
                     cout_g, rows);
        ConstMapRM c(col.data(), rows, static_cast<Eigen::Index>(out_plane));
        MapRM yout(y.sample(n) + static_cast<std::size_t>(g) * cout_g * out_plane, cout_g,
                   static_cast<Eigen::Index>(out_plane));
        yout.noalias() = w * c;
      }
    }
  }

  if (bias_) {
    for (int n = 0; n < os.n; ++n) {
      for (int c = 0; c < os.c; ++c) {
        float* dst = y.channel(n, c);
        const float b = bias_->value.data()[c];
        for (std::size_t i = 0; i < out_plane; ++i) dst[i] += b;
      }
    }
  }

  if (mode == Mode::Train) input_ = std::move(x);
  return y;
}

Tensor Conv2d::backward(Tensor grad) {
  require_cache(input_, "Conv2d");
  const Shape in = input_.shape();
  const Shape os = output_shape(in);
  require_same(grad.shape(), os, "Conv2d");
  const int k = opt_.kernel;
  const int s = opt_.stride;
  const int p = opt_.padding;
  const std::size_t out_plane = os.plane();
  Tensor dx = is_pointwise() ? Tensor::uninitialized(in) : Tensor(in);

  if (bias_) {
    float* db = bias_->grad.data();
    for (int c = 0; c < os.c; ++c) {
      double acc = 0.0;
      for (int n = 0; n < os.n; ++n) {
        const float* g = grad.channel(n, c);
        float row = 0.0f;
        for (std::size_t i = 0; i < out_plane; ++i) row += g[i];
        acc += row;
      }
      db[c] += static_cast<float>(acc);
    }
  }

  if (is_pointwise()) {
    ConstMapRM w(weight_.value.data(), opt_.out_channels, opt_.in_channels);
    MapRM dw(weight_.grad.data(), opt_.out_channels, opt_.in_channels);
    for (int n = 0; n < in.n; ++n) {
      ConstMapRM xin(input_.sample(n), in.c, static_cast<Eigen::Index>(in.plane()));
      ConstMapRM g(grad.sample(n), os.c, static_cast<Eigen::Index>(out_plane));
      MapRM dxn(dx.sample(n), in.c, static_cast<Eigen::Index>(in.plane()));
      dw.noalias() += g * xin.transpose();
      dxn.noalias() = w.transpose() * g;
    }
  } else if (is_depthwise()) {
    std::vector<double> dw_acc(static_cast<std::size_t>(k) * k);
    for (int c = 0; c < in.c; ++c) {
      std::fill(dw_acc.begin(), dw_acc.end(), 0.0);
      const float* wk = weight_.value.data() + static_cast<std::size_t>(c) * k * k;
      for (int n = 0; n < in.n; ++n) {
        const float* src = input_.channel(n, c);
        const float* g = grad.channel(n, c);
        float* dsrc = dx.channel(n, c);
        for (int oy = 0; oy < os.h; ++oy) {
          const float* g_row = g + static_cast<std::size_t>(oy) * os.w;
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * s - p + ky;
            if (iy < 0 || iy >= in.h) continue;
            const float* in_row = src + static_cast<std::size_t>(iy) * in.w - p;
            float* d_row = dsrc + static_cast<std::size_t>(iy) * in.w - p;
            for (int kx = 0; kx < k; ++kx) {
              const float wv = wk[ky * k + kx];
              int lo, hi;
              tap_range(kx, s, p, in.w, os.w, lo, hi);
              float acc = 0.0f;
              if (s == 1) {
                const float* base = in_row + kx;
                float* dbase = d_row + kx;
                for (int ox = lo; ox < hi; ++ox) {
                  acc += g_row[ox] * base[ox];
                  dbase[ox] += wv * g_row[ox];
                }
              } else {
                for (int ox = lo; ox < hi; ++ox) {
                  const int ix = ox * s + kx;
                  acc += g_row[ox] * in_row[ix];
                  d_row[ix] += wv * g_row[ox];
                }
              }
              dw_acc[ky * k + kx] += acc;
            }
          }
        }
      }
      float* dw = weight_.grad.data() + static_cast<std::size_t>(c) * k * k;
      for (int i = 0; i < k * k; ++i) dw[i] += static_cast<float>(dw_acc[i]);
    }
  } else {
    const int cin_g = opt_.in_channels / opt_.groups;
    const int cout_g = opt_.out_channels / opt_.groups;
    const int rows = cin_g * k * k;
    std::vector<float> col(static_cast<std::size_t>(rows) * out_plane);
    std::vector<float> dcol(col.size());
    for (int n = 0; n < in.n; ++n) {
      for (int g = 0; g < opt_.groups; ++g) {
        im2col(input_.sample(n) + static_cast<std::size_t>(g) * cin_g * in.plane(), cin_g,
               in.h, in.w, k, s, p, os.h, os.w, col.data());
        ConstMapRM w(weight_.value.data() + static_cast<std::size_t>(g) * cout_g * rows,
                     cout_g, rows);
        MapRM dw(weight_.grad.data() + static_cast<std::size_t>(g) * cout_g * rows, cout_g,
                 rows);
        ConstMapRM c(col.data(), rows, static_cast<Eigen::Index>(out_plane));
        ConstMapRM gm(grad.sample(n) + static_cast<std::size_t>(g) * cout_g * out_plane,
                      cout_g, static_cast<Eigen::Index>(out_plane));
        MapRM dc(dcol.data(), rows, static_cast<Eigen::Index>(out_plane));
        dw.noalias() += gm * c.transpose();
        dc.noalias() = w.transpose() * gm;
        col2im(dcol.data(), cin_g, in.h, in.w, k, s, p, os.h, os.w,
               dx.sample(n) + static_cast<std::size_t>(g) * cin_g * in.plane());
      }
    }
  }
  input_ = Tensor();
  return dx;
}

void Conv2d::collect_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_});
  if (bias_) out.push_back({join_name(prefix, "bias"), &*bias_});
}

Shape Conv2d::trace(const Shape& input, const std::string& name, std::vector<LayerCost>& out) {
  check_input(input);
  const Shape os = output_shape(input);
  const std::int64_t per_output =
      static_cast<std::int64_t>(opt_.in_channels / opt_.groups) * opt_.kernel * opt_.kernel;
  std::int64_t params = static_cast<std::int64_t>(weight_.value.size());
  if (bias_) params += opt_.out_channels;
  out.push_back({name, type_name(),
                 per_output * static_cast<std::int64_t>(os.sample_size()) * input.n, params, os,
                 true});
  return os;
}

// --------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(int channels, double eps, double momentum)
    : channels_(channels),
      eps_(eps),
      momentum_(momentum),
      weight_(Shape{channels, 1, 1, 1}),
      bias_(Shape{channels, 1, 1, 1}),
      running_mean_(Shape{channels, 1, 1, 1}, 0.0f),
      running_var_(Shape{channels, 1, 1, 1}, 1.0f) {
  weight_.value.fill(1.0f);
}

void BatchNorm2d::set_cumulative(bool on) {
  cumulative_ = on;
  tracked_batches_ = 0;
  if (on) {
    running_mean_.fill(0.0f);
    running_var_.fill(1.0f);
  }
}

Tensor BatchNorm2d::forward(Tensor x, Mode mode) {
  const Shape s = x.shape();
  if (s.c != channels_) {
    throw Error(ErrorKind::ShapeMismatch, "BatchNorm2d expects " + std::to_string(channels_) +
                                              " channels, got " + to_string(s));
  }
  const std::size_t plane = s.plane();
  const float* gamma = weight_.value.data();
  const float* beta = bias_.value.data();

  if (mode == Mode::Eval) {
    for (int c = 0; c < s.c; ++c) {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.data()[c]) + eps_);
      const float scale = static_cast<float>(gamma[c] * inv);
      const float shift =
          static_cast<float>(beta[c] - running_mean_.data()[c] * gamma[c] * inv);
      for (int n = 0; n < s.n; ++n) {
        float* v = x.channel(n, c);
        for (std::size_t i = 0; i < plane; ++i) v[i] = v[i] * scale + shift;
      }
    }
    return x;
  }

  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  if (count < 2) {
    throw Error(ErrorKind::ShapeMismatch,
                "BatchNorm2d in train mode needs more than one value per channel");
  }
  inv_std_.assign(s.c, 0.0);
  const double momentum = cumulative_ ? 1.0 / static_cast<double>(++tracked_batches_) : momentum_;
  Tensor y = Tensor::uninitialized(s);
  for (int c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (int n = 0; n < s.n; ++n) sum += plane_sum(x.channel(n, c), plane);
    const double mean = sum / count;
    const float fm = static_cast<float>(mean);
    double sq = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* v = x.channel(n, c);
      float row[kLanes] = {};
      std::size_t i = 0;
      for (; i + kLanes <= plane; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          const float d = v[i + l] - fm;
          row[l] += d * d;
        }
      }
      double acc = 0.0;
      for (; i < plane; ++i) acc += (v[i] - fm) * (v[i] - fm);
      for (std::size_t l = 0; l < kLanes; ++l) acc += row[l];
      sq += acc;
    }
    // Correct for the float rounding of the mean.
    double shift = 0.0;
    for (int n = 0; n < s.n; ++n) shift += plane_sum(x.channel(n, c), plane);
    shift = shift / count - fm;
    sq -= count * shift * shift;
    const double var = sq / count;
    const double inv = 1.0 / std::sqrt(var + eps_);
    inv_std_[c] = inv;
    const float fmean = static_cast<float>(mean);
    const float finv = static_cast<float>(inv);
    for (int n = 0; n < s.n; ++n) {
      float* v = x.channel(n, c);
      float* out = y.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        v[i] = (v[i] - fmean) * finv;
        out[i] = v[i] * gamma[c] + beta[c];
      }
    }
    float& rm = running_mean_.data()[c];
    float& rv = running_var_.data()[c];
    rm = static_cast<float>((1.0 - momentum) * rm + momentum * mean);
    rv = static_cast<float>((1.0 - momentum) * rv + momentum * var * count / (count - 1.0));
  }
  normalized_ = std::move(x);
  return y;
}

Tensor BatchNorm2d::backward(Tensor grad) {
  require_cache(normalized_, "BatchNorm2d");
  const Shape s = normalized_.shape();
  require_same(grad.shape(), s, "BatchNorm2d");
  const std::size_t plane = s.plane();
  const double count = static_cast<double>(s.n) * static_cast<double>(plane);
  for (int c = 0; c < s.c; ++c) {
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const float* g = grad.channel(n, c);
      const float* xh = normalized_.channel(n, c);
      float rg[kLanes] = {};
      float rgx[kLanes] = {};
      std::size_t i = 0;
      for (; i + kLanes <= plane; i += kLanes) {
        for (std::size_t l = 0; l < kLanes; ++l) {
          rg[l] += g[i + l];
          rgx[l] += g[i + l] * xh[i + l];
        }
      }
      for (; i < plane; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      for (std::size_t l = 0; l < kLanes; ++l) {
        sum_g += rg[l];
        sum_gx += rgx[l];
      }
    }
    weight_.grad.data()[c] += static_cast<float>(sum_gx);
    bias_.grad.data()[c] += static_cast<float>(sum_g);
    const float scale = static_cast<float>(weight_.value.data()[c] * inv_std_[c]);
    const float mean_g = static_cast<float>(sum_g / count);
    const float mean_gx = static_cast<float>(sum_gx / count);
    for (int n = 0; n < s.n; ++n) {
      float* g = grad.channel(n, c);
      const float* xh = normalized_.channel(n, c);
      for (std::size_t i = 0; i < plane; ++i) g[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
    }
  }
  normalized_ = Tensor();
  return grad;
}

void BatchNorm2d::collect_parameters(const std::string& prefix,
                                     std::vector<NamedParameter>& out) {
  out.push_back({join_name(prefix, "weight"), &weight_});
  out.push_back({join_name(prefix, "bias"), &bias_});
}

void BatchNorm2d::collect_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  out.push_back({join_name(prefix, "running_mean"), &running_mean_});
  out.push_back({join_name(prefix, "running_var"), &running_var_});
}

Shape BatchNorm2d::trace(const Shape& input, const std::string& name,
                         std::vector<LayerCost>& out) {
  out.push_back({name, type_name(), 0, 2LL * channels_, input, true});
  return input;
}

// --------------------------------------------------------------- activations

Tensor ReLU::forward(Tensor x, Mode mode) {
  float* v = x.data();
  const std::size_t n = x.size();
  if (mode == Mode::Train) {
    active_.resize(n);
    std::uint8_t* m = active_.data();
    for (std::size_t i = 0; i < n; ++i) m[i] = v[i] > 0.0f;
  }
  for (std::size_t i = 0; i < n; ++i) v[i] = std::max(v[i], 0.0f);
  return x;
}

Tensor ReLU::backward(Tensor grad) {
  if (active_.size() != grad.size()) {
    throw Error(ErrorKind::ShapeMismatch, "ReLU: backward without matching forward");
  }
  float* g = grad.data();
  const std::uint8_t* m = active_.data();
  for (std::size_t i = 0; i < grad.size(); ++i) g[i] = m[i] ? g[i] : 0.0f;
  active_.clear();
  active_.shrink_to_fit();
  return grad;
}

Shape ReLU::trace(const Shape& input, const std::string& name, std::vector<LayerCost>& out) {
  out.push_back({name, type_name(), 0, 0, input, true});
  return input;
}

Tensor Hardswish::forward(Tensor x, Mode mode) {
  Tensor y = Tensor::uninitialized(x.shape());
  const float* v = x.data();
  float* o = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    o[i] = v[i] * std::min(std::max(v[i] + 3.0f, 0.0f), 6.0f) / 6.0f;
  }
  if (mode == Mode::Train) input_ = std::move(x);
  return y;
}

Tensor Hardswish::backward(Tensor grad) {
  require_cache(input_, "Hardswish");
  require_same(grad.shape(), input_.shape(), "Hardswish");
  float* g = grad.data();
  const float* v = input_.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (v[i] < -3.0f) {
      g[i] = 0.0f;
    } else if (v[i] <= 3.0f) {
      g[i] *= v[i] / 3.0f + 0.5f;
    }
  }
  input_ = Tensor();
  return grad;
}

Shape Hardswish::trace(const Shape& input, const std::string& name,
                       std::vector<LayerCost>& out) {
  out.push_back({name, type_name(), 0, 0, input, true});
  return input;
}

Tensor Hardsigmoid::forward(Tensor x, Mode mode) {
  Tensor y = Tensor::uninitialized(x.shape());
  const float* v = x.data();
  float* o = y.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    o[i] = std::min(std::max(v[i] + 3.0f, 0.0f), 6.0f) / 6.0f;
  }
  if (mode == Mode::Train) input_ = std::move(x);
  return y;
}

Tensor Hardsigmoid::backward(Tensor grad) {
  require_cache(input_, "Hardsigmoid");
  require_same(grad.shape(), input_.shape(), "Hardsigmoid");
  float* g = grad.data();
  const float* v = input_.data();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    g[i] = (v[i] > -3.0f && v[i] < 3.0f) ? g[i] / 6.0f : 0.0f;
  }
  input_ = Tensor();
  return grad;
}

Shape Hardsigmoid::trace(const Shape& input, const std::string& name,
                         std::vector<LayerCost>& out) {
  out.push_back({name, type_name(), 0, 0, input, true});
  return input;
}

// ------------------------------------------------------------------- pooling

MaxPool2d::MaxPool2d(int kernel, int stride, int padding)
    : kernel_(kernel), stride_(stride), padding_(padding) {}

Shape MaxPool2d::output_shape(const Shape& input) const {
  return {input.n, input.c, (input.h + 2 * padding_ - kernel_) / stride_ + 1,
          (input.w + 2 * padding_ - kernel_) / stride_ + 1};
}

Tensor MaxPool2d::forward(Tensor x, Mode mode) {
  const Shape in = x.shape();
  const Shape os = output_shape(in);
  if (os.h <= 0 || os.w <= 0) {
    throw Error(ErrorKind::ShapeMismatch, "MaxPool2d input too small: " + to_string(in));
  }
  Tensor y = Tensor::uninitialized(os);
  if (mode == Mode::Train) argmax_.resize(os.count());
  std::int32_t* am = argmax_.data();
  const bool track = mode == Mode::Train;
  std::size_t idx = 0;
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const float* src = x.channel(n, c);
      float* dst = y.channel(n, c);
      for (int oy = 0; oy < os.h; ++oy) {
        const int y0 = std::max(0, oy * stride_ - padding_);
        const int y1 = std::min(in.h, oy * stride_ - padding_ + kernel_);
        for (int ox = 0; ox < os.w; ++ox, ++idx) {
          const int x0 = std::max(0, ox * stride_ - padding_);
          const int x1 = std::min(in.w, ox * stride_ - padding_ + kernel_);
          // Scan order matches the reference: first maximum wins.
          std::int32_t best_at = y0 * in.w + x0;
          float best = src[best_at];
          for (int iy = y0; iy < y1; ++iy) {
            const float* row = src + iy * in.w;
            for (int ix = x0; ix < x1; ++ix) {
              if (row[ix] > best) {
                best = row[ix];
                best_at = iy * in.w + ix;
              }
            }
          }
          dst[oy * os.w + ox] = best;
          if (track) am[idx] = best_at;
        }
      }
    }
  }
  if (mode == Mode::Train) input_shape_ = in;
  return y;
}

Tensor MaxPool2d::backward(Tensor grad) {
  if (argmax_.size() != grad.size()) {
    throw Error(ErrorKind::ShapeMismatch, "MaxPool2d: backward without matching forward");
  }
  Tensor dx(input_shape_);
  const std::size_t out_plane = grad.shape().plane();
  for (int n = 0; n < input_shape_.n; ++n) {
    for (int c = 0; c < input_shape_.c; ++c) {
      const float* g = grad.channel(n, c);
      float* d = dx.channel(n, c);
      const std::int32_t* am =
          argmax_.data() + (static_cast<std::size_t>(n) * input_shape_.c + c) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) d[am[i]] += g[i];
    }
  }
  argmax_.clear();
  argmax_.shrink_to_fit();
  return dx;
}

Shape MaxPool2d::trace(const Shape& input, const std::string& name,
                       std::vector<LayerCost>& out) {
  const Shape os = output_shape(input);
  out.push_back({name, type_name(),
                 static_cast<std::int64_t>(os.count()) * kernel_ * kernel_, 0, os, true});
  return os;
}

Tensor GlobalAvgPool::forward(Tensor x, Mode mode) {
  const Shape in = x.shape();
  Tensor y(Shape{in.n, in.c, 1, 1});
  const std::size_t plane = in.plane();
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const float* v = x.channel(n, c);
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += v[i];
      y.at(n, c, 0, 0) = static_cast<float>(acc / static_cast<double>(plane));
    }
  }
  if (mode == Mode::Train) input_shape_ = in;
  return y;
}

Tensor GlobalAvgPool::backward(Tensor grad) {
  if (grad.shape() != Shape{input_shape_.n, input_shape_.c, 1, 1}) {
    throw Error(ErrorKind::ShapeMismatch, "GlobalAvgPool: backward without matching forward");
  }
  Tensor dx(input_shape_);
  const std::size_t plane = input_shape_.plane();
  const float scale = 1.0f / static_cast<float>(plane);
  for (int n = 0; n < input_shape_.n; ++n) {
    for (int c = 0; c < input_shape_.c; ++c) {
      const float v = grad.at(n, c, 0, 0) * scale;
      float* d = dx.channel(n, c);
      std::fill(d, d + plane, v);
    }
  }
  return dx;
}

Shape GlobalAvgPool::trace(const Shape& input, const std::string& name,
                           std::vector<LayerCost>& out) {
  const Shape os{input.n, input.c, 1, 1};
  out.push_back({name, type_name(), static_cast<std::int64_t>(input.count()), 0, os, true});
  return os;
}

// ------------------------------------------------------------------------ init

void kaiming_normal_fan_out(Parameter& weight, std::mt19937_64& rng) {
  const Shape s = weight.value.shape();
  const double fan_out = static_cast<double>(s.n) * s.h * s.w;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_out));
  for (float& v : weight.value.values()) v = static_cast<float>(dist(rng));
}

void constant_fill(Parameter& p, float value) { p.value.fill(value); }

}  // namespace fiqa::nn

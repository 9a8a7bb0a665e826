// Compares the backbones against torchvision on a fixture written by
// tools/export_torchvision.py --reference: eval features, train-mode
// features, input gradient, every parameter gradient and the updated BN
// running statistics.
#include <cmath>
#include <cstdio>
#include <map>
#include <string>

#include "fiqa/archive.hpp"
#include "fiqa/nn/backbones.hpp"

using namespace fiqa;

namespace {

Tensor to_tensor(const NamedTensor& t) {
  Shape s{1, 1, 1, 1};
  int* dims[4] = {&s.n, &s.c, &s.h, &s.w};
  for (std::size_t i = 0; i < t.dims.size(); ++i) *dims[i] = static_cast<int>(t.dims[i]);
  Tensor out(s);
  std::copy(t.data.begin(), t.data.end(), out.data());
  return out;
}

double rms(const float* a, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * a[i];
  return std::sqrt(s / static_cast<double>(n));
}

// Relative RMS error, with the denominator floored at `scale`: gradients that
// vanish analytically (a BN shift followed by conv + train-mode BN) are pure
// rounding noise and are judged against the typical gradient magnitude.
double rel_error(const float* a, const float* b, std::size_t n, double scale) {
  double diff = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diff += (static_cast<double>(a[i]) - b[i]) * (static_cast<double>(a[i]) - b[i]);
  }
  return std::sqrt(diff / static_cast<double>(n)) / std::max(rms(b, n), scale);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s <arch> <weights.fiqa> <reference.fiqa>\n", argv[0]);
    return 2;
  }
  const std::string arch = argv[1];
  auto backbone = arch == "mobilenet_v3_small" ? nn::make_mobilenet_v3_small()
                                               : nn::make_shufflenet_v2_x0_5();
  std::map<std::string, NamedTensor> weights, ref;
  for (auto& t : read_archive(argv[2])) weights[t.name] = t;
  for (auto& t : read_archive(argv[3])) ref[t.name] = t;

  std::vector<nn::NamedParameter> params;
  backbone->collect_parameters("", params);
  std::vector<nn::NamedBuffer> buffers;
  backbone->collect_buffers("", buffers);
  std::size_t loaded = 0;
  for (auto& p : params) {
    const auto& w = weights.at(p.name);
    if (w.data.size() != p.param->value.size()) {
      std::fprintf(stderr, "shape mismatch for %s\n", p.name.c_str());
      return 1;
    }
    std::copy(w.data.begin(), w.data.end(), p.param->value.data());
    ++loaded;
  }
  for (auto& b : buffers) {
    const auto& w = weights.at(b.name);
    std::copy(w.data.begin(), w.data.end(), b.tensor->data());
    ++loaded;
  }
  if (loaded != weights.size()) {
    std::fprintf(stderr, "archive has %zu tensors, backbone consumed %zu\n", weights.size(),
                 loaded);
    return 1;
  }

  int failures = 0;
  double grad_scale = 0.0;
  auto check = [&](const std::string& what, const float* a, const float* b, std::size_t n,
                   double tol) {
    const double err = rel_error(a, b, n, grad_scale);
    const bool ok = err <= tol;
    if (!ok) ++failures;
    std::printf("%-6s %-60s rel_err=%.3e (tol %.0e)\n", ok ? "ok" : "FAIL", what.c_str(), err,
                tol);
  };

  const Tensor input = to_tensor(ref.at("input"));
  Tensor eval = backbone->forward(input, nn::Mode::Eval);
  check("eval_features", eval.data(), ref.at("eval_features").data.data(), eval.size(), 1e-4);

  for (auto& p : params) p.param->zero_grad();
  Tensor train = backbone->forward(input, nn::Mode::Train);
  check("train_features", train.data(), ref.at("train_features").data.data(), train.size(),
        1e-4);
  Tensor r = to_tensor(ref.at("R"));
  r.reshape(train.shape());
  Tensor grad_in = backbone->backward(r);
  check("grad_input", grad_in.data(), ref.at("grad_input").data.data(), grad_in.size(), 1e-3);
  {
    double sum = 0.0;
    for (auto& p : params) sum += rms(ref.at("grad." + p.name).data.data(), p.param->grad.size());
    grad_scale = 1e-2 * sum / static_cast<double>(params.size());
  }
  for (auto& p : params) {
    check("grad." + p.name, p.param->grad.data(), ref.at("grad." + p.name).data.data(),
          p.param->grad.size(), 2e-3);
  }
  grad_scale = 0.0;
  for (auto& b : buffers) {
    check("after_train." + b.name, b.tensor->data(), ref.at("after_train." + b.name).data.data(),
          b.tensor->size(), 1e-4);
  }
  std::printf("%s: %d failures\n", arch.c_str(), failures);
  return failures == 0 ? 0 : 1;
}

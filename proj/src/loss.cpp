#include "fiqa/loss.hpp"

#include <cmath>
#include <string>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

void check(std::span<const double> p, std::span<const double> t, std::size_t min_n) {
  if (p.size() != t.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(p.size()) + " predictions vs " +
                                               std::to_string(t.size()) + " targets");
  }
  if (p.size() < min_n) {
    throw Error(ErrorKind::LengthMismatch, "need at least " + std::to_string(min_n) + " scores");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i]) || !std::isfinite(t[i])) {
      throw Error(ErrorKind::NonFiniteInput, "score " + std::to_string(i) + " is not finite");
    }
  }
}

struct Moments {
  double mean_x = 0.0, mean_y = 0.0;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
};

// Welford co-moments: numerically stable single pass.
Moments comoments(std::span<const double> x, std::span<const double> y) {
  Moments m;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = static_cast<double>(i + 1);
    const double dx = x[i] - m.mean_x;
    const double dy = y[i] - m.mean_y;
    m.mean_x += dx / k;
    m.mean_y += dy / k;
    m.sxx += dx * (x[i] - m.mean_x);
    m.syy += dy * (y[i] - m.mean_y);
    m.sxy += dx * (y[i] - m.mean_y);
  }
  return m;
}

Correlation correlate(const Moments& m, std::size_t n, double eps) {
  Correlation c;
  c.r = m.sxy / (std::sqrt(m.sxx + eps) * std::sqrt(m.syy + eps));
  const double nd = static_cast<double>(n);
  c.degenerate = n < 2 || m.sxx / nd < eps || m.syy / nd < eps;
  return c;
}

}  // namespace

double mse_loss(std::span<const double> predicted, std::span<const double> target) {
  check(predicted, target, 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - target[i];
    sum += d * d;
  }
  return sum / static_cast<double>(predicted.size());
}

Correlation pearson(std::span<const double> predicted, std::span<const double> target,
                    double variance_epsilon) {
  check(predicted, target, 1);
  if (!(variance_epsilon > 0.0)) throw Error(ErrorKind::InvalidConfig, "variance_epsilon must be > 0");
  return correlate(comoments(predicted, target), predicted.size(), variance_epsilon);
}

double corr_loss(std::span<const double> predicted, std::span<const double> target,
                 double variance_epsilon) {
  return 1.0 - pearson(predicted, target, variance_epsilon).r;
}

LossResult mse_with_grad(std::span<const double> predicted, std::span<const double> target) {
  LossResult out;
  out.mse = mse_loss(predicted, target);
  out.value = out.mse;
  const double scale = 2.0 / static_cast<double>(predicted.size());
  out.grad.resize(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    out.grad[i] = scale * (predicted[i] - target[i]);
  }
  return out;
}

LossResult msecorr_loss(std::span<const double> predicted, std::span<const double> target,
                        const LossConfig& cfg) {
  if (!(cfg.alpha >= 0.0)) throw Error(ErrorKind::InvalidConfig, "alpha must be >= 0");
  if (!(cfg.variance_epsilon > 0.0)) {
    throw Error(ErrorKind::InvalidConfig, "variance_epsilon must be > 0");
  }
  LossResult out = mse_with_grad(predicted, target);
  const Moments m = comoments(predicted, target);
  const Correlation c = correlate(m, predicted.size(), cfg.variance_epsilon);
  if (c.degenerate) {
    out.degenerate = true;
    return out;
  }
  out.corr = 1.0 - c.r;
  out.value = out.mse + cfg.alpha * out.corr;

  // dr/dx_i = (y_i - my) / (A B) - Sxy (x_i - mx) / (A^3 B)
  const double a = std::sqrt(m.sxx + cfg.variance_epsilon);
  const double b = std::sqrt(m.syy + cfg.variance_epsilon);
  const double inv_ab = 1.0 / (a * b);
  const double cross = m.sxy / (a * a * a * b);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double dr = (target[i] - m.mean_y) * inv_ab - cross * (predicted[i] - m.mean_x);
    out.grad[i] -= cfg.alpha * dr;
  }
  return out;
}

}  // namespace fiqa

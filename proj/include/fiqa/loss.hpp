#pragma once

#include <span>
#include <vector>

namespace fiqa {

struct LossConfig {
  double alpha = 0.5;
  double variance_epsilon = 1e-8;
};

struct Correlation {
  double r = 0.0;
  // N < 2, or a population variance below variance_epsilon.
  bool degenerate = false;
};

struct LossResult {
  double value = 0.0;
  double mse = 0.0;
  double corr = 0.0;  // 1 - r; 0 when the batch is degenerate
  bool degenerate = false;
  std::vector<double> grad;  // dL/dpredicted
};

// All functions take (predicted, target) and throw LengthMismatch or
// NonFiniteInput on bad input.
double mse_loss(std::span<const double> predicted, std::span<const double> target);

// Sxy / (sqrt(Sxx + eps) * sqrt(Syy + eps)) over centered sums.
Correlation pearson(std::span<const double> predicted, std::span<const double> target,
                    double variance_epsilon = 1e-8);

double corr_loss(std::span<const double> predicted, std::span<const double> target,
                 double variance_epsilon = 1e-8);

// MSE + alpha * (1 - r). A degenerate batch keeps only the MSE term.
LossResult msecorr_loss(std::span<const double> predicted, std::span<const double> target,
                        const LossConfig& cfg);
// Plain MSE with gradient, in the same result shape.
LossResult mse_with_grad(std::span<const double> predicted, std::span<const double> target);

}  // namespace fiqa

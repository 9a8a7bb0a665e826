#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fiqa {

struct MetricsReport {
  double srcc = 0.0;
  double plcc = 0.0;
  double final = 0.0;  // (srcc + plcc) / 2
  std::size_t n = 0;
};

// Pearson linear correlation. Throws DegenerateInput for a constant vector or
// N < 2, LengthMismatch, NonFiniteInput.
double plcc(std::span<const double> pred, std::span<const double> gt);
// Pearson correlation of average (fractional) ranks.
double srcc(std::span<const double> pred, std::span<const double> gt);
// 1-based ranks; tied values share the mean of their rank span.
std::vector<double> average_ranks(std::span<const double> values);

MetricsReport final_score(std::span<const double> pred, std::span<const double> gt);
MetricsReport final_score(double srcc, double plcc, std::size_t n = 0);

// Four-decimal display. The value is first snapped to 10 decimals (removing
// binary representation noise), then rounded half to even, so 0.98615 prints
// as 0.9862 and 0.65785 as 0.6578.
std::string format_4dp(double value);

}  // namespace fiqa

#include "fiqa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

void check(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::LengthMismatch,
                std::to_string(a.size()) + " predictions vs " + std::to_string(b.size()) + " labels");
  }
  if (a.size() < 2) throw Error(ErrorKind::DegenerateInput, "correlation needs at least 2 samples");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      throw Error(ErrorKind::NonFiniteInput, "value " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

double plcc(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  const double n = static_cast<double>(pred.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mx += pred[i];
    my += gt[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mx;
    const double dy = gt[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw Error(ErrorKind::DegenerateInput, sxx == 0.0 ? "predictions are constant" : "labels are constant");
  }
  return sxy / std::sqrt(sxx * syy);
}

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 hold ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double srcc(std::span<const double> pred, std::span<const double> gt) {
  check(pred, gt);
  const auto rp = average_ranks(pred);
  const auto rg = average_ranks(gt);
  return plcc(rp, rg);
}

MetricsReport final_score(std::span<const double> pred, std::span<const double> gt) {
  return final_score(srcc(pred, gt), plcc(pred, gt), pred.size());
}

MetricsReport final_score(double s, double p, std::size_t n) {
  return {s, p, (s + p) / 2.0, n};
}

std::string format_4dp(double value) {
  if (!std::isfinite(value)) return std::isnan(value) ? "nan" : (value > 0 ? "inf" : "-inf");
  const bool negative = value < 0.0;
  const auto snapped = static_cast<std::int64_t>(std::llround(std::fabs(value) * 1e10));
  std::int64_t q = snapped / 1000000;
  const std::int64_t rem = snapped % 1000000;
  if (rem > 500000 || (rem == 500000 && (q % 2) == 1)) ++q;
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%lld.%04lld", negative && q != 0 ? "-" : "",
                static_cast<long long>(q / 10000), static_cast<long long>(q % 10000));
  return buf;
}

}  // namespace fiqa

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fiqa/models.hpp"

namespace fiqa {

enum class FlopConvention { MacAsOneFlop, MacAsTwoFlops };

std::string to_string(FlopConvention c);

inline constexpr double kReferenceGflops = 0.4985;
inline constexpr double kReferenceParams = 2.0e6;

// Trainable parameter counts keyed "<backbone>.backbone" / "<backbone>.head".
std::map<std::string, std::int64_t> count_params(QualityModel& model);

struct EfficiencyReport {
  std::map<std::string, std::int64_t> per_component_params;
  std::int64_t total_params = 0;
  std::int64_t macs = 0;  // per sample, all models, all views
  int views = 1;
  int height = 0;
  int width = 0;
  std::vector<nn::LayerCost> layers;  // names prefixed with the backbone name
  std::vector<std::string> warnings;  // unsupported layers, counted as zero

  double gflops(FlopConvention c) const;
  // Signed percentage deviation from kReferenceGflops.
  double gflops_deviation_pct(FlopConvention c) const;
  // The convention whose figure lies nearer kReferenceGflops.
  FlopConvention nearest_convention() const;
  double params_deviation_pct() const;
};

// Layer-by-layer count at 1 x 3 x height x width. With tta, multiplied by
// views.
EfficiencyReport estimate_flops(std::span<QualityModel* const> models, int height = kInputHeight,
                                int width = kInputWidth, bool tta = false, int views = 3);

// MACs of the head's linear layers for one sample.
std::int64_t head_macs(const nn::RegressionHead& head);

nlohmann::json to_json(const EfficiencyReport& report, bool include_layers = false);
std::string format_table(const EfficiencyReport& report);

}  // namespace fiqa

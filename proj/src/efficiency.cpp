#include "fiqa/efficiency.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace fiqa {

std::string to_string(FlopConvention c) {
  return c == FlopConvention::MacAsOneFlop ? "MAC_AS_ONE_FLOP" : "MAC_AS_TWO_FLOPS";
}

std::map<std::string, std::int64_t> count_params(QualityModel& model) {
  const std::string name = to_string(model.spec().backbone);
  const auto groups = model.parameter_groups();
  auto total = [](const std::vector<nn::NamedParameter>& ps) {
    std::int64_t n = 0;
    for (const auto& p : ps) n += static_cast<std::int64_t>(p.param->value.size());
    return n;
  };
  return {{name + ".backbone", total(groups.backbone)}, {name + ".head", total(groups.head)}};
}

std::int64_t head_macs(const nn::RegressionHead& head) {
  std::int64_t macs = 0;
  for (const auto& l : head.layers()) {
    if (l.op == nn::RegressionHead::Op::Linear) macs += static_cast<std::int64_t>(l.in) * l.out;
  }
  return macs;
}

double EfficiencyReport::gflops(FlopConvention c) const {
  return static_cast<double>(macs) * (c == FlopConvention::MacAsOneFlop ? 1.0 : 2.0) / 1e9;
}

double EfficiencyReport::gflops_deviation_pct(FlopConvention c) const {
  return 100.0 * (gflops(c) - kReferenceGflops) / kReferenceGflops;
}

FlopConvention EfficiencyReport::nearest_convention() const {
  return std::fabs(gflops_deviation_pct(FlopConvention::MacAsOneFlop)) <=
                 std::fabs(gflops_deviation_pct(FlopConvention::MacAsTwoFlops))
             ? FlopConvention::MacAsOneFlop
             : FlopConvention::MacAsTwoFlops;
}

double EfficiencyReport::params_deviation_pct() const {
  return 100.0 * (static_cast<double>(total_params) - kReferenceParams) / kReferenceParams;
}

EfficiencyReport estimate_flops(std::span<QualityModel* const> models, int height, int width,
                                bool tta, int views) {
  EfficiencyReport report;
  report.height = height;
  report.width = width;
  report.views = tta ? views : 1;
  std::int64_t macs = 0;
  for (QualityModel* model : models) {
    for (const auto& [k, v] : count_params(*model)) {
      report.per_component_params[k] = v;
      report.total_params += v;
    }
    const std::string name = to_string(model->spec().backbone);
    std::vector<nn::LayerCost> layers;
    model->backbone().trace({1, 3, height, width}, "backbone", layers);
    for (auto& l : layers) {
      if (!l.supported) report.warnings.push_back("UnsupportedLayer: " + name + "." + l.name + " (" + l.type + ") counted as 0");
      macs += l.macs;
      l.name = name + "." + l.name;
      report.layers.push_back(std::move(l));
    }
    const auto& head = model->head();
    int index = 0;
    for (const auto& l : head.layers()) {
      nn::LayerCost cost;
      cost.name = name + ".head." + std::to_string(index++);
      if (l.op == nn::RegressionHead::Op::Linear) {
        cost.type = "Linear";
        cost.macs = static_cast<std::int64_t>(l.in) * l.out;
        cost.params = static_cast<std::int64_t>(l.in) * l.out + l.out;
        cost.output = {1, l.out, 1, 1};
      } else {
        cost.type = l.op == nn::RegressionHead::Op::ReLU ? "ReLU" : "Dropout";
        cost.output = {1, l.out, 1, 1};
      }
      macs += cost.macs;
      report.layers.push_back(cost);
    }
  }
  report.macs = macs * report.views;
  return report;
}

nlohmann::json to_json(const EfficiencyReport& r, bool include_layers) {
  nlohmann::json j;
  j["per_component_params"] = r.per_component_params;
  j["total_params"] = r.total_params;
  j["reference_params"] = kReferenceParams;
  j["params_deviation_pct"] = r.params_deviation_pct();
  j["input"] = {{"height", r.height}, {"width", r.width}, {"channels", 3}};
  j["views"] = r.views;
  j["macs_per_sample"] = r.macs;
  j["reference_gflops"] = kReferenceGflops;
  for (FlopConvention c : {FlopConvention::MacAsOneFlop, FlopConvention::MacAsTwoFlops}) {
    j["gflops"][to_string(c)] = r.gflops(c);
    j["gflops_deviation_pct"][to_string(c)] = r.gflops_deviation_pct(c);
  }
  j["nearest_convention"] = to_string(r.nearest_convention());
  j["warnings"] = r.warnings;
  if (include_layers) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : r.layers) {
      layers.push_back({{"name", l.name}, {"type", l.type}, {"macs", l.macs}, {"params", l.params},
                        {"supported", l.supported}});
    }
    j["layers"] = layers;
  }
  return j;
}

std::string format_table(const EfficiencyReport& r) {
  std::ostringstream os;
  char buf[160];
  for (const auto& [k, v] : r.per_component_params) {
    std::snprintf(buf, sizeof buf, "%-34s %12lld\n", k.c_str(), static_cast<long long>(v));
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "%-34s %12lld  (%+.2f%% vs 2.0M)\n", "total_params",
                static_cast<long long>(r.total_params), r.params_deviation_pct());
  os << buf;
  std::snprintf(buf, sizeof buf, "%-34s %12lld  (%dx%d, %d view%s)\n", "macs_per_sample",
                static_cast<long long>(r.macs), r.height, r.width, r.views, r.views == 1 ? "" : "s");
  os << buf;
  for (FlopConvention c : {FlopConvention::MacAsOneFlop, FlopConvention::MacAsTwoFlops}) {
    std::snprintf(buf, sizeof buf, "%-34s %12.4f  (%+.2f%% vs 0.4985)%s\n",
                  ("GFLOPs " + to_string(c)).c_str(), r.gflops(c), r.gflops_deviation_pct(c),
                  c == r.nearest_convention() ? "  <- nearest" : "");
    os << buf;
  }
  for (const auto& w : r.warnings) os << "warning: " << w << "\n";
  return os.str();
}

}  // namespace fiqa

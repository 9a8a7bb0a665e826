#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fiqa/data.hpp"
#include "fiqa/inference.hpp"

namespace fiqa {

enum class LossKind { MseCorr, Mse };

std::string to_string(LossKind kind);

struct TrainConfig {
  double base_lr = 5e-4;
  double backbone_lr_multiplier = 0.1;
  double weight_decay = 1e-4;
  int lr_step_epochs = 5;
  double lr_step_factor = 0.5;
  int batch_size = 64;
  int max_epochs = 30;
  double alpha = 0.5;
  double variance_epsilon = 1e-8;
  LossKind loss = LossKind::MseCorr;
  std::uint64_t seed = 0;
  // split.seed falls back to seed when unset.
  double train_fraction = 0.8;
  std::optional<std::uint64_t> split_seed;
  bool tta_in_validation = false;
  bool pretrained = false;
  std::filesystem::path mobilenet_weights;
  std::filesystem::path shufflenet_weights;
  bool parallel_models = false;
  // Before each validation, re-estimate batch-norm running statistics as a
  // plain average over this many training images (0 keeps the momentum
  // estimates). Helps when training from scratch with slow BN momentum.
  int bn_recalibration_images = 0;

  SplitSpec split() const { return {train_fraction, split_seed.value_or(seed)}; }
};

// Throws InvalidConfig on the first violated constraint.
void validate(const TrainConfig& config);

// Fingerprint of every field that can change a training result.
std::string config_hash(const TrainConfig& config);

// Command-level settings layered over TrainConfig.
struct RunConfig {
  TrainConfig train;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::filesystem::path checkpoints;
  bool tta = true;
  bool tta_color = false;
  int predict_batch = 8;
  std::vector<double> ablation_alphas{0.0, 0.25, 0.5, 1.0};
  std::vector<double> backbone_lr_sweep{0.01, 0.1, 0.5, 1.0};
  int verbosity = 1;

  TtaPolicy tta_policy() const;
};

// Flat `key = value` lines; `#` starts a comment. Keys are the field names
// above, with the split written as split.train_fraction and split.seed.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);
void load_config_file(RunConfig& config, const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");
// Resolved settings in the file syntax, one per line, stable order.
std::string to_text(const RunConfig& config);

}  // namespace fiqa

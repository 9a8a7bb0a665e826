#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fiqa/config.hpp"
#include "fiqa/data.hpp"
#include "fiqa/metrics.hpp"
#include "fiqa/models.hpp"

namespace fiqa {

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0.0;
  // NaN when the validation set is too small or predictions are constant.
  double val_srcc = 0.0;
  double val_plcc = 0.0;
  double val_final = 0.0;
  double lr_current = 0.0;  // head group; the backbone runs at lr * multiplier
};

// Image ids of one optimization step, in batch order.
struct BatchRecord {
  int epoch = 0;
  int batch = 0;
  std::vector<std::string> image_ids;
};

struct TrainOptions {
  std::function<void(const std::string& model, const TrainLogEntry&)> on_epoch;
  int eval_batch = 8;
};

struct TrainResult {
  QualityModel model;  // weights of the best validation epoch
  std::vector<TrainLogEntry> log;
  std::vector<BatchRecord> batches;
  int best_epoch = -1;
  double best_val_final = 0.0;
  int degenerate_batches = 0;
};

// Per-model seed derived from the run seed, so the two backbones never share
// an initialization or shuffle stream.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

// Adam on the configured loss with a backbone/head learning-rate split and a
// step schedule. Each epoch is validated; the best validation final score
// wins. Batches of fewer than two samples are skipped.
TrainResult train_model(const ModelSpec& spec, const TrainConfig& config,
                        std::span<const ManifestEntry> train, std::span<const ManifestEntry> val,
                        const TrainOptions& options = {});

ModelSpec spec_for(BackboneKind kind, const TrainConfig& config);

// Model order inside an ensemble.
inline constexpr BackboneKind kEnsembleBackbones[2] = {BackboneKind::MobileNetV3Small,
                                                       BackboneKind::ShuffleNetV2};

struct EnsembleResult {
  Split split;
  std::vector<TrainResult> models;  // kEnsembleBackbones order
  std::vector<std::filesystem::path> checkpoints;
  std::filesystem::path manifest;
};

// Trains both models on the same split. When out_dir is non-empty, writes
// <backbone>.fiqa (+ .json), trainlog_<backbone>.csv, batches_<backbone>.csv,
// split.csv and ensemble.json there.
EnsembleResult train_ensemble(const TrainConfig& config, std::span<const ManifestEntry> entries,
                              const std::filesystem::path& out_dir,
                              const TrainOptions& options = {});

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogEntry> log);
void write_batch_log(const std::filesystem::path& path, std::span<const BatchRecord> batches);

struct AblationRow {
  std::string variant;  // e.g. "Baseline A", "+ Ensemble"
  std::string setting;  // e.g. "MobileNet+MSE"
  MetricsReport metrics;
};

struct AblationReport {
  std::vector<AblationRow> rows;  // the five core rows first, then sweep rows
};

// Trains the MSE pair and the correlation-aware pair on one split and scores
// each variant on the validation set:
//   Baseline A  MobileNet+MSE          Baseline B  ShuffleNet+MSE
//   + Ensemble  Ensemble+MSE           + Corr-Aware Loss  Ensemble+MSECorrLoss
//   + TTA       Ensemble+MSECorrLoss+TTA (same checkpoints, TTA on)
// followed by one Ensemble+MSECorrLoss row per extra alpha and, when
// sweep_backbone_lr is set, one +TTA row per backbone multiplier.
AblationReport run_ablation(const RunConfig& config, std::span<const ManifestEntry> entries,
                            bool sweep_backbone_lr, const TrainOptions& options = {});

std::string format_table(const AblationReport& report);
nlohmann::json to_json(const AblationReport& report);
nlohmann::json to_json(const MetricsReport& report);

}  // namespace fiqa

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fiqa/data.hpp"
#include "fiqa/models.hpp"

namespace fiqa {

enum class ViewKind { Identity, HorizontalFlip, VerticalFlip, Brighten };

std::string to_string(ViewKind kind);
ViewKind parse_view(const std::string& text);

struct TtaPolicy {
  std::vector<ViewKind> views{ViewKind::Identity, ViewKind::HorizontalFlip, ViewKind::VerticalFlip};

  int count() const { return static_cast<int>(views.size()); }
  static TtaPolicy flips() { return {}; }
  static TtaPolicy none() { return {{ViewKind::Identity}}; }
  // Flips plus a 10% brightness gain.
  static TtaPolicy with_color() {
    return {{ViewKind::Identity, ViewKind::HorizontalFlip, ViewKind::VerticalFlip,
             ViewKind::Brighten}};
  }
};

inline constexpr float kBrightenGain = 1.1f;

// Applies one view to every sample of a standardized N x 3 x H x W tensor.
// Brighten acts in pixel space: p -> min(1, 1.1 p).
Tensor apply_view(const Tensor& images, ViewKind kind);
std::vector<Tensor> make_views(const Tensor& images, const TtaPolicy& policy);

struct PredictionRecord {
  std::string image_id;
  std::vector<std::vector<double>> grid;  // M x T
  std::vector<double> per_model;          // M
  double fused = 0.0;
  std::string error;  // non-empty when the image could not be scored

  bool ok() const { return error.empty(); }
};

// Fills per_model and fused from grid: mean over views, then over models.
// Each mean sums its terms in sorted order in extended precision, so the
// result does not depend on the order of models or views.
void fuse(PredictionRecord& record);

// Scores one or more images (N x 3 x H x W) with every model in eval mode.
std::vector<PredictionRecord> ensemble_predict(std::span<QualityModel* const> models,
                                               const Tensor& images,
                                               std::span<const std::string> ids,
                                               const TtaPolicy& policy);
PredictionRecord ensemble_predict(std::span<QualityModel* const> models,
                                  const PreprocessedImage& image, const TtaPolicy& policy);

// Scores every entry in manifest order, batch_size images at a time. Images
// that fail to load get a record with `error` set; the rest are unaffected.
std::vector<PredictionRecord> predict_entries(std::span<QualityModel* const> models,
                                              std::span<const ManifestEntry> entries,
                                              const TtaPolicy& policy, int batch_size = 8);

// Columns: image_id,fused,model_<k>_mean...,model_<k>_view_<t>...,error
// (1-based k and t). Failed rows leave the numeric cells empty.
void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                       int models, int views);
std::vector<PredictionRecord> batch_predict(std::span<QualityModel* const> models,
                                            std::span<const ManifestEntry> entries,
                                            const TtaPolicy& policy,
                                            const std::filesystem::path& out, int batch_size = 8);

struct ScoredId {
  std::string image_id;
  double fused = 0.0;
  std::string error;
};
// Reads image_id, fused and error back from a prediction CSV.
std::vector<ScoredId> read_predictions(const std::filesystem::path& path);

// Ensemble manifest: the checkpoints that make up one fused predictor.
struct EnsembleMember {
  std::filesystem::path checkpoint;  // relative to the manifest directory
  std::string backbone;
  std::string digest;
};

struct EnsembleManifest {
  std::vector<EnsembleMember> members;
  std::vector<ViewKind> tta;
  std::string config_hash;
};

void write_ensemble_manifest(const std::filesystem::path& path, const EnsembleManifest& manifest);
EnsembleManifest read_ensemble_manifest(const std::filesystem::path& path);
// Accepts an ensemble manifest, a directory holding ensemble.json, or a
// single checkpoint file.
std::vector<QualityModel> load_ensemble(const std::filesystem::path& path);

}  // namespace fiqa

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fiqa/archive.hpp"
#include "fiqa/nn/backbones.hpp"
#include "fiqa/nn/head.hpp"

namespace fiqa {

inline constexpr int kInputHeight = 600;
inline constexpr int kInputWidth = 416;
inline constexpr double kHeadDropout = 0.2;

enum class BackboneKind { MobileNetV3Small, ShuffleNetV2 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone(const std::string& text);

struct ModelSpec {
  BackboneKind backbone = BackboneKind::MobileNetV3Small;
  int feature_dim = 576;
  std::vector<int> head_widths{288};
  double dropout_rate = kHeadDropout;
  bool pretrained = false;
  // Named-tensor archive with torchvision-style backbone keys; required when
  // pretrained is set.
  std::filesystem::path weights_path;
};

// MobileNetV3-Small: 576-d features, head [288]. ShuffleNetV2: 1024-d
// features, head [512, 256]. Dropout 0.2 after every hidden ReLU.
ModelSpec default_spec(BackboneKind kind);
// Throws InconsistentSpec unless `spec` matches its backbone's layout.
void validate(const ModelSpec& spec);

nlohmann::json to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

struct ParameterGroups {
  std::vector<nn::NamedParameter> backbone;
  std::vector<nn::NamedParameter> head;
};

class QualityModel {
 public:
  QualityModel(ModelSpec spec, std::unique_ptr<nn::Backbone> backbone, nn::RegressionHead head);

  const ModelSpec& spec() const { return spec_; }
  nn::Backbone& backbone() { return *backbone_; }
  nn::RegressionHead& head() { return head_; }

  // batch: N x 3 x 600 x 416. One score per sample. Train mode caches
  // activations for backward() and applies dropout.
  std::vector<double> forward(const Tensor& batch, nn::Mode mode);
  // dL/dq for each sample of the preceding train-mode forward.
  void backward(std::span<const double> grad);

  // Names carry a "backbone." or "head." prefix.
  ParameterGroups parameter_groups();
  std::vector<nn::NamedParameter> parameters();
  std::vector<nn::NamedBuffer> buffers();
  void zero_grad();
  std::int64_t parameter_count();

  std::vector<NamedTensor> state();
  // Every parameter and buffer must be present with a matching shape.
  void load_state(const std::vector<NamedTensor>& tensors);
  // Loads backbone weights keyed without the "backbone." prefix; unrelated
  // keys (e.g. an original classifier) are ignored.
  void load_backbone_weights(const std::vector<NamedTensor>& tensors);

  void set_dropout_seed(std::uint64_t seed) { head_.set_dropout_seed(seed); }

 private:
  ModelSpec spec_;
  std::unique_ptr<nn::Backbone> backbone_;
  nn::RegressionHead head_;
};

// seed drives fresh initialization of the head (and of the backbone when not
// pretrained) and the dropout stream.
QualityModel build_model(const ModelSpec& spec, std::uint64_t seed);

struct CheckpointMeta {
  std::string config_hash;
  int epoch = 0;
  double val_final = 0.0;
};

// Writes `path` (tensor archive) and `path` + ".json" (spec + meta).
void save_checkpoint(QualityModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta);
QualityModel load_checkpoint(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace fiqa

#include "fiqa/models.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

std::vector<std::int64_t> dims_of(const Shape& s) {
  return canonical_dims({s.n, s.c, s.h, s.w});
}

void copy_into(Tensor& dst, const NamedTensor& src, const std::string& name) {
  if (canonical_dims(src.dims) != dims_of(dst.shape())) {
    throw Error(ErrorKind::ShapeMismatch, "tensor " + name + " has incompatible shape");
  }
  std::copy(src.data.begin(), src.data.end(), dst.data());
}

}  // namespace

std::string to_string(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::MobileNetV3Small: return "mobilenet_v3_small";
    case BackboneKind::ShuffleNetV2: return "shufflenet_v2";
  }
  return "unknown";
}

BackboneKind parse_backbone(const std::string& text) {
  if (text == "mobilenet_v3_small") return BackboneKind::MobileNetV3Small;
  if (text == "shufflenet_v2") return BackboneKind::ShuffleNetV2;
  throw Error(ErrorKind::InconsistentSpec, "unknown backbone '" + text + "'");
}

ModelSpec default_spec(BackboneKind kind) {
  ModelSpec spec;
  spec.backbone = kind;
  if (kind == BackboneKind::MobileNetV3Small) {
    spec.feature_dim = 576;
    spec.head_widths = {288};
  } else {
    spec.feature_dim = 1024;
    spec.head_widths = {512, 256};
  }
  return spec;
}

void validate(const ModelSpec& spec) {
  const ModelSpec expected = default_spec(spec.backbone);
  if (spec.feature_dim != expected.feature_dim || spec.head_widths != expected.head_widths) {
    throw Error(ErrorKind::InconsistentSpec,
                to_string(spec.backbone) + " requires feature_dim " +
                    std::to_string(expected.feature_dim) + " and its fixed head widths");
  }
  if (spec.dropout_rate != kHeadDropout) {
    throw Error(ErrorKind::InconsistentSpec, "head dropout rate must be 0.2");
  }
}

nlohmann::json to_json(const ModelSpec& spec) {
  return {{"backbone", to_string(spec.backbone)},
          {"feature_dim", spec.feature_dim},
          {"head_widths", spec.head_widths},
          {"dropout_rate", spec.dropout_rate},
          {"pretrained", spec.pretrained}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  try {
    ModelSpec spec;
    spec.backbone = parse_backbone(j.at("backbone").get<std::string>());
    spec.feature_dim = j.at("feature_dim").get<int>();
    spec.head_widths = j.at("head_widths").get<std::vector<int>>();
    spec.dropout_rate = j.at("dropout_rate").get<double>();
    spec.pretrained = j.value("pretrained", false);
    validate(spec);
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InconsistentSpec, std::string("bad model spec: ") + e.what());
  }
}

// ------------------------------------------------------------- QualityModel

QualityModel::QualityModel(ModelSpec spec, std::unique_ptr<nn::Backbone> backbone,
                           nn::RegressionHead head)
    : spec_(std::move(spec)), backbone_(std::move(backbone)), head_(std::move(head)) {}

std::vector<double> QualityModel::forward(const Tensor& batch, nn::Mode mode) {
  const Shape s = batch.shape();
  if (s.n < 1 || s.c != 3 || s.h != kInputHeight || s.w != kInputWidth) {
    throw Error(ErrorKind::ShapeMismatch, "model input must be Nx3x600x416, got " + to_string(s));
  }
  Tensor features = backbone_->forward(batch, mode);
  return head_.forward(features, mode);
}

void QualityModel::backward(std::span<const double> grad) {
  backbone_->backward(head_.backward(grad));
}

ParameterGroups QualityModel::parameter_groups() {
  ParameterGroups groups;
  backbone_->collect_parameters("backbone", groups.backbone);
  head_.collect_parameters("head", groups.head);
  return groups;
}

std::vector<nn::NamedParameter> QualityModel::parameters() {
  auto groups = parameter_groups();
  groups.backbone.insert(groups.backbone.end(), groups.head.begin(), groups.head.end());
  return groups.backbone;
}

std::vector<nn::NamedBuffer> QualityModel::buffers() {
  std::vector<nn::NamedBuffer> out;
  backbone_->collect_buffers("backbone", out);
  return out;
}

void QualityModel::zero_grad() {
  for (auto& p : parameters()) p.param->zero_grad();
}

std::int64_t QualityModel::parameter_count() {
  std::int64_t total = 0;
  for (const auto& p : parameters()) total += static_cast<std::int64_t>(p.param->value.size());
  return total;
}

std::vector<NamedTensor> QualityModel::state() {
  std::vector<NamedTensor> out;
  auto emit = [&](const std::string& name, const Tensor& t) {
    out.push_back({name, dims_of(t.shape()), std::vector<float>(t.data(), t.data() + t.size())});
  };
  for (const auto& p : parameters()) emit(p.name, p.param->value);
  for (const auto& b : buffers()) emit(b.name, *b.tensor);
  return out;
}

void QualityModel::load_state(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorKind::Io, "checkpoint lacks tensor " + name);
    copy_into(dst, *it->second, name);
  };
  for (auto& p : parameters()) take(p.name, p.param->value);
  for (auto& b : buffers()) take(b.name, *b.tensor);
}

void QualityModel::load_backbone_weights(const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  std::vector<nn::NamedParameter> params;
  backbone_->collect_parameters("", params);
  std::vector<nn::NamedBuffer> buffers;
  backbone_->collect_buffers("", buffers);
  auto take = [&](const std::string& name, Tensor& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw Error(ErrorKind::MissingPretrainedWeights, "weights lack backbone tensor " + name);
    }
    copy_into(dst, *it->second, name);
  };
  for (auto& p : params) take(p.name, p.param->value);
  for (auto& b : buffers) take(b.name, *b.tensor);
}

QualityModel build_model(const ModelSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::unique_ptr<nn::Backbone> backbone = spec.backbone == BackboneKind::MobileNetV3Small
                                               ? nn::make_mobilenet_v3_small()
                                               : nn::make_shufflenet_v2_x0_5();
  nn::RegressionHead head(spec.feature_dim, spec.head_widths, spec.dropout_rate);
  std::mt19937_64 rng(seed);
  backbone->initialize(rng);
  head.initialize(rng);
  QualityModel model(spec, std::move(backbone), std::move(head));
  model.set_dropout_seed(seed ^ 0x9e3779b97f4a7c15ULL);
  if (spec.pretrained) {
    if (spec.weights_path.empty() || !std::filesystem::exists(spec.weights_path)) {
      throw Error(ErrorKind::MissingPretrainedWeights,
                  "no weight file for " + to_string(spec.backbone) + " at '" +
                      spec.weights_path.string() + "'");
    }
    model.load_backbone_weights(read_archive(spec.weights_path));
  }
  return model;
}

// --------------------------------------------------------------- checkpoints

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  return checkpoint.string() + ".json";
}

void save_checkpoint(QualityModel& model, const std::filesystem::path& path,
                     const CheckpointMeta& meta) {
  write_archive(path, model.state());
  nlohmann::json j{{"spec", to_json(model.spec())},
                   {"config_hash", meta.config_hash},
                   {"epoch", meta.epoch},
                   {"val_final", meta.val_final}};
  std::ofstream os(sidecar_path(path));
  if (!os) throw Error(ErrorKind::Io, "cannot write " + sidecar_path(path).string());
  os << j.dump(2) << "\n";
}

namespace {

nlohmann::json read_sidecar(const std::filesystem::path& path) {
  std::ifstream is(sidecar_path(path));
  if (!is) throw Error(ErrorKind::MissingFile, sidecar_path(path).string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, "bad checkpoint sidecar: " + std::string(e.what()));
  }
}

}  // namespace

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  const auto j = read_sidecar(path);
  return {j.value("config_hash", ""), j.value("epoch", 0), j.value("val_final", 0.0)};
}

QualityModel load_checkpoint(const std::filesystem::path& path) {
  ModelSpec spec = spec_from_json(read_sidecar(path).at("spec"));
  // Weights come from the checkpoint itself.
  spec.pretrained = false;
  QualityModel model = build_model(spec, 0);
  model.load_state(read_archive(path));
  return model;
}

}  // namespace fiqa

#include "fiqa/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "fiqa/error.hpp"

namespace fiqa {

std::string to_string(ViewKind kind) {
  switch (kind) {
    case ViewKind::Identity: return "identity";
    case ViewKind::HorizontalFlip: return "hflip";
    case ViewKind::VerticalFlip: return "vflip";
    case ViewKind::Brighten: return "brighten";
  }
  return "unknown";
}

ViewKind parse_view(const std::string& text) {
  for (ViewKind k : {ViewKind::Identity, ViewKind::HorizontalFlip, ViewKind::VerticalFlip,
                     ViewKind::Brighten}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorKind::InvalidConfig, "unknown TTA view '" + text + "'");
}

Tensor apply_view(const Tensor& images, ViewKind kind) {
  const Shape s = images.shape();
  if (kind == ViewKind::Identity) return images;
  Tensor out = Tensor::uninitialized(s);
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      const float* src = images.channel(n, c);
      float* dst = out.channel(n, c);
      switch (kind) {
        case ViewKind::HorizontalFlip:
          for (int y = 0; y < s.h; ++y) {
            const float* row = src + static_cast<std::size_t>(y) * s.w;
            std::reverse_copy(row, row + s.w, dst + static_cast<std::size_t>(y) * s.w);
          }
          break;
        case ViewKind::VerticalFlip:
          for (int y = 0; y < s.h; ++y) {
            const float* row = src + static_cast<std::size_t>(s.h - 1 - y) * s.w;
            std::copy(row, row + s.w, dst + static_cast<std::size_t>(y) * s.w);
          }
          break;
        case ViewKind::Brighten: {
          const int ch = c % 3;
          const float mean = kImageNetMean[ch];
          const float sd = kImageNetStd[ch];
          for (std::size_t i = 0; i < s.plane(); ++i) {
            const float pixel = std::min(1.0f, kBrightenGain * (src[i] * sd + mean));
            dst[i] = (pixel - mean) / sd;
          }
          break;
        }
        case ViewKind::Identity:
          break;
      }
    }
  }
  return out;
}

std::vector<Tensor> make_views(const Tensor& images, const TtaPolicy& policy) {
  std::vector<Tensor> views;
  views.reserve(policy.views.size());
  for (ViewKind k : policy.views) views.push_back(apply_view(images, k));
  return views;
}

namespace {

double sorted_mean(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  long double sum = 0.0L;
  for (double v : values) sum += v;
  return static_cast<double>(sum / static_cast<long double>(values.size()));
}

}  // namespace

void fuse(PredictionRecord& record) {
  if (record.grid.empty()) throw Error(ErrorKind::EmptyEnsemble, "no model scores to fuse");
  record.per_model.clear();
  for (const auto& row : record.grid) {
    if (row.empty()) throw Error(ErrorKind::EmptyEnsemble, "a model has no view scores");
    record.per_model.push_back(sorted_mean(row));
  }
  record.fused = sorted_mean(record.per_model);
}

std::vector<PredictionRecord> ensemble_predict(std::span<QualityModel* const> models,
                                               const Tensor& images,
                                               std::span<const std::string> ids,
                                               const TtaPolicy& policy) {
  if (models.empty()) throw Error(ErrorKind::EmptyEnsemble, "ensemble has no models");
  if (policy.views.empty()) throw Error(ErrorKind::InvalidConfig, "TTA policy has no views");
  const int n = images.shape().n;
  if (static_cast<int>(ids.size()) != n) {
    throw Error(ErrorKind::LengthMismatch, "image ids do not match the batch");
  }
  std::vector<PredictionRecord> records(n);
  for (int i = 0; i < n; ++i) {
    records[i].image_id = ids[i];
    records[i].grid.assign(models.size(), std::vector<double>(policy.views.size()));
  }
  const auto views = make_views(images, policy);
  for (std::size_t m = 0; m < models.size(); ++m) {
    for (std::size_t t = 0; t < views.size(); ++t) {
      const auto scores = models[m]->forward(views[t], nn::Mode::Eval);
      for (int i = 0; i < n; ++i) records[i].grid[m][t] = scores[i];
    }
  }
  for (auto& r : records) fuse(r);
  return records;
}

PredictionRecord ensemble_predict(std::span<QualityModel* const> models,
                                  const PreprocessedImage& image, const TtaPolicy& policy) {
  const std::string id = image.source_id;
  return ensemble_predict(models, image.pixels, std::span<const std::string>(&id, 1), policy)[0];
}

std::vector<PredictionRecord> predict_entries(std::span<QualityModel* const> models,
                                              std::span<const ManifestEntry> entries,
                                              const TtaPolicy& policy, int batch_size) {
  if (models.empty()) throw Error(ErrorKind::EmptyEnsemble, "ensemble has no models");
  batch_size = std::max(1, batch_size);
  std::vector<PredictionRecord> out(entries.size());
  for (std::size_t start = 0; start < entries.size(); start += batch_size) {
    const std::size_t end = std::min(entries.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Tensor> loaded;
    std::vector<std::string> ids;
    std::vector<std::size_t> slots;
    for (std::size_t i = start; i < end; ++i) {
      out[i].image_id = entries[i].image_id;
      try {
        loaded.push_back(load_and_preprocess(entries[i]).pixels);
        ids.push_back(entries[i].image_id);
        slots.push_back(i);
      } catch (const Error& e) {
        if (e.category() != ErrorCategory::Data) throw;
        out[i].error = e.what();
      }
    }
    if (loaded.empty()) continue;
    auto scored = ensemble_predict(models, Tensor::stack(loaded), ids, policy);
    for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = std::move(scored[k]);
  }
  return out;
}

namespace {

std::string number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_safe(std::string text) {
  for (char& ch : text) {
    if (ch == ',' || ch == '\n' || ch == '\r' || ch == '"') ch = ';';
  }
  return text;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') fields.back().pop_back();
  return fields;
}

}  // namespace

void write_predictions(const std::filesystem::path& path, std::span<const PredictionRecord> records,
                       int models, int views) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << "image_id,fused";
  for (int m = 1; m <= models; ++m) os << ",model_" << m << "_mean";
  for (int m = 1; m <= models; ++m) {
    for (int t = 1; t <= views; ++t) os << ",model_" << m << "_view_" << t;
  }
  os << ",error\n";
  for (const auto& r : records) {
    os << r.image_id;
    if (r.ok()) {
      os << ',' << number(r.fused);
      for (double v : r.per_model) os << ',' << number(v);
      for (const auto& row : r.grid) {
        for (double v : row) os << ',' << number(v);
      }
      os << ",\n";
    } else {
      os << ',';
      for (int k = 0; k < models + models * views; ++k) os << ',';
      os << ',' << csv_safe(r.error) << '\n';
    }
  }
  if (!os) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<PredictionRecord> batch_predict(std::span<QualityModel* const> models,
                                            std::span<const ManifestEntry> entries,
                                            const TtaPolicy& policy,
                                            const std::filesystem::path& out, int batch_size) {
  auto records = predict_entries(models, entries, policy, batch_size);
  write_predictions(out, records, static_cast<int>(models.size()), policy.count());
  return records;
}

std::vector<ScoredId> read_predictions(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingFile, "predictions not found: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::MalformedRow, path.string() + ": empty file");
  const auto header = split_fields(line);
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw Error(ErrorKind::MalformedRow, path.string() + ": missing column " + name);
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column("image_id");
  const std::size_t fused_col = column("fused");
  const std::size_t error_col = column("error");

  std::vector<ScoredId> out;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::MalformedRow, path.string() + ":" + std::to_string(line_no) +
                                               ": expected " + std::to_string(header.size()) +
                                               " fields");
    }
    ScoredId s{fields[id_col], std::numeric_limits<double>::quiet_NaN(), fields[error_col]};
    if (s.error.empty()) {
      const std::string& text = fields[fused_col];
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), s.fused);
      if (ec != std::errc() || end != text.data() + text.size()) {
        throw Error(ErrorKind::MalformedRow,
                    path.string() + ":" + std::to_string(line_no) + ": bad fused score");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_ensemble_manifest(const std::filesystem::path& path, const EnsembleManifest& manifest) {
  nlohmann::json members = nlohmann::json::array();
  for (const auto& m : manifest.members) {
    members.push_back({{"checkpoint", m.checkpoint.generic_string()},
                       {"backbone", m.backbone},
                       {"digest", m.digest}});
  }
  nlohmann::json views = nlohmann::json::array();
  for (ViewKind v : manifest.tta) views.push_back(to_string(v));
  const nlohmann::json j{{"format", "fiqa-ensemble"},
                         {"version", 1},
                         {"fusion", "mean_over_views_then_models"},
                         {"members", members},
                         {"tta", views},
                         {"config_hash", manifest.config_hash}};
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << j.dump(2) << "\n";
}

EnsembleManifest read_ensemble_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingFile, "ensemble manifest not found: " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    EnsembleManifest m;
    for (const auto& e : j.at("members")) {
      m.members.push_back({e.at("checkpoint").get<std::string>(), e.value("backbone", ""),
                           e.value("digest", "")});
    }
    for (const auto& v : j.value("tta", nlohmann::json::array())) m.tta.push_back(parse_view(v.get<std::string>()));
    m.config_hash = j.value("config_hash", "");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Io, path.string() + ": " + e.what());
  }
}

std::vector<QualityModel> load_ensemble(const std::filesystem::path& path) {
  std::error_code ec;
  std::filesystem::path manifest = path;
  if (std::filesystem::is_directory(path, ec)) manifest = path / "ensemble.json";
  std::vector<QualityModel> models;
  if (manifest.extension() != ".json") {
    models.push_back(load_checkpoint(path));
    return models;
  }
  const auto m = read_ensemble_manifest(manifest);
  if (m.members.empty()) throw Error(ErrorKind::EmptyEnsemble, manifest.string() + " lists no models");
  for (const auto& member : m.members) {
    const auto ckpt = manifest.parent_path() / member.checkpoint;
    if (!member.digest.empty() && file_digest(ckpt) != member.digest) {
      throw Error(ErrorKind::Io, ckpt.string() + " does not match the digest in " + manifest.string());
    }
    models.push_back(load_checkpoint(ckpt));
  }
  return models;
}

}  // namespace fiqa

#include "fiqa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "fiqa/error.hpp"
#include "fiqa/inference.hpp"
#include "fiqa/loss.hpp"
#include "fiqa/nn/layers.hpp"
#include "fiqa/optim.hpp"

namespace fiqa {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<nn::Parameter*> raw(const std::vector<nn::NamedParameter>& named) {
  std::vector<nn::Parameter*> out;
  for (const auto& p : named) out.push_back(p.param);
  return out;
}

std::uint64_t kind_tag(BackboneKind kind) {
  return kind == BackboneKind::MobileNetV3Small ? 0x6d6f62696c656e65ULL : 0x73687566666c656eULL;
}

// Validation metrics; NaN when they are undefined on this set.
MetricsReport score_set(std::span<QualityModel* const> models, std::span<const ManifestEntry> set,
                        const TtaPolicy& policy, int batch) {
  if (set.size() < 2) return {kNaN, kNaN, kNaN, set.size()};
  const auto records = predict_entries(models, set, policy, batch);
  std::vector<double> pred, gt;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!records[i].ok()) throw Error(ErrorKind::DecodeFailure, records[i].error);
    pred.push_back(records[i].fused);
    gt.push_back(set[i].mos);
  }
  try {
    return final_score(pred, gt);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::DegenerateInput) throw;
    return {kNaN, kNaN, kNaN, set.size()};
  }
}

// Train-mode backbone passes over the first `count` images in batches of
// `batch`, with every batch norm averaging the batch statistics uniformly.
void recalibrate_batchnorm(QualityModel& model, std::span<const ManifestEntry> images,
                           std::size_t count, int batch) {
  count = std::min(count, images.size());
  if (count < 2) return;
  std::vector<nn::BatchNorm2d*> norms;
  nn::for_each_module(model.backbone(), [&](nn::Module& m) {
    if (auto* bn = dynamic_cast<nn::BatchNorm2d*>(&m)) norms.push_back(bn);
  });
  for (auto* bn : norms) bn->set_cumulative(true);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < count; start += batch) {
    const std::size_t end = std::min(count, start + static_cast<std::size_t>(batch));
    if (end - start < 2) break;
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    model.backbone().forward(load_batch(images, idx), nn::Mode::Train);
  }
  for (auto* bn : norms) bn->set_cumulative(false);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

ModelSpec spec_for(BackboneKind kind, const TrainConfig& config) {
  ModelSpec spec = default_spec(kind);
  spec.pretrained = config.pretrained;
  if (config.pretrained) {
    spec.weights_path = kind == BackboneKind::MobileNetV3Small ? config.mobilenet_weights
                                                                : config.shufflenet_weights;
    if (spec.weights_path.empty()) {
      if (const char* dir = std::getenv("FIQA_WEIGHTS_DIR")) {
        spec.weights_path = std::filesystem::path(dir) /
                            (kind == BackboneKind::MobileNetV3Small ? "mobilenet_v3_small.fiqa"
                                                                     : "shufflenet_v2_x0_5.fiqa");
      }
    }
  }
  return spec;
}

TrainResult train_model(const ModelSpec& spec, const TrainConfig& config,
                        std::span<const ManifestEntry> train, std::span<const ManifestEntry> val,
                        const TrainOptions& options) {
  validate(config);
  if (train.size() < 2) {
    throw Error(ErrorKind::EmptyTrainSet, "need at least 2 training samples, got " +
                                              std::to_string(train.size()));
  }
  const std::uint64_t tag = kind_tag(spec.backbone);
  TrainResult result{build_model(spec, derive_seed(config.seed, tag)), {}, {}, -1, 0.0, 0};
  QualityModel& model = result.model;
  const std::string name = to_string(spec.backbone);

  auto groups = model.parameter_groups();
  Adam adam({{raw(groups.backbone), config.backbone_lr_multiplier}, {raw(groups.head), 1.0}},
            {0.9, 0.999, 1e-8, config.weight_decay});
  const LossConfig loss_cfg{config.alpha, config.variance_epsilon};
  const TtaPolicy val_policy = config.tta_in_validation ? TtaPolicy::flips() : TtaPolicy::none();

  std::mt19937_64 order_rng(derive_seed(config.seed, tag + 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best = -std::numeric_limits<double>::infinity();
  std::vector<NamedTensor> best_state;
  QualityModel* const self[] = {&model};

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    const double lr = step_lr(config.base_lr, config.lr_step_factor, config.lr_step_epochs, epoch);
    adam.set_lr(lr);
    shuffle(order, order_rng);

    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      if (end - start < 2) break;
      const std::span<const std::size_t> idx(order.data() + start, end - start);

      BatchRecord record{epoch, batches, {}};
      std::vector<double> target;
      for (std::size_t i : idx) {
        record.image_ids.push_back(train[i].image_id);
        target.push_back(train[i].mos);
      }
      const Tensor images = load_batch(train, idx);

      adam.zero_grad();
      const auto pred = model.forward(images, nn::Mode::Train);
      LossResult loss;
      try {
        loss = config.loss == LossKind::Mse ? mse_with_grad(pred, target)
                                            : msecorr_loss(pred, target, loss_cfg);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::NonFiniteInput) throw;
        loss.value = kNaN;
      }
      const bool finite = std::isfinite(loss.value) &&
                          std::all_of(loss.grad.begin(), loss.grad.end(),
                                      [](double g) { return std::isfinite(g); });
      if (!finite) {
        throw Error(ErrorKind::DivergedLoss, name + ": non-finite loss at epoch " +
                                                 std::to_string(epoch) + " batch " +
                                                 std::to_string(batches));
      }
      if (loss.degenerate) ++result.degenerate_batches;
      model.backward(loss.grad);
      adam.step();

      loss_sum += loss.value;
      ++batches;
      result.batches.push_back(std::move(record));
    }

    if (config.bn_recalibration_images > 0) {
      recalibrate_batchnorm(model, train, config.bn_recalibration_images, config.batch_size);
    }
    const MetricsReport m = score_set(self, val, val_policy, options.eval_batch);
    TrainLogEntry entry{epoch, loss_sum / batches, m.srcc, m.plcc, m.final, lr};
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(name, entry);

    const double score = std::isnan(m.final) ? -std::numeric_limits<double>::infinity() : m.final;
    if (result.best_epoch < 0 || score > best) {
      best = score;
      result.best_epoch = epoch;
      result.best_val_final = m.final;
      best_state = model.state();
    }
  }
  // A fresh instance drops the activation caches of the last train step.
  result.model = build_model(spec, derive_seed(config.seed, tag));
  result.model.load_state(best_state);
  return result;
}

void write_train_log(const std::filesystem::path& path, std::span<const TrainLogEntry> log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << "epoch,train_loss,val_srcc,val_plcc,val_final,lr_current\n";
  for (const auto& e : log) {
    os << e.epoch << ',' << num(e.train_loss) << ',' << num(e.val_srcc) << ',' << num(e.val_plcc)
       << ',' << num(e.val_final) << ',' << num(e.lr_current) << '\n';
  }
}

void write_batch_log(const std::filesystem::path& path, std::span<const BatchRecord> batches) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << "epoch,batch,image_ids\n";
  for (const auto& b : batches) {
    os << b.epoch << ',' << b.batch << ',';
    for (std::size_t i = 0; i < b.image_ids.size(); ++i) os << (i ? " " : "") << b.image_ids[i];
    os << '\n';
  }
}

EnsembleResult train_ensemble(const TrainConfig& config, std::span<const ManifestEntry> entries,
                              const std::filesystem::path& out_dir, const TrainOptions& options) {
  validate(config);
  EnsembleResult result;
  result.split = split_dataset(entries, config.split());

  std::vector<std::optional<TrainResult>> trained(std::size(kEnsembleBackbones));
  auto run = [&](std::size_t i) {
    trained[i].emplace(train_model(spec_for(kEnsembleBackbones[i], config), config,
                                   result.split.train, result.split.val, options));
  };
  if (config.parallel_models) {
    std::exception_ptr failure[2];
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < 2; ++i) {
      workers.emplace_back([&, i] {
        try {
          run(i);
        } catch (...) {
          failure[i] = std::current_exception();
        }
      });
    }
    for (auto& w : workers) w.join();
    for (auto& f : failure) {
      if (f) std::rethrow_exception(f);
    }
  } else {
    for (std::size_t i = 0; i < 2; ++i) run(i);
  }
  for (auto& t : trained) result.models.push_back(std::move(*t));

  if (out_dir.empty()) return result;
  std::filesystem::create_directories(out_dir);
  const std::string hash = config_hash(config);
  EnsembleManifest manifest;
  manifest.config_hash = hash;
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    TrainResult& r = result.models[i];
    const std::string name = to_string(kEnsembleBackbones[i]);
    const auto ckpt = out_dir / (name + ".fiqa");
    save_checkpoint(r.model, ckpt, {hash, r.best_epoch, r.best_val_final});
    write_train_log(out_dir / ("trainlog_" + name + ".csv"), r.log);
    write_batch_log(out_dir / ("batches_" + name + ".csv"), r.batches);
    result.checkpoints.push_back(ckpt);
    manifest.members.push_back({name + ".fiqa", name, file_digest(ckpt)});
  }
  manifest.tta = TtaPolicy::flips().views;
  result.manifest = out_dir / "ensemble.json";
  write_ensemble_manifest(result.manifest, manifest);

  std::ofstream split(out_dir / "split.csv", std::ios::binary);
  split << "image_id,subset\n";
  for (const auto& e : result.split.train) split << e.image_id << ",train\n";
  for (const auto& e : result.split.val) split << e.image_id << ",val\n";
  return result;
}

// ------------------------------------------------------------------ ablation

namespace {

std::string alpha_label(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

AblationReport run_ablation(const RunConfig& run, std::span<const ManifestEntry> entries,
                            bool sweep_backbone_lr, const TrainOptions& options) {
  const TrainConfig& base = run.train;
  validate(base);
  const TtaPolicy tta = run.tta_color ? TtaPolicy::with_color() : TtaPolicy::flips();
  const TtaPolicy single = TtaPolicy::none();
  const int batch = run.predict_batch;
  auto out_for = [&](const std::string& tag) {
    return run.out.empty() ? std::filesystem::path() : run.out / tag;
  };
  auto pair = [](EnsembleResult& r) {
    return std::vector<QualityModel*>{&r.models[0].model, &r.models[1].model};
  };

  AblationReport report;
  TrainConfig mse = base;
  mse.loss = LossKind::Mse;
  EnsembleResult mse_pair = train_ensemble(mse, entries, out_for("mse"), options);
  const auto& val = mse_pair.split.val;
  {
    QualityModel* a[] = {&mse_pair.models[0].model};
    QualityModel* b[] = {&mse_pair.models[1].model};
    report.rows.push_back({"Baseline A", "MobileNet+MSE", score_set(a, val, single, batch)});
    report.rows.push_back({"Baseline B", "ShuffleNet+MSE", score_set(b, val, single, batch)});
    report.rows.push_back({"+ Ensemble", "Ensemble+MSE", score_set(pair(mse_pair), val, single, batch)});
  }

  TrainConfig corr = base;
  corr.loss = LossKind::MseCorr;
  EnsembleResult corr_pair = train_ensemble(corr, entries, out_for("msecorr"), options);
  report.rows.push_back({"+ Corr-Aware Loss", "Ensemble+MSECorrLoss",
                         score_set(pair(corr_pair), val, single, batch)});
  report.rows.push_back({"+ TTA", "Ensemble+MSECorrLoss+TTA", score_set(pair(corr_pair), val, tta, batch)});

  for (double alpha : run.ablation_alphas) {
    const std::string label = "Ensemble+MSECorrLoss(alpha=" + alpha_label(alpha) + ")";
    if (alpha == corr.alpha) {
      report.rows.push_back({"alpha sweep", label, report.rows[3].metrics});
      continue;
    }
    TrainConfig c = corr;
    c.alpha = alpha;
    EnsembleResult r = train_ensemble(c, entries, out_for("alpha_" + alpha_label(alpha)), options);
    report.rows.push_back({"alpha sweep", label, score_set(pair(r), val, single, batch)});
  }

  if (sweep_backbone_lr) {
    for (double mult : run.backbone_lr_sweep) {
      const std::string label =
          "Ensemble+MSECorrLoss+TTA(backbone_lr_multiplier=" + alpha_label(mult) + ")";
      if (mult == corr.backbone_lr_multiplier) {
        report.rows.push_back({"backbone lr sweep", label, report.rows[4].metrics});
        continue;
      }
      TrainConfig c = corr;
      c.backbone_lr_multiplier = mult;
      EnsembleResult r = train_ensemble(c, entries, out_for("backbone_lr_" + alpha_label(mult)), options);
      report.rows.push_back({"backbone lr sweep", label, score_set(pair(r), val, tta, batch)});
    }
  }
  return report;
}

std::string format_table(const AblationReport& report) {
  std::size_t w1 = 7, w2 = 7;
  for (const auto& r : report.rows) {
    w1 = std::max(w1, r.variant.size());
    w2 = std::max(w2, r.setting.size());
  }
  std::ostringstream os;
  auto pad = [](const std::string& s, std::size_t w) { return s + std::string(w - s.size(), ' '); };
  os << pad("Variant", w1) << "  " << pad("Setting", w2) << "  SRCC    PLCC    Final Score\n";
  for (const auto& r : report.rows) {
    os << pad(r.variant, w1) << "  " << pad(r.setting, w2) << "  " << format_4dp(r.metrics.srcc)
       << "  " << format_4dp(r.metrics.plcc) << "  " << format_4dp(r.metrics.final) << "\n";
  }
  return os.str();
}

nlohmann::json to_json(const MetricsReport& m) {
  return {{"srcc", m.srcc}, {"plcc", m.plcc}, {"final", m.final}, {"n", m.n}};
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    nlohmann::json j = to_json(r.metrics);
    j["variant"] = r.variant;
    j["setting"] = r.setting;
    rows.push_back(j);
  }
  return {{"rows", rows}};
}

}  // namespace fiqa

#include "fiqa/cli.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "fiqa/config.hpp"
#include "fiqa/efficiency.hpp"
#include "fiqa/error.hpp"
#include "fiqa/inference.hpp"
#include "fiqa/metrics.hpp"
#include "fiqa/synthetic.hpp"
#include "fiqa/trainer.hpp"

namespace fiqa {

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> checkpoints;
  std::optional<std::string> manifest;
  std::optional<std::string> tta;
  std::optional<double> alpha;
  bool dry_run = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "flat key = value config file");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (o.config) load_config_file(cfg, *o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.checkpoints) cfg.checkpoints = *o.checkpoints;
  if (o.manifest) cfg.manifest = *o.manifest;
  if (o.tta) apply_setting(cfg, "tta", *o.tta);
  if (o.alpha) cfg.train.alpha = *o.alpha;
  return cfg;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  std::error_code ec;
  if (p.empty()) throw Error(ErrorKind::InvalidConfig, what + " path is required");
  if (!std::filesystem::exists(p, ec)) {
    throw Error(ErrorKind::InvalidConfig, what + " not found: " + p.string());
  }
}

void require_out(const std::filesystem::path& p) {
  if (p.empty()) throw Error(ErrorKind::InvalidConfig, "--out is required");
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return kExitConfigError;
    case ErrorCategory::Data: return kExitDataError;
    case ErrorCategory::Divergence: return kExitTrainingDiverged;
    case ErrorCategory::Internal: return kExitInternalError;
  }
  return kExitInternalError;
}

std::string one_line(std::string s) {
  for (char& c : s) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << text;
}

TrainOptions progress(const RunConfig& cfg, std::ostream& err) {
  TrainOptions opts;
  opts.eval_batch = cfg.predict_batch;
  if (cfg.verbosity > 0) {
    auto lock = std::make_shared<std::mutex>();
    opts.on_epoch = [&err, lock](const std::string& model, const TrainLogEntry& e) {
      std::lock_guard<std::mutex> g(*lock);
      char buf[200];
      std::snprintf(buf, sizeof buf, "%s epoch %d: loss %.6g val srcc %s plcc %s final %s lr %.3g\n",
                    model.c_str(), e.epoch, e.train_loss, format_4dp(e.val_srcc).c_str(),
                    format_4dp(e.val_plcc).c_str(), format_4dp(e.val_final).c_str(), e.lr_current);
      err << buf << std::flush;
    };
  }
  return opts;
}

std::string metrics_row(const std::string& method, const MetricsReport& m) {
  std::ostringstream os;
  os << "Method              SRCC    PLCC    Final Score\n";
  std::string label = method;
  label.resize(std::max<std::size_t>(label.size(), 18), ' ');
  os << label << "  " << format_4dp(m.srcc) << "  " << format_4dp(m.plcc) << "  "
     << format_4dp(m.final) << "\n";
  return os.str();
}

// ------------------------------------------------------------------ commands

int cmd_train(const Overrides& o, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(o);
  if (o.tta) cfg.train.tta_in_validation = cfg.tta;
  validate(cfg.train);
  require_file(cfg.manifest, "manifest");
  require_out(cfg.out);
  if (o.dry_run) {
    out << to_text(cfg);
    return kExitOk;
  }
  const auto entries = load_manifest(cfg.manifest);
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out / "config.txt", to_text(cfg));
  const auto result = train_ensemble(cfg.train, entries, cfg.out, progress(cfg, err));
  for (std::size_t i = 0; i < result.models.size(); ++i) {
    out << result.checkpoints[i].string() << "  best epoch " << result.models[i].best_epoch
        << "  val final " << format_4dp(result.models[i].best_val_final) << "\n";
  }
  out << result.manifest.string() << "\n";
  return kExitOk;
}

int cmd_predict(const Overrides& o, std::ostream& out, std::ostream&) {
  RunConfig cfg = resolve(o);
  require_file(cfg.checkpoints, "checkpoints");
  require_file(cfg.manifest, "manifest");
  require_out(cfg.out);
  if (o.dry_run) {
    out << to_text(cfg);
    return kExitOk;
  }
  auto models = load_ensemble(cfg.checkpoints);
  std::vector<QualityModel*> ptrs;
  for (auto& m : models) ptrs.push_back(&m);
  const auto entries = load_manifest(cfg.manifest);
  if (cfg.out.has_parent_path()) std::filesystem::create_directories(cfg.out.parent_path());
  const auto records = batch_predict(ptrs, entries, cfg.tta_policy(), cfg.out, cfg.predict_batch);
  std::size_t failed = 0;
  for (const auto& r : records) failed += r.ok() ? 0 : 1;
  out << "scored " << records.size() - failed << " of " << records.size() << " images -> "
      << cfg.out.string() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Overrides& o, const std::string& predictions, std::ostream& out,
                 std::ostream& err) {
  RunConfig cfg = resolve(o);
  require_file(predictions, "predictions");
  require_file(cfg.manifest, "manifest");
  const auto entries = load_manifest(cfg.manifest);
  std::map<std::string, double> mos;
  for (const auto& e : entries) mos[e.image_id] = e.mos;

  std::vector<double> pred, gt;
  for (const auto& s : read_predictions(predictions)) {
    const auto it = mos.find(s.image_id);
    if (it == mos.end()) throw Error(ErrorKind::MalformedRow, "prediction for unknown image " + s.image_id);
    if (!s.error.empty()) {
      err << "warning: skipping " << s.image_id << ": " << s.error << "\n";
      continue;
    }
    pred.push_back(s.fused);
    gt.push_back(it->second);
  }
  const MetricsReport report = final_score(pred, gt);
  nlohmann::json j = to_json(report);
  j["display"] = {{"srcc", format_4dp(report.srcc)},
                  {"plcc", format_4dp(report.plcc)},
                  {"final", format_4dp(report.final)}};
  if (!cfg.out.empty()) write_text(cfg.out, j.dump(2) + "\n");
  out << metrics_row("Ours", report);
  return kExitOk;
}

int cmd_ablate(const Overrides& o, bool sweep_backbone_lr, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve(o);
  validate(cfg.train);
  require_file(cfg.manifest, "manifest");
  require_out(cfg.out);
  if (o.dry_run) {
    out << to_text(cfg);
    return kExitOk;
  }
  const auto entries = load_manifest(cfg.manifest);
  std::filesystem::create_directories(cfg.out);
  write_text(cfg.out / "config.txt", to_text(cfg));
  const auto report = run_ablation(cfg, entries, sweep_backbone_lr, progress(cfg, err));
  const std::string table = format_table(report);
  write_text(cfg.out / "ablation.json", to_json(report).dump(2) + "\n");
  write_text(cfg.out / "ablation.txt", table);
  out << table;
  return kExitOk;
}

int cmd_audit(const Overrides& o, bool layers, std::ostream& out) {
  RunConfig cfg = resolve(o);
  std::vector<QualityModel> models;
  if (!cfg.checkpoints.empty()) {
    require_file(cfg.checkpoints, "checkpoints");
    models = load_ensemble(cfg.checkpoints);
  } else {
    for (BackboneKind k : kEnsembleBackbones) models.push_back(build_model(default_spec(k), 0));
  }
  std::vector<QualityModel*> ptrs;
  for (auto& m : models) ptrs.push_back(&m);
  const TtaPolicy policy = cfg.tta_policy();
  const bool tta = o.tta.has_value() && cfg.tta;
  const auto report = estimate_flops(ptrs, kInputHeight, kInputWidth, tta, policy.count());
  if (!cfg.out.empty()) write_text(cfg.out, to_json(report, layers).dump(2) + "\n");
  out << format_table(report);
  return kExitOk;
}

int cmd_synth(const std::string& dir, int count, std::uint64_t seed, std::ostream& out) {
  if (dir.empty()) throw Error(ErrorKind::InvalidConfig, "--out is required");
  const auto samples = generate_synthetic(dir, {count, seed, {}});
  out << "wrote " << samples.size() << " images and " << (std::filesystem::path(dir) / "manifest.csv").string()
      << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Face image quality assessment: train, predict, evaluate, ablate, audit"};
  app.require_subcommand(1);
  Overrides o;
  std::string predictions;
  bool sweep = false;
  bool layers = false;
  std::string synth_dir;
  int synth_count = 256;
  std::uint64_t synth_seed = 0;

  auto* train = app.add_subcommand("train", "train both models and write an ensemble manifest");
  add_common(train, o);
  train->add_option("--manifest", o.manifest, "CSV with image_id,path,mos");
  train->add_option("--out", o.out, "output directory");
  train->add_option("--seed", o.seed);
  train->add_option("--alpha", o.alpha, "correlation loss weight");
  train->add_option("--tta", o.tta, "TTA during validation")->check(CLI::IsMember({"on", "off"}));
  train->add_flag("--dry-run", o.dry_run, "print the resolved config and exit");

  auto* predict = app.add_subcommand("predict", "score a manifest with an ensemble");
  add_common(predict, o);
  predict->add_option("--checkpoints", o.checkpoints, "ensemble.json, its directory, or a checkpoint");
  predict->add_option("--manifest", o.manifest);
  predict->add_option("--tta", o.tta)->check(CLI::IsMember({"on", "off"}));
  predict->add_option("--out", o.out, "prediction CSV");
  predict->add_flag("--dry-run", o.dry_run);

  auto* evaluate = app.add_subcommand("evaluate", "SRCC / PLCC / final score of a prediction CSV");
  add_common(evaluate, o);
  evaluate->add_option("predictions,--predictions", predictions, "prediction CSV")->required();
  evaluate->add_option("--manifest", o.manifest, "ground-truth manifest");
  evaluate->add_option("--out", o.out, "metrics JSON");

  auto* ablate = app.add_subcommand("ablate", "train and score the ablation variants");
  add_common(ablate, o);
  ablate->add_option("--manifest", o.manifest);
  ablate->add_option("--out", o.out, "output directory");
  ablate->add_option("--seed", o.seed);
  ablate->add_option("--alpha", o.alpha);
  ablate->add_flag("--sweep-backbone-lr", sweep, "add rows for each backbone_lr_sweep multiplier");
  ablate->add_flag("--dry-run", o.dry_run);

  auto* audit = app.add_subcommand("audit", "parameter and FLOP audit");
  add_common(audit, o);
  audit->add_option("--checkpoints", o.checkpoints, "audit trained checkpoints instead of fresh models");
  audit->add_option("--tta", o.tta, "multiply by the TTA view count")->check(CLI::IsMember({"on", "off"}));
  audit->add_option("--out", o.out, "report JSON");
  audit->add_flag("--layers", layers, "include the per-layer breakdown in the JSON");

  auto* synth = app.add_subcommand("synth", "write a synthetic labeled dataset");
  synth->add_option("--out", synth_dir, "output directory")->required();
  synth->add_option("--count", synth_count, "number of images");
  synth->add_option("--seed", synth_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: CONFIG_ERROR: " << one_line(e.what()) << "\n";
    return kExitConfigError;
  }

  try {
    if (train->parsed()) return cmd_train(o, out, err);
    if (predict->parsed()) return cmd_predict(o, out, err);
    if (evaluate->parsed()) return cmd_evaluate(o, predictions, out, err);
    if (ablate->parsed()) return cmd_ablate(o, sweep, out, err);
    if (audit->parsed()) return cmd_audit(o, layers, out);
    if (synth->parsed()) return cmd_synth(synth_dir, synth_count, synth_seed, out);
  } catch (const Error& e) {
    err << "error: " << to_string(e.category()) << ": " << one_line(e.what()) << "\n";
    return exit_code(e.category());
  } catch (const std::exception& e) {
    err << "error: INTERNAL_ERROR: " << one_line(e.what()) << "\n";
    return kExitInternalError;
  }
  return kExitInternalError;
}

}  // namespace fiqa

// Acceptance suite: one PASS/FAIL line per criterion.
//
//   fiqa_acceptance [--workdir DIR] [--only 1,3,7]
//
// Criteria 7 and 8 train real models on synthetic data and take minutes to
// tens of minutes on one CPU core.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fiqa/cli.hpp"
#include "fiqa/efficiency.hpp"
#include "fiqa/error.hpp"
#include "fiqa/inference.hpp"
#include "fiqa/loss.hpp"
#include "fiqa/metrics.hpp"
#include "fiqa/synthetic.hpp"
#include "fiqa/trainer.hpp"
#include "oracles.hpp"

using namespace fiqa;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "fiqa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::fprintf(stderr, "fiqa %s -> %d: %s", args[1].c_str(), code, err.str().c_str());
  return code;
}

// ---------------------------------------------------------------- 1. loss

Outcome loss_correctness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<std::size_t> size(2, 512);
  std::uniform_real_distribution<double> scale(0.1, 10.0), shift(-50.0, 50.0);
  double worst_r = 0.0, worst_loss = 0.0, worst_affine = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = size(rng);
    const auto q = testing_support::random_vector(rng, n, false);
    auto p = testing_support::random_vector(rng, n, false);
    // Mix in signal so correlations span the whole range.
    const double w = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
    for (std::size_t i = 0; i < n; ++i) p[i] = w * q[i] + (1.0 - std::fabs(w)) * p[i];
    const double ref = oracle::pearson_eps(p, q, 1e-8L);
    worst_r = std::max(worst_r, std::fabs(pearson(p, q, 1e-8).r - ref));
    worst_loss = std::max(worst_loss, std::fabs(corr_loss(p, q, 1e-8) - (1.0 - ref)));
    const double a = scale(rng), b = shift(rng);
    std::vector<double> mapped;
    for (double v : p) mapped.push_back(a * v + b);
    worst_affine = std::max(worst_affine, std::fabs(corr_loss(mapped, q) - corr_loss(p, q)));
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = worst_r <= 1e-9 && worst_loss <= 1e-9 && worst_affine <= 1e-6 && secs < 10.0;
  o.detail = "max |r - oracle| " + fmt("%.2e", worst_r) + ", max |corr_loss - oracle| " +
             fmt("%.2e", worst_loss) + ", max affine drift " + fmt("%.2e", worst_affine) + ", " +
             fmt("%.2f", secs) + " s";
  return o;
}

// ------------------------------------------------------------ 2. gradient

Outcome gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<std::size_t> size(2, 128);
  std::uniform_real_distribution<double> alpha(0.1, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = size(rng);
    const auto q = testing_support::random_vector(rng, n, false);
    auto p = testing_support::random_vector(rng, n, false);
    const LossConfig cfg{alpha(rng), 1e-8};
    const auto analytic = msecorr_loss(p, q, cfg).grad;
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double keep = p[i];
      p[i] = keep + 1e-4;
      const double up = msecorr_loss(p, q, cfg).value;
      p[i] = keep - 1e-4;
      const double down = msecorr_loss(p, q, cfg).value;
      p[i] = keep;
      const double fd = (up - down) / 2e-4;
      diff += (fd - analytic[i]) * (fd - analytic[i]);
      norm += std::max(fd * fd, analytic[i] * analytic[i]);
    }
    worst = std::max(worst, std::sqrt(diff / norm));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 30.0,
          "max relative error " + fmt("%.2e", worst) + " over 100 batches, " + fmt("%.2f", secs) + " s"};
}

// -------------------------------------------------------------- 3. metrics

Outcome metric_oracles() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<std::size_t> size(2, 100);
  double worst_s = 0.0, worst_p = 0.0;
  int tied = 0, done = 0;
  while (done < 200) {
    const std::size_t n = size(rng);
    const bool ties = done % 2 == 0;
    const auto x = testing_support::random_vector(rng, n, ties);
    const auto y = testing_support::random_vector(rng, n, done % 3 == 0);
    if (std::set<double>(x.begin(), x.end()).size() < 2 || std::set<double>(y.begin(), y.end()).size() < 2) {
      continue;
    }
    tied += std::set<double>(x.begin(), x.end()).size() < n;
    worst_s = std::max(worst_s, std::fabs(srcc(x, y) - oracle::spearman(x, y)));
    worst_p = std::max(worst_p, std::fabs(plcc(x, y) - oracle::pearson(x, y)));
    ++done;
  }
  // Published (SRCC, PLCC, final) rows. TOPIQ_Face (0.8623, 0.9266, 0.8945)
  // is left out: its mean 0.89445 rounds to 0.8944 half-to-even and to 0.8945
  // only half-up, contradicting the 0.6578 row, so no single rule fits both.
  struct Row {
    const char* name;
    double s, p;
    const char* shown;
  };
  const Row rows[] = {
      {"Ours", 0.9829, 0.9894, "0.9862"},       {"DB-CNN", 0.5324, 0.7833, "0.6578"},
      {"NIMA", 0.5839, 0.7649, "0.6744"},       {"QualiCLIP", 0.5324, 0.7833, "0.6578"},
      {"PIQE", 0.6090, 0.8122, "0.7106"},       {"NIQE", 0.6914, 0.8574, "0.7744"},
      {"BRISQUE", 0.6465, 0.8149, "0.7307"},    {"MANIQA", 0.7790, 0.8918, "0.8354"},
      {"TOPIQ_Swin_Face", 0.9156, 0.9416, "0.9286"}, {"IFQA", 0.3962, 0.4258, "0.4110"},
  };
  std::string mismatched;
  for (const auto& r : rows) {
    if (format_4dp(final_score(r.s, r.p).final) != r.shown) mismatched += std::string(" ") + r.name;
  }
  Outcome o;
  o.pass = worst_s <= 1e-9 && worst_p <= 1e-9 && mismatched.empty() && tied > 50;
  o.detail = "max |srcc - oracle| " + fmt("%.2e", worst_s) + ", max |plcc - oracle| " +
             fmt("%.2e", worst_p) + " (" + std::to_string(tied) + " tied vectors); " +
             std::to_string(std::size(rows)) + " table rows " +
             (mismatched.empty() ? std::string("reproduced") : "mismatched:" + mismatched);
  return o;
}

// --------------------------------------------------------------- 4. fusion

Outcome fusion_algebra() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> dim(1, 8);
  std::normal_distribution<double> d(3.0, 1.5);
  double worst_perm = 0.0;
  int outside = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int m = dim(rng), t = dim(rng);
    PredictionRecord r;
    r.grid.assign(m, std::vector<double>(t));
    double lo = INFINITY, hi = -INFINITY;
    for (auto& row : r.grid) {
      for (double& v : row) {
        v = d(rng);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    PredictionRecord shuffled = r;
    fuse(r);
    std::shuffle(shuffled.grid.begin(), shuffled.grid.end(), rng);
    for (auto& row : shuffled.grid) std::shuffle(row.begin(), row.end(), rng);
    fuse(shuffled);
    worst_perm = std::max(worst_perm, std::fabs(r.fused - shuffled.fused));
    outside += r.fused < lo || r.fused > hi;
  }
  // M = T = 1 through the full predictor.
  auto model = build_model(default_spec(BackboneKind::ShuffleNetV2), 4);
  Tensor img({1, 3, kInputHeight, kInputWidth});
  std::normal_distribution<float> px(0.0f, 1.0f);
  for (float& v : img.values()) v = px(rng);
  QualityModel* one[] = {&model};
  const auto rec = ensemble_predict(one, PreprocessedImage{img, "x"}, TtaPolicy::none());
  const bool exact = rec.fused == model.forward(img, nn::Mode::Eval)[0];
  const double secs = seconds_since(t0);
  return {worst_perm <= 1e-9 && outside == 0 && exact && secs < 5.0,
          "max permutation drift " + fmt("%.2e", worst_perm) + ", " + std::to_string(outside) +
              " fused outside [min,max], M=T=1 " + (exact ? "exact" : "NOT exact") + ", " +
              fmt("%.2f", secs) + " s"};
}

// --------------------------------------------------------- 5. architecture

Outcome architecture() {
  auto mob = build_model(default_spec(BackboneKind::MobileNetV3Small), 5);
  auto shuf = build_model(default_spec(BackboneKind::ShuffleNetV2), 5);
  const auto pm = count_params(mob).at("mobilenet_v3_small.head");
  const auto ps = count_params(shuf).at("shufflenet_v2.head");
  bool counts = pm == 576 * 288 + 288 + 288 * 1 + 1 && ps == 1024 * 512 + 512 + 512 * 256 + 256 + 256 * 1 + 1 &&
                pm == 166465 && ps == 656385;

  std::mt19937_64 rng(505);
  std::normal_distribution<double> d(0.0, 1.0);
  double worst = 0.0;
  bool dropout_ok = true;
  for (QualityModel* model : {&mob, &shuf}) {
    const auto& layers = model->head().layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].op == nn::RegressionHead::Op::ReLU) {
        dropout_ok = dropout_ok && i + 1 < layers.size() &&
                     layers[i + 1].op == nn::RegressionHead::Op::Dropout && layers[i + 1].rate == 0.2;
      }
    }
    const int dim = model->spec().feature_dim;
    const auto params = model->parameter_groups().head;
    for (int trial = 0; trial < 20; ++trial) {
      Tensor f({1, dim, 1, 1});
      std::vector<double> x(dim);
      for (int i = 0; i < dim; ++i) {
        f.data()[i] = static_cast<float>(d(rng));
        x[i] = f.data()[i];
      }
      for (std::size_t k = 0; k + 1 < params.size(); k += 2) {
        const Tensor& w = params[k].param->value;
        const Tensor& b = params[k + 1].param->value;
        const int out = w.shape().n, in = w.shape().c;
        std::vector<double> y(out);
        for (int o = 0; o < out; ++o) {
          double acc = b.data()[o];
          for (int i = 0; i < in; ++i) acc += static_cast<double>(w.data()[o * in + i]) * x[i];
          y[o] = k + 2 < params.size() ? std::max(0.0, acc) : acc;
        }
        x = y;
      }
      const double got = model->head().forward(f, nn::Mode::Eval)[0];
      worst = std::max(worst, std::fabs(got - x[0]) / std::max(1e-12, std::fabs(x[0])));
    }
  }
  return {counts && worst < 1e-5 && dropout_ok,
          "head params " + std::to_string(pm) + " / " + std::to_string(ps) + ", max head rel. error " +
              fmt("%.2e", worst) + ", dropout 0.2 after every ReLU: " + (dropout_ok ? "yes" : "no")};
}

// ----------------------------------------------------------- 6. efficiency

Outcome efficiency() {
  const auto t0 = Clock::now();
  auto mob = build_model(default_spec(BackboneKind::MobileNetV3Small), 0);
  auto shuf = build_model(default_spec(BackboneKind::ShuffleNetV2), 0);
  QualityModel* both[] = {&mob, &shuf};
  const auto r = estimate_flops(both);
  const double one = r.gflops(FlopConvention::MacAsOneFlop);
  const double two = r.gflops(FlopConvention::MacAsTwoFlops);
  const double dev = std::fabs(r.gflops_deviation_pct(r.nearest_convention()));
  const bool params_ok = r.total_params >= 1500000 && r.total_params <= 3000000;
  const double secs = seconds_since(t0);
  std::string detail = "total params " + std::to_string(r.total_params) + " (" +
                       fmt("%+.1f", r.params_deviation_pct()) + "% vs 2.0M); GFLOPs " + fmt("%.4f", one) +
                       " (1/MAC, " + fmt("%+.1f", r.gflops_deviation_pct(FlopConvention::MacAsOneFlop)) +
                       "%) / " + fmt("%.4f", two) + " (2/MAC, " +
                       fmt("%+.1f", r.gflops_deviation_pct(FlopConvention::MacAsTwoFlops)) +
                       "%) vs 0.4985; " + fmt("%.2f", secs) + " s";
  if (dev > 25.0) detail += "; DIAGNOSTIC: nearest convention deviates by more than 25%";
  if (!r.warnings.empty()) detail += "; " + std::to_string(r.warnings.size()) + " unsupported layers";
  return {params_ok && dev <= 25.0 && secs < 60.0 && r.warnings.empty(), detail};
}

// ------------------------------------------------------ 7. desk training

// Synthetic set and training recipe for the desk-scale run. Backbones start
// from random weights, hence the full backbone rate and BN recalibration.
constexpr int kSyntheticImages = 256;
constexpr std::uint64_t kSyntheticSeed = 2024;
constexpr const char* kDeskConfig =
    "batch_size = 16\n"
    "max_epochs = 10\n"
    "base_lr = 0.001\n"
    "backbone_lr_multiplier = 1.0\n"
    "lr_step_epochs = 5\n"
    "bn_recalibration_images = 96\n"
    "seed = 7\n"
    "alpha = 0.5\n"
    "ablation_alphas = 0\n"
    "predict_batch = 8\n";

Outcome desk_training(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path data = work / "c7_data";
  const fs::path out = work / "c7_run";
  fs::remove_all(data);
  fs::remove_all(out);
  generate_synthetic(data, {kSyntheticImages, kSyntheticSeed, {}});
  const auto entries = load_manifest(data / "manifest.csv");

  RunConfig cfg = parse_config_text(kDeskConfig);
  cfg.out = out;
  TrainOptions opts;
  opts.eval_batch = cfg.predict_batch;
  opts.on_epoch = [](const std::string& model, const TrainLogEntry& e) {
    std::fprintf(stderr, "  [7] %s epoch %d loss %.4f val final %s\n", model.c_str(), e.epoch, e.train_loss,
                 format_4dp(e.val_final).c_str());
  };
  const AblationReport report = run_ablation(cfg, entries, false, opts);
  std::fputs(format_table(report).c_str(), stderr);

  const char* order[] = {"Baseline A", "Baseline B", "+ Ensemble", "+ Corr-Aware Loss", "+ TTA"};
  bool rows_ok = report.rows.size() == 6;
  for (int i = 0; rows_ok && i < 5; ++i) rows_ok = report.rows[i].variant == order[i];
  const MetricsReport& tta = report.rows[4].metrics;
  const MetricsReport& ens = report.rows[2].metrics;
  const MetricsReport& zero = report.rows.back().metrics;
  const bool alpha_ok = rows_ok && report.rows.back().setting == "Ensemble+MSECorrLoss(alpha=0)" &&
                        std::fabs(zero.srcc - ens.srcc) <= 1e-9 && std::fabs(zero.plcc - ens.plcc) <= 1e-9 &&
                        std::fabs(zero.final - ens.final) <= 1e-9;

  // Same checkpoints through the CLI: predict the validation split, evaluate.
  const auto split = split_dataset(entries, cfg.train.split());
  write_manifest(work / "c7_val.csv", split.val);
  bool cli_ok = cli({"predict", "--checkpoints", (out / "msecorr").string(), "--manifest",
                     (work / "c7_val.csv").string(), "--tta", "on", "--out", (work / "c7_pred.csv").string()}) == 0 &&
                cli({"evaluate", (work / "c7_pred.csv").string(), "--manifest", (work / "c7_val.csv").string(),
                     "--out", (work / "c7_metrics.json").string()}) == 0;
  double cli_final = NAN;
  if (cli_ok) {
    std::ifstream is(work / "c7_metrics.json");
    cli_final = nlohmann::json::parse(is).at("final").get<double>();
    cli_ok = std::fabs(cli_final - tta.final) <= 1e-12;
  }
  const double secs = seconds_since(t0);
  const bool pass = rows_ok && tta.final >= 0.85 && alpha_ok && cli_ok && secs < 7200.0;
  return {pass, "ensemble+TTA val final " + fmt("%.4f", tta.final) + " (n=" + std::to_string(tta.n) +
                    ", need >= 0.85); rows " + (rows_ok ? "5 in order" : "WRONG") + "; alpha=0 row " +
                    (alpha_ok ? "equals" : "DIFFERS from") + " Ensemble+MSE; CLI predict/evaluate " +
                    (cli_ok ? "agrees" : "DISAGREES") + "; " + fmt("%.0f", secs) + " s"};
}

// ------------------------------------------------------- 8. reproducibility

Outcome reproducibility(const fs::path& work) {
  const auto t0 = Clock::now();
  const fs::path data = work / "c8_data";
  fs::remove_all(data);
  generate_synthetic(data, {12, 88, {}});
  std::ofstream(work / "c8.cfg") << "batch_size = 4\nmax_epochs = 2\nlr_step_epochs = 1\npredict_batch = 4\n";
  std::vector<fs::path> runs{work / "c8_a", work / "c8_b"};
  bool ok = true;
  for (const auto& r : runs) {
    fs::remove_all(r);
    ok = ok && cli({"train", "--config", (work / "c8.cfg").string(), "--manifest", (data / "manifest.csv").string(),
                    "--out", r.string(), "--seed", "31"}) == 0;
    ok = ok && cli({"predict", "--checkpoints", r.string(), "--manifest", (data / "manifest.csv").string(),
                    "--out", (r / "pred.csv").string()}) == 0;
    ok = ok && cli({"evaluate", (r / "pred.csv").string(), "--manifest", (data / "manifest.csv").string(),
                    "--out", (r / "metrics.json").string()}) == 0;
  }
  std::vector<std::string> files{"mobilenet_v3_small.fiqa", "mobilenet_v3_small.fiqa.json", "shufflenet_v2.fiqa",
                                 "shufflenet_v2.fiqa.json", "ensemble.json", "trainlog_mobilenet_v3_small.csv",
                                 "trainlog_shufflenet_v2.csv", "pred.csv", "metrics.json"};
  std::string differ;
  for (const auto& f : files) {
    if (!ok) break;
    const std::string a = slurp(runs[0] / f), b = slurp(runs[1] / f);
    if (a.empty() || a != b) differ += " " + f;
  }
  const double secs = seconds_since(t0);
  return {ok && differ.empty(), (ok ? std::string("runs completed") : std::string("a run FAILED")) + "; " +
                                    (differ.empty() ? std::to_string(files.size()) + " artifacts byte-identical"
                                                    : "differing:" + differ) +
                                    "; " + fmt("%.0f", secs) + " s"};
}

}  // namespace

int main(int argc, char** argv) {
  fs::path work = fs::temp_directory_path() / "fiqa_acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--workdir") && i + 1 < argc) {
      work = argv[++i];
    } else if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    } else {
      std::fprintf(stderr, "usage: %s [--workdir DIR] [--only 1,2,...]\n", argv[0]);
      return 2;
    }
  }
  fs::create_directories(work);

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "loss correctness", loss_correctness},
      {2, "gradient check", gradient_check},
      {3, "metric oracle equivalence", metric_oracles},
      {4, "fusion algebra", fusion_algebra},
      {5, "architecture conformance", architecture},
      {6, "efficiency audit", efficiency},
      {7, "desk-scale training", [&] { return desk_training(work); }},
      {8, "reproducibility", [&] { return reproducibility(work); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("[%s] %d. %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}

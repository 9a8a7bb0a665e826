#include "fiqa/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fiqa/archive.hpp"
#include "fiqa/error.hpp"

namespace fiqa {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto [end, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || end != value.data() + value.size()) {
    throw Error(ErrorKind::InvalidConfig, key + ": '" + value + "' is not a valid number");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw Error(ErrorKind::InvalidConfig, key + ": '" + value + "' is not a boolean");
}

std::vector<double> parse_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<double>(key, trim(item)));
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string list(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + num(v[i]);
  return s;
}

std::string train_text(const TrainConfig& c) {
  std::ostringstream os;
  os << "base_lr = " << num(c.base_lr) << "\n"
     << "backbone_lr_multiplier = " << num(c.backbone_lr_multiplier) << "\n"
     << "weight_decay = " << num(c.weight_decay) << "\n"
     << "lr_step_epochs = " << c.lr_step_epochs << "\n"
     << "lr_step_factor = " << num(c.lr_step_factor) << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "max_epochs = " << c.max_epochs << "\n"
     << "alpha = " << num(c.alpha) << "\n"
     << "variance_epsilon = " << num(c.variance_epsilon) << "\n"
     << "loss = " << to_string(c.loss) << "\n"
     << "seed = " << c.seed << "\n"
     << "split.train_fraction = " << num(c.train_fraction) << "\n"
     << "split.seed = " << c.split().seed << "\n"
     << "tta_in_validation = " << (c.tta_in_validation ? "true" : "false") << "\n"
     << "pretrained = " << (c.pretrained ? "true" : "false") << "\n"
     << "bn_recalibration_images = " << c.bn_recalibration_images << "\n";
  return os.str();
}

}  // namespace

std::string to_string(LossKind kind) { return kind == LossKind::Mse ? "mse" : "msecorr"; }

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (!(c.base_lr > 0.0)) fail("base_lr must be positive");
  if (!(c.backbone_lr_multiplier > 0.0 && c.backbone_lr_multiplier <= 1.0)) {
    fail("backbone_lr_multiplier must lie in (0, 1]");
  }
  if (!(c.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (c.lr_step_epochs < 1) fail("lr_step_epochs must be at least 1");
  if (!(c.lr_step_factor > 0.0 && c.lr_step_factor <= 1.0)) fail("lr_step_factor must lie in (0, 1]");
  if (c.batch_size < 2) fail("batch_size must be at least 2 (correlation needs two samples)");
  if (c.max_epochs < 1) fail("max_epochs must be at least 1");
  if (!(c.alpha >= 0.0)) fail("alpha must be non-negative");
  if (!(c.variance_epsilon > 0.0)) fail("variance_epsilon must be positive");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0)) fail("split.train_fraction must lie in (0, 1)");
  if (c.bn_recalibration_images < 0) fail("bn_recalibration_images must be non-negative");
}

std::string config_hash(const TrainConfig& config) { return hex64(fnv1a64(train_text(config))); }

TtaPolicy RunConfig::tta_policy() const {
  if (!tta) return TtaPolicy::none();
  return tta_color ? TtaPolicy::with_color() : TtaPolicy::flips();
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  TrainConfig& t = config.train;
  if (key == "base_lr") t.base_lr = parse_number<double>(key, value);
  else if (key == "backbone_lr_multiplier") t.backbone_lr_multiplier = parse_number<double>(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_number<double>(key, value);
  else if (key == "lr_step_epochs") t.lr_step_epochs = parse_number<int>(key, value);
  else if (key == "lr_step_factor") t.lr_step_factor = parse_number<double>(key, value);
  else if (key == "batch_size") t.batch_size = parse_number<int>(key, value);
  else if (key == "max_epochs") t.max_epochs = parse_number<int>(key, value);
  else if (key == "alpha") t.alpha = parse_number<double>(key, value);
  else if (key == "variance_epsilon") t.variance_epsilon = parse_number<double>(key, value);
  else if (key == "loss") {
    if (value == "msecorr") t.loss = LossKind::MseCorr;
    else if (value == "mse") t.loss = LossKind::Mse;
    else throw Error(ErrorKind::InvalidConfig, "loss must be msecorr or mse");
  }
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "split.train_fraction") t.train_fraction = parse_number<double>(key, value);
  else if (key == "split.seed") t.split_seed = parse_number<std::uint64_t>(key, value);
  else if (key == "tta_in_validation") t.tta_in_validation = parse_bool(key, value);
  else if (key == "pretrained") t.pretrained = parse_bool(key, value);
  else if (key == "mobilenet_weights") t.mobilenet_weights = value;
  else if (key == "shufflenet_weights") t.shufflenet_weights = value;
  else if (key == "parallel_models") t.parallel_models = parse_bool(key, value);
  else if (key == "bn_recalibration_images") t.bn_recalibration_images = parse_number<int>(key, value);
  else if (key == "manifest") config.manifest = value;
  else if (key == "out") config.out = value;
  else if (key == "checkpoints") config.checkpoints = value;
  else if (key == "tta") config.tta = parse_bool(key, value);
  else if (key == "tta_color") config.tta_color = parse_bool(key, value);
  else if (key == "predict_batch") config.predict_batch = parse_number<int>(key, value);
  else if (key == "ablation_alphas") config.ablation_alphas = parse_list(key, value);
  else if (key == "backbone_lr_sweep") config.backbone_lr_sweep = parse_list(key, value);
  else if (key == "verbosity") config.verbosity = parse_number<int>(key, value);
  else throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, const std::string& origin) {
  RunConfig config;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::InvalidConfig,
                  origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidConfig, origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return config;
}

void load_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::InvalidConfig, "config file not found: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  const RunConfig parsed = parse_config_text(ss.str(), path.string());
  // Relative paths in a config file resolve against its directory.
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path p) {
    return p.empty() || p.is_absolute() ? p : base / p;
  };
  config = parsed;
  config.manifest = resolve(config.manifest);
  config.out = resolve(config.out);
  config.checkpoints = resolve(config.checkpoints);
  config.train.mobilenet_weights = resolve(config.train.mobilenet_weights);
  config.train.shufflenet_weights = resolve(config.train.shufflenet_weights);
}

std::string to_text(const RunConfig& c) {
  std::ostringstream os;
  os << train_text(c.train)
     << "mobilenet_weights = " << c.train.mobilenet_weights.string() << "\n"
     << "shufflenet_weights = " << c.train.shufflenet_weights.string() << "\n"
     << "parallel_models = " << (c.train.parallel_models ? "true" : "false") << "\n"
     << "manifest = " << c.manifest.string() << "\n"
     << "out = " << c.out.string() << "\n"
     << "checkpoints = " << c.checkpoints.string() << "\n"
     << "tta = " << (c.tta ? "on" : "off") << "\n"
     << "tta_color = " << (c.tta_color ? "true" : "false") << "\n"
     << "predict_batch = " << c.predict_batch << "\n"
     << "ablation_alphas = " << list(c.ablation_alphas) << "\n"
     << "backbone_lr_sweep = " << list(c.backbone_lr_sweep) << "\n"
     << "verbosity = " << c.verbosity << "\n";
  return os.str();
}

}  // namespace fiqa

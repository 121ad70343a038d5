#include "hf/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace hf::config {

namespace {

struct RawKey {
  std::string value;
  int line = 0;
  bool used = false;
};

struct Raw {
  // section -> key -> value/line
  std::map<std::string, std::map<std::string, RawKey>> sections;
  std::vector<std::string> errors;
};

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

Raw parse_raw(const std::string& text, const std::string& name) {
  Raw raw;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    size_t hash = t.find('#');
    if (hash != std::string::npos) t = trim(t.substr(0, hash));
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') {
        raw.errors.push_back(name + ":" + std::to_string(lineno) +
                             ": unterminated section header");
        continue;
      }
      section = trim(t.substr(1, t.size() - 2));
      if (section != "data" && section != "topology" && section != "train" &&
          section != "eval")
        raw.errors.push_back(name + ":" + std::to_string(lineno) +
                             ": unknown section [" + section + "]");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos) {
      raw.errors.push_back(name + ":" + std::to_string(lineno) +
                           ": expected 'key = value'");
      continue;
    }
    if (section.empty()) {
      raw.errors.push_back(name + ":" + std::to_string(lineno) +
                           ": key outside any section");
      continue;
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (raw.sections[section].count(key))
      raw.errors.push_back(name + ":" + std::to_string(lineno) + ": duplicate key '" +
                           key + "'");
    raw.sections[section][key] = {value, lineno, false};
  }
  return raw;
}

// typed readers; every failure lands in `errors` with line context
class Reader {
public:
  Reader(Raw& raw, const std::string& name) : raw_(raw), name_(name) {}

  bool has(const std::string& sec, const std::string& key) {
    auto s = raw_.sections.find(sec);
    return s != raw_.sections.end() && s->second.count(key);
  }

  template <typename F>
  void get(const std::string& sec, const std::string& key, F&& convert) {
    auto s = raw_.sections.find(sec);
    if (s == raw_.sections.end()) return;
    auto k = s->second.find(key);
    if (k == s->second.end()) return;
    k->second.used = true;
    try {
      convert(k->second.value);
    } catch (const std::exception& e) {
      raw_.errors.push_back(where(sec, key) + ": " + e.what());
    }
  }

  void check_unknown() {
    for (auto& [sec, keys] : raw_.sections)
      for (auto& [key, rk] : keys)
        if (!rk.used)
          raw_.errors.push_back(name_ + ":" + std::to_string(rk.line) +
                                ": unknown key '" + key + "' in [" + sec + "]");
  }

  void constraint(bool ok, const std::string& sec, const std::string& key,
                  const std::string& msg) {
    if (ok) return;
    if (has(sec, key))
      raw_.errors.push_back(where(sec, key) + ": " + msg);
    else
      raw_.errors.push_back(name_ + ": [" + sec + "] " + key + ": " + msg);
  }

private:
  std::string where(const std::string& sec, const std::string& key) {
    int line = raw_.sections[sec][key].line;
    return name_ + ":" + std::to_string(line) + ": [" + sec + "] " + key;
  }
  Raw& raw_;
  std::string name_;
};

double to_double(const std::string& v) {
  size_t pos = 0;
  double d = std::stod(v, &pos);
  if (pos != v.size()) throw std::runtime_error("expected a number, got '" + v + "'");
  return d;
}

long to_long(const std::string& v) {
  size_t pos = 0;
  long d = std::stol(v, &pos);
  if (pos != v.size()) throw std::runtime_error("expected an integer, got '" + v + "'");
  return d;
}

int to_int(const std::string& v) { return int(to_long(v)); }

uint64_t to_u64(const std::string& v) {
  size_t pos = 0;
  unsigned long long d = std::stoull(v, &pos);
  if (pos != v.size()) throw std::runtime_error("expected an integer, got '" + v + "'");
  return d;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::runtime_error("expected true/false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == ',' || c == ' ' || c == '\t') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

template <typename T, typename F>
std::array<T, 3> to_triple(const std::string& v, F&& conv) {
  auto parts = split_list(v);
  if (parts.size() == 1) {
    T x = T(conv(parts[0]));
    return {x, x, x};
  }
  if (parts.size() != 3) throw std::runtime_error("expected 1 or 3 values");
  return {T(conv(parts[0])), T(conv(parts[1])), T(conv(parts[2]))};
}

}  // namespace

model::TopologyConfig ExperimentConfig::cell_topology(const std::string& token,
                                                      double alpha) const {
  model::TopologyConfig t = model::TopologyConfig::from_name(token);
  t.base_width = topology.base_width;
  t.in_slices = topology.in_slices;
  t.classes = topology.classes;
  t.averaged_attention = topology.averaged_attention;
  t.instance_norm = topology.instance_norm;
  if (t.attention == model::Attention::none) t.alpha = alpha;
  return t;
}

ExperimentConfig parse_config_text(const std::string& text, const std::string& name) {
  Raw raw = parse_raw(text, name);
  Reader r(raw, name);
  ExperimentConfig cfg;

  // [data]
  DataConfig& d = cfg.data;
  r.get("data", "train_cases", [&](const std::string& v) { d.train_cases = to_int(v); });
  r.get("data", "val_cases", [&](const std::string& v) { d.val_cases = to_int(v); });
  r.get("data", "test_cases", [&](const std::string& v) { d.test_cases = to_int(v); });
  r.get("data", "dims", [&](const std::string& v) { d.dims = to_triple<int>(v, to_int); });
  r.get("data", "spacing",
        [&](const std::string& v) { d.spacing = to_triple<float>(v, to_double); });
  r.get("data", "radii_mm",
        [&](const std::string& v) { d.radii_mm = to_triple<float>(v, to_double); });
  r.get("data", "radii_jitter",
        [&](const std::string& v) { d.radii_jitter = to_double(v); });
  r.get("data", "center_jitter",
        [&](const std::string& v) { d.center_jitter = to_double(v); });
  r.get("data", "perturbation",
        [&](const std::string& v) { d.perturbation = to_double(v); });
  r.get("data", "contrast_delta",
        [&](const std::string& v) { d.contrast_delta = to_double(v); });
  r.get("data", "noise_sigma", [&](const std::string& v) { d.noise_sigma = to_double(v); });
  r.get("data", "blur_sigma", [&](const std::string& v) { d.blur_sigma = to_double(v); });
  r.get("data", "target_spacing",
        [&](const std::string& v) { d.target_spacing = to_triple<float>(v, to_double); });
  r.get("data", "body_threshold",
        [&](const std::string& v) { d.body_threshold = to_double(v); });
  r.get("data", "sigma", [&](const std::string& v) { d.sigma = to_double(v); });
  r.get("data", "truncation", [&](const std::string& v) { d.truncation = to_double(v); });
  r.get("data", "data_seed", [&](const std::string& v) { d.data_seed = to_u64(v); });

  // [topology]
  TopologyGridConfig& t = cfg.topology;
  r.get("topology", "topologies",
        [&](const std::string& v) { t.topologies = split_list(v); });
  r.get("topology", "alpha", [&](const std::string& v) {
    t.alphas.clear();
    for (const std::string& a : split_list(v)) t.alphas.push_back(to_double(a));
  });
  r.get("topology", "base_width",
        [&](const std::string& v) { t.base_width = to_int(v); });
  r.get("topology", "in_slices", [&](const std::string& v) { t.in_slices = to_int(v); });
  r.get("topology", "classes", [&](const std::string& v) { t.classes = to_int(v); });
  r.get("topology", "averaged_attention",
        [&](const std::string& v) { t.averaged_attention = to_bool(v); });
  r.get("topology", "instance_norm",
        [&](const std::string& v) { t.instance_norm = to_bool(v); });

  // [train]
  pipeline::TrainConfig& tr = cfg.train;
  r.get("train", "epochs", [&](const std::string& v) { tr.epochs = to_int(v); });
  r.get("train", "batch_size", [&](const std::string& v) { tr.batch_size = to_int(v); });
  r.get("train", "lr_start", [&](const std::string& v) { tr.lr_start = to_double(v); });
  r.get("train", "lr_end", [&](const std::string& v) { tr.lr_end = to_double(v); });
  r.get("train", "lr_step_iterations",
        [&](const std::string& v) { tr.lr_step_iterations = to_long(v); });
  r.get("train", "momentum", [&](const std::string& v) { tr.momentum = to_double(v); });
  r.get("train", "cold_start_epochs",
        [&](const std::string& v) { tr.cold_start_epochs = to_int(v); });
  r.get("train", "lambda1",
        [&](const std::string& v) { tr.weights.lambda1 = to_double(v); });
  r.get("train", "lambda2",
        [&](const std::string& v) { tr.weights.lambda2 = to_double(v); });
  r.get("train", "lambda3",
        [&](const std::string& v) { tr.weights.lambda3 = to_double(v); });
  r.get("train", "weight_decay",
        [&](const std::string& v) { tr.weights.weight_decay = to_double(v); });
  r.get("train", "seeds", [&](const std::string& v) {
    cfg.seeds.clear();
    for (const std::string& s : split_list(v)) cfg.seeds.push_back(to_u64(s));
  });
  r.get("train", "crop_size", [&](const std::string& v) { tr.crop_size = to_int(v); });
  r.get("train", "patch_size", [&](const std::string& v) { tr.patch_size = to_int(v); });
  r.get("train", "patches_per_volume",
        [&](const std::string& v) { tr.patches_per_volume = to_int(v); });
  r.get("train", "val_interval",
        [&](const std::string& v) { tr.val_interval = to_int(v); });
  r.get("train", "early_stop_train_dsc",
        [&](const std::string& v) { tr.early_stop_train_dsc = to_double(v); });
  r.get("train", "train_eval_interval",
        [&](const std::string& v) { tr.train_eval_interval = to_int(v); });
  r.get("train", "max_joint_steps",
        [&](const std::string& v) { tr.max_joint_steps = to_long(v); });
  r.get("train", "loc_steps", [&](const std::string& v) { tr.loc_steps = to_int(v); });
  r.get("train", "loc_width", [&](const std::string& v) { tr.loc_width = to_int(v); });

  // [eval]
  r.get("eval", "plots", [&](const std::string& v) { cfg.eval.plots = to_bool(v); });
  r.get("eval", "dump_heatmaps",
        [&](const std::string& v) { cfg.eval.dump_heatmaps = to_bool(v); });
  r.get("eval", "out_dir", [&](const std::string& v) { cfg.eval.out_dir = v; });

  r.check_unknown();

  // constraints (reported together with everything above)
  r.constraint(d.train_cases >= 1, "data", "train_cases", "must be >= 1");
  r.constraint(d.val_cases >= 0, "data", "val_cases", "must be >= 0");
  r.constraint(d.test_cases >= 0, "data", "test_cases", "must be >= 0");
  for (int dd : d.dims) r.constraint(dd >= 16, "data", "dims", "each dim must be >= 16");
  for (float s : d.spacing)
    r.constraint(s > 0.f, "data", "spacing", "must be positive");
  for (float s : d.target_spacing)
    r.constraint(s > 0.f, "data", "target_spacing", "must be positive");
  for (float rr : d.radii_mm)
    r.constraint(rr > 0.f, "data", "radii_mm", "must be positive");
  r.constraint(d.perturbation >= 0 && d.perturbation < 1, "data", "perturbation",
               "must be in [0,1)");
  r.constraint(d.radii_jitter >= 0 && d.radii_jitter < 1, "data", "radii_jitter",
               "must be in [0,1)");
  r.constraint(d.noise_sigma >= 0, "data", "noise_sigma", "must be >= 0");
  r.constraint(d.sigma > 0, "data", "sigma", "must be > 0");

  r.constraint(!t.topologies.empty(), "topology", "topologies", "must not be empty");
  for (const std::string& tok : t.topologies) {
    try {
      model::TopologyConfig::from_name(tok);
    } catch (const Error& e) {
      r.constraint(false, "topology", "topologies", e.what());
    }
  }
  for (double a : t.alphas)
    r.constraint(a > 0.0 && a < 1.0, "topology", "alpha",
                 "must be in the open interval (0,1)");
  r.constraint(!t.alphas.empty(), "topology", "alpha", "must not be empty");
  r.constraint(t.base_width >= 1, "topology", "base_width", "must be >= 1");
  r.constraint(t.in_slices >= 1 && t.in_slices % 2 == 1, "topology", "in_slices",
               "must be odd");

  r.constraint(tr.epochs >= 1, "train", "epochs", "must be >= 1");
  r.constraint(tr.batch_size >= 1, "train", "batch_size", "must be >= 1");
  r.constraint(tr.lr_start > 0 && tr.lr_end > 0, "train", "lr_start",
               "learning rates must be positive");
  r.constraint(tr.lr_end <= tr.lr_start, "train", "lr_end", "must be <= lr_start");
  r.constraint(tr.lr_step_iterations >= 1, "train", "lr_step_iterations", "must be >= 1");
  r.constraint(tr.momentum >= 0 && tr.momentum < 1, "train", "momentum",
               "must be in [0,1)");
  r.constraint(tr.cold_start_epochs >= 0 && tr.cold_start_epochs < tr.epochs, "train",
               "cold_start_epochs", "must be < epochs");
  r.constraint(tr.crop_size >= 8 && tr.crop_size % 8 == 0, "train", "crop_size",
               "must be a positive multiple of 8");
  r.constraint(tr.patch_size >= 8 && tr.patch_size % 8 == 0 &&
                   tr.patch_size <= tr.crop_size,
               "train", "patch_size", "must be a multiple of 8 and fit the crop");
  r.constraint(tr.crop_size <= d.dims[0] && tr.crop_size <= d.dims[1] &&
                   tr.crop_size <= d.dims[2],
               "train", "crop_size", "must fit the training volumes");
  r.constraint(!cfg.seeds.empty(), "train", "seeds", "must not be empty");

  if (!raw.errors.empty()) throw ConfigErrors(raw.errors);
  if (d.truncation <= 0) d.truncation = d.sigma;
  tr.slices = t.in_slices;
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

template <typename T>
std::string triple(const std::array<T, 3>& a) {
  return fmt(double(a[0])) + " " + fmt(double(a[1])) + " " + fmt(double(a[2]));
}

}  // namespace

std::string serialize(const ExperimentConfig& cfg) {
  std::ostringstream os;
  const DataConfig& d = cfg.data;
  os << "[data]\n";
  os << "train_cases = " << d.train_cases << "\n";
  os << "val_cases = " << d.val_cases << "\n";
  os << "test_cases = " << d.test_cases << "\n";
  os << "dims = " << d.dims[0] << " " << d.dims[1] << " " << d.dims[2] << "\n";
  os << "spacing = " << triple(d.spacing) << "\n";
  os << "radii_mm = " << triple(d.radii_mm) << "\n";
  os << "radii_jitter = " << fmt(d.radii_jitter) << "\n";
  os << "center_jitter = " << fmt(d.center_jitter) << "\n";
  os << "perturbation = " << fmt(d.perturbation) << "\n";
  os << "contrast_delta = " << fmt(d.contrast_delta) << "\n";
  os << "noise_sigma = " << fmt(d.noise_sigma) << "\n";
  os << "blur_sigma = " << fmt(d.blur_sigma) << "\n";
  os << "target_spacing = " << triple(d.target_spacing) << "\n";
  os << "body_threshold = " << fmt(d.body_threshold) << "\n";
  os << "sigma = " << fmt(d.sigma) << "\n";
  os << "truncation = " << fmt(d.truncation) << "\n";
  os << "data_seed = " << d.data_seed << "\n";

  const TopologyGridConfig& t = cfg.topology;
  os << "\n[topology]\n";
  os << "topologies = ";
  for (size_t i = 0; i < t.topologies.size(); ++i)
    os << (i ? ", " : "") << t.topologies[i];
  os << "\n";
  os << "alpha = ";
  for (size_t i = 0; i < t.alphas.size(); ++i) os << (i ? ", " : "") << fmt(t.alphas[i]);
  os << "\n";
  os << "base_width = " << t.base_width << "\n";
  os << "in_slices = " << t.in_slices << "\n";
  os << "classes = " << t.classes << "\n";
  os << "averaged_attention = " << (t.averaged_attention ? "true" : "false") << "\n";
  os << "instance_norm = " << (t.instance_norm ? "true" : "false") << "\n";

  const pipeline::TrainConfig& tr = cfg.train;
  os << "\n[train]\n";
  os << "epochs = " << tr.epochs << "\n";
  os << "batch_size = " << tr.batch_size << "\n";
  os << "lr_start = " << fmt(tr.lr_start) << "\n";
  os << "lr_end = " << fmt(tr.lr_end) << "\n";
  os << "lr_step_iterations = " << tr.lr_step_iterations << "\n";
  os << "momentum = " << fmt(tr.momentum) << "\n";
  os << "cold_start_epochs = " << tr.cold_start_epochs << "\n";
  os << "lambda1 = " << fmt(tr.weights.lambda1) << "\n";
  os << "lambda2 = " << fmt(tr.weights.lambda2) << "\n";
  os << "lambda3 = " << fmt(tr.weights.lambda3) << "\n";
  os << "weight_decay = " << fmt(tr.weights.weight_decay) << "\n";
  os << "seeds = ";
  for (size_t i = 0; i < cfg.seeds.size(); ++i) os << (i ? ", " : "") << cfg.seeds[i];
  os << "\n";
  os << "crop_size = " << tr.crop_size << "\n";
  os << "patch_size = " << tr.patch_size << "\n";
  os << "patches_per_volume = " << tr.patches_per_volume << "\n";
  os << "val_interval = " << tr.val_interval << "\n";
  os << "early_stop_train_dsc = " << fmt(tr.early_stop_train_dsc) << "\n";
  os << "train_eval_interval = " << tr.train_eval_interval << "\n";
  os << "max_joint_steps = " << tr.max_joint_steps << "\n";
  os << "loc_steps = " << tr.loc_steps << "\n";
  os << "loc_width = " << tr.loc_width << "\n";

  os << "\n[eval]\n";
  os << "plots = " << (cfg.eval.plots ? "true" : "false") << "\n";
  os << "dump_heatmaps = " << (cfg.eval.dump_heatmaps ? "true" : "false") << "\n";
  os << "out_dir = " << cfg.eval.out_dir << "\n";
  return os.str();
}

}  // namespace hf::config

// Copyright (c) 2026 sparw authors
// SPDX-License-Identifier: Apache-2.0

#include "sparw/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sparw {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_text(const std::string& text) {
  KeyValueConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) +
                               ": empty key");
    cfg.values_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_text(buf.str());
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  values_[trim(key)] = trim(value);
}

bool KeyValueConfig::has(const std::string& key) const {
  return values_.count(key) > 0;
}

std::string KeyValueConfig::get_string(const std::string& key,
                                       const std::string& def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  return it == values_.end() ? def : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(it->second, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": expected number, got '" +
                             it->second + "'");
  }
  if (pos != it->second.size())
    throw std::runtime_error("config key " + key + ": trailing characters in '" +
                             it->second + "'");
  return v;
}

int KeyValueConfig::get_int(const std::string& key, int def) const {
  const double v = get_double(key, static_cast<double>(def));
  const int i = static_cast<int>(v);
  if (static_cast<double>(i) != v)
    throw std::runtime_error("config key " + key + ": expected integer");
  return i;
}

std::int64_t KeyValueConfig::get_int64(const std::string& key,
                                       std::int64_t def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    return std::stoll(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key + ": expected integer, got '" +
                             it->second + "'");
  }
}

std::uint64_t KeyValueConfig::get_uint64(const std::string& key,
                                         std::uint64_t def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  try {
    return std::stoull(it->second);
  } catch (const std::exception&) {
    throw std::runtime_error("config key " + key +
                             ": expected unsigned integer, got '" + it->second +
                             "'");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  const std::string& v = it->second;
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::runtime_error("config key " + key +
                           ": expected on/off/true/false/1/0, got '" + v + "'");
}

std::vector<int> KeyValueConfig::get_int_list(
    const std::string& key, const std::vector<int>& def) const {
  consumed_.insert(key);
  const auto it = values_.find(key);
  if (it == values_.end()) return def;
  std::vector<int> out;
  std::istringstream in(it->second);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::runtime_error("config key " + key +
                               ": expected comma-separated integers");
    }
  }
  return out;
}

std::vector<std::string> KeyValueConfig::unconsumed() const {
  std::vector<std::string> out;
  for (const auto& [key, value] : values_)
    if (!consumed_.count(key)) out.push_back(key);
  return out;
}

// Experiment config -----------------------------------------------------------

Method method_from_string(const std::string& s) {
  if (s == "dense-at") return Method::dense_at;
  if (s == "small-dense") return Method::small_dense;
  if (s == "random-prune") return Method::random_prune;
  if (s == "omp") return Method::omp;
  if (s == "snip") return Method::snip;
  if (s == "igq-static") return Method::igq_static;
  if (s == "robust-bird") return Method::robust_bird;
  if (s == "flying-bird") return Method::flying_bird;
  if (s == "flying-bird+") return Method::flying_bird_plus;
  throw std::invalid_argument("unknown method: " + s);
}

std::string to_string(Method m) {
  switch (m) {
    case Method::dense_at: return "dense-at";
    case Method::small_dense: return "small-dense";
    case Method::random_prune: return "random-prune";
    case Method::omp: return "omp";
    case Method::snip: return "snip";
    case Method::igq_static: return "igq-static";
    case Method::robust_bird: return "robust-bird";
    case Method::flying_bird: return "flying-bird";
    case Method::flying_bird_plus: return "flying-bird+";
  }
  return "?";
}

bool is_sparse_method(Method m) {
  switch (m) {
    case Method::dense_at:
    case Method::small_dense:
      return false;
    default:
      return true;
  }
}

ExperimentConfig experiment_config_from(const KeyValueConfig& kv) {
  ExperimentConfig cfg;

  cfg.seed = kv.get_uint64("seed", 1);
  cfg.precision = kv.get_string("precision", "f32");
  if (cfg.precision != "f32" && cfg.precision != "f64")
    throw std::runtime_error("precision must be f32 or f64");
  cfg.out_dir = kv.get_string("out.dir", "out");
  cfg.wall_time = kv.get_bool("metrics.wall_time", false);
  cfg.resume = kv.get_bool("resume", false);
  cfg.stop_after_epochs = kv.get_int("train.stop_after_epochs", 0);

  cfg.data.name = kv.get_string("data.name", "cifar10");
  cfg.data.path = kv.get_string("data.path", "");
  cfg.data.train_subset = kv.get_int64("data.train_subset", 0);
  cfg.data.val_count = kv.get_int64("data.val_count", 0);
  cfg.data.test_subset = kv.get_int64("data.test_subset", 0);
  cfg.data.train_ra_subset = kv.get_int64("data.train_ra_subset", 1000);
  cfg.data.blob_classes = kv.get_int("data.blob_classes", 10);
  cfg.data.blob_per_class = kv.get_int64("data.blob_per_class", 64);
  cfg.data.blob_dims = kv.get_int_list("data.blob_dims", {3, 8, 8});

  cfg.model_preset = kv.get_string("model.preset", "mini-vgg");
  cfg.model_widths = kv.get_int_list("model.widths", {});
  cfg.width_scale = kv.get_double("model.width_scale", 1.0);

  cfg.method = method_from_string(kv.get_string("method.name", "dense-at"));
  cfg.sparsity = kv.get_double("method.sparsity", 0.8);
  cfg.allocator = kv.get_string("method.allocator",
                                cfg.method == Method::random_prune ? "uniform"
                                                                   : "igq");

  cfg.train.epochs = kv.get_int("train.epochs", 200);
  cfg.train.batch_size = kv.get_int("train.batch_size", 128);
  cfg.train.lr0 = kv.get_double("train.lr0", 0.1);
  // Default milestones sit at 50% and 75% of the schedule (100/150 for the
  // 200-epoch default); schedules too short to host two distinct decay
  // points default to none.
  std::vector<int> default_milestones;
  if (cfg.train.epochs >= 4)
    default_milestones = {cfg.train.epochs / 2, cfg.train.epochs * 3 / 4};
  cfg.train.milestones =
      kv.get_int_list("train.milestones", default_milestones);
  cfg.train.lr_decay = kv.get_double("train.lr_decay", 0.1);
  cfg.train.momentum = kv.get_double("train.momentum", 0.9);
  cfg.train.weight_decay = kv.get_double("train.weight_decay", 5e-4);
  const std::string sched = kv.get_string("train.schedule", "multistep");
  if (sched == "multistep")
    cfg.train.schedule = LrScheduleKind::multistep;
  else if (sched == "cyclic")
    cfg.train.schedule = LrScheduleKind::cyclic;
  else
    throw std::runtime_error("train.schedule must be multistep or cyclic");
  cfg.train.cyclic_max_lr = kv.get_double("train.cyclic_max_lr", 0.2);
  cfg.train.augment.enabled = kv.get_bool("train.augment", true);
  cfg.train.adversarial = kv.get_bool("train.adversarial", true);
  cfg.train.seed = cfg.seed;

  const double eps = kv.get_double("attack.eps", 8.0 / 255.0);
  const double alpha = kv.get_double("attack.alpha", 2.0 / 255.0);
  const bool rs = kv.get_bool("attack.random_start", true);
  cfg.train.train_attack = {eps, alpha, kv.get_int("attack.train_steps", 10),
                            rs};
  cfg.train.eval_attack = {eps, alpha, kv.get_int("attack.eval_steps", 20),
                           rs};

  cfg.rb.sparsity = cfg.sparsity;
  cfg.rb.tau = kv.get_double("rb.tau", 0.1);
  cfg.rb.queue_len = kv.get_int("rb.queue_len", 5);
  cfg.rb.max_epochs = kv.get_int("rb.max_epochs", cfg.train.epochs);
  cfg.rb.regime = rb_regime_from_string(kv.get_string("rb.regime", "pgd-at"));

  cfg.fb.sparsity = cfg.sparsity;
  cfg.fb.delta_t = kv.get_int64("fb.delta_t", 2000);
  cfg.fb.k0 = kv.get_double("fb.k0", 0.5);
  cfg.fb.adaptive = cfg.method == Method::flying_bird_plus;
  cfg.fb.queue_len = kv.get_int("fb.queue_len", 5);
  cfg.fb.freq_threshold = kv.get_double("fb.freq_threshold", 0.6);
  cfg.fb.prune_boost = kv.get_double("fb.prune_boost", 0.004);
  cfg.fb.grow_boost = kv.get_double("fb.grow_boost", 0.0005);
  cfg.fb.t_start = kv.get_int("fb.t_start", 50);
  cfg.fb.allocator = cfg.allocator;

  cfg.loss_surface_n = kv.get_int("surface.n", 0);
  cfg.loss_surface_radius = kv.get_double("surface.radius", 1.0);
  cfg.loss_surface_samples = kv.get_int64("surface.samples", 128);

  const auto unknown = kv.unconsumed();
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw std::runtime_error(msg);
  }

  validate(cfg.train);
  if (!(cfg.sparsity >= 0.0) || cfg.sparsity >= 1.0)
    throw std::runtime_error("method.sparsity outside [0,1)");
  if (cfg.method == Method::robust_bird) validate(cfg.rb);
  if (cfg.method == Method::flying_bird ||
      cfg.method == Method::flying_bird_plus)
    validate(cfg.fb);
  if (cfg.allocator != "uniform" && cfg.allocator != "erk" &&
      cfg.allocator != "igq" && cfg.allocator != "snip")
    throw std::runtime_error("method.allocator must be uniform|erk|igq|snip");
  if (!(cfg.width_scale > 0.0))
    throw std::runtime_error("model.width_scale must be > 0");
  if (cfg.loss_surface_n < 0)
    throw std::runtime_error("surface.n must be >= 0");
  return cfg;
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string render_config(const ExperimentConfig& cfg) {
  std::string s;
  auto kv = [&s](const std::string& k, const std::string& v) {
    s += k + " = " + v + "\n";
  };
  kv("seed", std::to_string(cfg.seed));
  kv("precision", cfg.precision);
  kv("out.dir", cfg.out_dir);
  kv("metrics.wall_time", cfg.wall_time ? "on" : "off");
  kv("resume", cfg.resume ? "on" : "off");
  kv("train.stop_after_epochs", std::to_string(cfg.stop_after_epochs));
  kv("data.name", cfg.data.name);
  kv("data.path", cfg.data.path);
  kv("data.train_subset", std::to_string(cfg.data.train_subset));
  kv("data.val_count", std::to_string(cfg.data.val_count));
  kv("data.test_subset", std::to_string(cfg.data.test_subset));
  kv("data.train_ra_subset", std::to_string(cfg.data.train_ra_subset));
  kv("data.blob_classes", std::to_string(cfg.data.blob_classes));
  kv("data.blob_per_class", std::to_string(cfg.data.blob_per_class));
  {
    std::string dims;
    for (std::size_t i = 0; i < cfg.data.blob_dims.size(); ++i)
      dims += (i ? "," : "") + std::to_string(cfg.data.blob_dims[i]);
    kv("data.blob_dims", dims);
  }
  kv("model.preset", cfg.model_preset);
  {
    std::string ws;
    for (std::size_t i = 0; i < cfg.model_widths.size(); ++i)
      ws += (i ? "," : "") + std::to_string(cfg.model_widths[i]);
    kv("model.widths", ws);
  }
  kv("model.width_scale", fmt_double(cfg.width_scale));
  kv("method.name", to_string(cfg.method));
  kv("method.sparsity", fmt_double(cfg.sparsity));
  kv("method.allocator", cfg.allocator);
  kv("train.epochs", std::to_string(cfg.train.epochs));
  kv("train.batch_size", std::to_string(cfg.train.batch_size));
  kv("train.lr0", fmt_double(cfg.train.lr0));
  {
    std::string ms;
    for (std::size_t i = 0; i < cfg.train.milestones.size(); ++i)
      ms += (i ? "," : "") + std::to_string(cfg.train.milestones[i]);
    kv("train.milestones", ms);
  }
  kv("train.lr_decay", fmt_double(cfg.train.lr_decay));
  kv("train.momentum", fmt_double(cfg.train.momentum));
  kv("train.weight_decay", fmt_double(cfg.train.weight_decay));
  kv("train.schedule",
     cfg.train.schedule == LrScheduleKind::multistep ? "multistep" : "cyclic");
  kv("train.cyclic_max_lr", fmt_double(cfg.train.cyclic_max_lr));
  kv("train.augment", cfg.train.augment.enabled ? "on" : "off");
  kv("train.adversarial", cfg.train.adversarial ? "on" : "off");
  kv("attack.eps", fmt_double(cfg.train.train_attack.epsilon));
  kv("attack.alpha", fmt_double(cfg.train.train_attack.alpha));
  kv("attack.train_steps", std::to_string(cfg.train.train_attack.steps));
  kv("attack.eval_steps", std::to_string(cfg.train.eval_attack.steps));
  kv("attack.random_start",
     cfg.train.train_attack.random_start ? "on" : "off");
  kv("rb.tau", fmt_double(cfg.rb.tau));
  kv("rb.queue_len", std::to_string(cfg.rb.queue_len));
  kv("rb.max_epochs", std::to_string(cfg.rb.max_epochs));
  kv("rb.regime", to_string(cfg.rb.regime));
  kv("fb.delta_t", std::to_string(cfg.fb.delta_t));
  kv("fb.k0", fmt_double(cfg.fb.k0));
  kv("fb.queue_len", std::to_string(cfg.fb.queue_len));
  kv("fb.freq_threshold", fmt_double(cfg.fb.freq_threshold));
  kv("fb.prune_boost", fmt_double(cfg.fb.prune_boost));
  kv("fb.grow_boost", fmt_double(cfg.fb.grow_boost));
  kv("fb.t_start", std::to_string(cfg.fb.t_start));
  kv("surface.n", std::to_string(cfg.loss_surface_n));
  kv("surface.radius", fmt_double(cfg.loss_surface_radius));
  kv("surface.samples", std::to_string(cfg.loss_surface_samples));
  return s;
}

}  // namespace sparw

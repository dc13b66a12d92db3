#pragma once

// Flat plain-text run configuration: one `key = value` per line, `#` starts
// a comment. Unknown keys are hard errors so typos cannot silently fall back
// to defaults. Environment variables of the form T2DIFF_<KEY> override the
// file. config_echo() renders the canonical form that gets hashed into run
// directory names.

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <map>
#include <sstream>
#include <string>

#include "t2diff/model.hpp"
#include "t2diff/rng.hpp"

namespace t2diff {

struct TrainConfig {
  int d = 64;
  int max_len = 50;
  int k_max = 10;
  std::int64_t gap_seconds = 1800;
  int min_count = 5;

  int batch = 256;
  int epochs = 100;
  int patience = 5;  // early-stop epochs without validation improvement
  int early_k = 20;  // validation recall cutoff
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lambda = 1.0;  // weight of the reconstruction loss
  int negatives = 0;    // 0 = full softmax, else sampled scope size

  double sched_a = 1e-4;
  double sched_b = default_schedule_b();
  int sched_steps = 50;
  BetaKind sched_kind = BetaKind::exponential;

  int enc_layers = 1;
  int enc_heads = 2;
  int act_hidden = 64;
  int out_hidden = 128;

  std::uint64_t seed = 42;
  bool filter_seen = false;
  Ablation ablation = Ablation::full;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double parse_num(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw config_error("config key '" + key + "': not a number: '" + v + "'");
  }
}

inline std::int64_t parse_int(const std::string& key, const std::string& v) {
  const double x = parse_num(key, v);
  const std::int64_t i = (std::int64_t)x;
  if ((double)i != x) throw config_error("config key '" + key + "': not an integer: '" + v + "'");
  return i;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw config_error("config key '" + key + "': not a boolean: '" + v + "'");
}

}  // namespace detail

inline void apply_config_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_int;
  using detail::parse_num;
  if (key == "d") cfg.d = (int)parse_int(key, value);
  else if (key == "max_len") cfg.max_len = (int)parse_int(key, value);
  else if (key == "k_max") cfg.k_max = (int)parse_int(key, value);
  else if (key == "gap_seconds") cfg.gap_seconds = parse_int(key, value);
  else if (key == "min_count") cfg.min_count = (int)parse_int(key, value);
  else if (key == "batch") cfg.batch = (int)parse_int(key, value);
  else if (key == "epochs") cfg.epochs = (int)parse_int(key, value);
  else if (key == "patience") cfg.patience = (int)parse_int(key, value);
  else if (key == "early_k") cfg.early_k = (int)parse_int(key, value);
  else if (key == "lr") cfg.lr = parse_num(key, value);
  else if (key == "adam_beta1") cfg.adam_beta1 = parse_num(key, value);
  else if (key == "adam_beta2") cfg.adam_beta2 = parse_num(key, value);
  else if (key == "adam_eps") cfg.adam_eps = parse_num(key, value);
  else if (key == "lambda") cfg.lambda = parse_num(key, value);
  else if (key == "negatives") cfg.negatives = (int)parse_int(key, value);
  else if (key == "sched_a") cfg.sched_a = parse_num(key, value);
  else if (key == "sched_b") cfg.sched_b = parse_num(key, value);
  else if (key == "sched_steps") cfg.sched_steps = (int)parse_int(key, value);
  else if (key == "sched_kind") cfg.sched_kind = beta_kind_from(value);
  else if (key == "enc_layers") cfg.enc_layers = (int)parse_int(key, value);
  else if (key == "enc_heads") cfg.enc_heads = (int)parse_int(key, value);
  else if (key == "act_hidden") cfg.act_hidden = (int)parse_int(key, value);
  else if (key == "out_hidden") cfg.out_hidden = (int)parse_int(key, value);
  else if (key == "seed") cfg.seed = (std::uint64_t)parse_int(key, value);
  else if (key == "filter_seen") cfg.filter_seen = parse_bool(key, value);
  else if (key == "ablation") cfg.ablation = ablation_from(value);
  else throw config_error("unknown config key '" + key + "'");
}

inline TrainConfig parse_config(std::istream& in) {
  TrainConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = detail::trim(line);
    if (body.empty()) continue;
    const std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw config_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    if (key.empty() || value.empty())
      throw config_error("config line " + std::to_string(line_no) + ": empty key or value");
    apply_config_key(cfg, key, value);
  }
  return cfg;
}

inline TrainConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

// Environment overrides: T2DIFF_LR=0.01 wins over the file's `lr` line.
inline void apply_env_overrides(TrainConfig& cfg) {
  static const char* keys[] = {
      "d",          "max_len",    "k_max",      "gap_seconds", "min_count",  "batch",
      "epochs",     "patience",   "early_k",    "lr",          "adam_beta1", "adam_beta2",
      "adam_eps",   "lambda",     "negatives",  "sched_a",     "sched_b",    "sched_steps",
      "sched_kind", "enc_layers", "enc_heads",  "act_hidden",  "out_hidden", "seed",
      "filter_seen", "ablation"};
  for (const char* key : keys) {
    std::string env = "T2DIFF_";
    for (const char* p = key; *p; ++p) env += (char)std::toupper((unsigned char)*p);
    if (const char* v = std::getenv(env.c_str())) apply_config_key(cfg, key, v);
  }
}

// Canonical rendering: fixed key order, full precision. Hashing this string
// names the run.
inline std::string config_echo(const TrainConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "ablation = " << ablation_name(cfg.ablation) << "\n"
     << "act_hidden = " << cfg.act_hidden << "\n"
     << "adam_beta1 = " << cfg.adam_beta1 << "\n"
     << "adam_beta2 = " << cfg.adam_beta2 << "\n"
     << "adam_eps = " << cfg.adam_eps << "\n"
     << "batch = " << cfg.batch << "\n"
     << "d = " << cfg.d << "\n"
     << "early_k = " << cfg.early_k << "\n"
     << "enc_heads = " << cfg.enc_heads << "\n"
     << "enc_layers = " << cfg.enc_layers << "\n"
     << "epochs = " << cfg.epochs << "\n"
     << "filter_seen = " << (cfg.filter_seen ? "true" : "false") << "\n"
     << "gap_seconds = " << cfg.gap_seconds << "\n"
     << "k_max = " << cfg.k_max << "\n"
     << "lambda = " << cfg.lambda << "\n"
     << "lr = " << cfg.lr << "\n"
     << "max_len = " << cfg.max_len << "\n"
     << "min_count = " << cfg.min_count << "\n"
     << "negatives = " << cfg.negatives << "\n"
     << "out_hidden = " << cfg.out_hidden << "\n"
     << "patience = " << cfg.patience << "\n"
     << "sched_a = " << cfg.sched_a << "\n"
     << "sched_b = " << cfg.sched_b << "\n"
     << "sched_kind = " << beta_kind_name(cfg.sched_kind) << "\n"
     << "sched_steps = " << cfg.sched_steps << "\n"
     << "seed = " << cfg.seed << "\n";
  return os.str();
}

inline std::string config_hash(const TrainConfig& cfg) {
  const std::string echo = config_echo(cfg);
  const std::uint64_t h = detail::fnv1a64(echo);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

inline ModelConfig model_config_of(const TrainConfig& cfg, int item_count) {
  ModelConfig mc;
  mc.d = cfg.d;
  mc.max_len = cfg.max_len;
  mc.k_max = cfg.k_max;
  mc.enc_layers = cfg.enc_layers;
  mc.enc_heads = cfg.enc_heads;
  mc.act_hidden = cfg.act_hidden;
  mc.out_hidden = cfg.out_hidden;
  mc.item_count = item_count;
  mc.sched_a = cfg.sched_a;
  mc.sched_b = cfg.sched_b;
  mc.sched_steps = cfg.sched_steps;
  mc.sched_kind = cfg.sched_kind;
  mc.ablation = cfg.ablation;
  return mc;
}

}  // namespace t2diff

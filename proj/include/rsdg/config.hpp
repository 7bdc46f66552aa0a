#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rsdg/error.hpp"

namespace rsdg {

// Flat typed key-value configuration with [section] headers. Unknown
// sections or keys are errors; values are type-checked on parse.
struct ExperimentConfig {
  // [run]
  std::uint64_t seed = 1;
  int repetitions = 1;

  // [corpus]
  int vocab_size = 4;
  int train_per_class = 24;
  int eval_utterances = 50;
  int min_tokens = 3;
  int max_tokens = 3;

  // [victim]
  int victim_hidden = 32;
  int victim_max_epochs = 60;
  double victim_lr = 3e-3;
  double victim_target_accuracy = 0.95;

  // [gan]
  int gan_batch_size = 48;
  int gan_total_iters = 1200;
  int gan_critic_steps = 1;
  double gan_lr_gen = 1e-3;
  double gan_lr_critic = 1e-3;
  double gan_eta = 1.0;
  double gan_rho = 10.0;
  int gan_eigen_dim = 16;
  int gan_latent_dim = 16;
  int gan_hidden = 96;
  bool gan_train_ablation = true;
  int gan_bank_filters = 8;
  double gan_bank_rt60_lo = 0.1;
  double gan_bank_rt60_hi = 0.4;

  // [attack]
  double attack_eps_db = -15.0;
  int attack_max_iters = 3000;
  double attack_lr = 2e-3;
  int attack_samples = 50;
  int attack_n_targets = 1;
  int eot_n_mc = 4;
  double eot_noise_sigma = 0.001;
  double eot_alpha = 0.05;
  bool attack_run_eot = true;

  // [defense]
  int defense_restarts = 2;
  int defense_steps = 80;
  double defense_lr = 0.05;
  std::string defense_distance = "spectrogram";  // or "mfcc"
  bool defense_use_ablation = false;

  // [report]
  bool report_include_reference = true;
};

namespace config_detail {

enum class FieldType { kU64, kInt, kDouble, kBool, kString };

struct FieldDesc {
  FieldType type;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline const std::map<std::string, FieldDesc>& schema() {
  static const std::map<std::string, FieldDesc> s = [] {
    std::map<std::string, FieldDesc> m;
    auto add_u64 = [&m](const std::string& key, std::uint64_t ExperimentConfig::* field) {
      m[key] = {FieldType::kU64,
                [field](ExperimentConfig& c, const std::string& v) {
                  c.*field = std::stoull(v);
                },
                [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
    };
    auto add_int = [&m](const std::string& key, int ExperimentConfig::* field) {
      m[key] = {FieldType::kInt,
                [field](ExperimentConfig& c, const std::string& v) { c.*field = std::stoi(v); },
                [field](const ExperimentConfig& c) { return std::to_string(c.*field); }};
    };
    auto add_double = [&m](const std::string& key, double ExperimentConfig::* field) {
      m[key] = {FieldType::kDouble,
                [field](ExperimentConfig& c, const std::string& v) { c.*field = std::stod(v); },
                [field](const ExperimentConfig& c) { return format_double(c.*field); }};
    };
    auto add_bool = [&m](const std::string& key, bool ExperimentConfig::* field) {
      m[key] = {FieldType::kBool,
                [field](ExperimentConfig& c, const std::string& v) {
                  if (v == "true" || v == "1")
                    c.*field = true;
                  else if (v == "false" || v == "0")
                    c.*field = false;
                  else
                    throw Error("expected bool, got: " + v);
                },
                [field](const ExperimentConfig& c) { return c.*field ? "true" : "false"; }};
    };
    auto add_string = [&m](const std::string& key, std::string ExperimentConfig::* field) {
      m[key] = {FieldType::kString,
                [field](ExperimentConfig& c, const std::string& v) { c.*field = v; },
                [field](const ExperimentConfig& c) { return c.*field; }};
    };

    add_u64("run.seed", &ExperimentConfig::seed);
    add_int("run.repetitions", &ExperimentConfig::repetitions);

    add_int("corpus.vocab_size", &ExperimentConfig::vocab_size);
    add_int("corpus.train_per_class", &ExperimentConfig::train_per_class);
    add_int("corpus.eval_utterances", &ExperimentConfig::eval_utterances);
    add_int("corpus.min_tokens", &ExperimentConfig::min_tokens);
    add_int("corpus.max_tokens", &ExperimentConfig::max_tokens);

    add_int("victim.hidden", &ExperimentConfig::victim_hidden);
    add_int("victim.max_epochs", &ExperimentConfig::victim_max_epochs);
    add_double("victim.lr", &ExperimentConfig::victim_lr);
    add_double("victim.target_accuracy", &ExperimentConfig::victim_target_accuracy);

    add_int("gan.batch_size", &ExperimentConfig::gan_batch_size);
    add_int("gan.total_iters", &ExperimentConfig::gan_total_iters);
    add_int("gan.critic_steps", &ExperimentConfig::gan_critic_steps);
    add_double("gan.lr_gen", &ExperimentConfig::gan_lr_gen);
    add_double("gan.lr_critic", &ExperimentConfig::gan_lr_critic);
    add_double("gan.eta", &ExperimentConfig::gan_eta);
    add_double("gan.rho", &ExperimentConfig::gan_rho);
    add_int("gan.eigen_dim", &ExperimentConfig::gan_eigen_dim);
    add_int("gan.latent_dim", &ExperimentConfig::gan_latent_dim);
    add_int("gan.hidden", &ExperimentConfig::gan_hidden);
    add_bool("gan.train_ablation", &ExperimentConfig::gan_train_ablation);
    add_int("gan.bank_filters", &ExperimentConfig::gan_bank_filters);
    add_double("gan.bank_rt60_lo", &ExperimentConfig::gan_bank_rt60_lo);
    add_double("gan.bank_rt60_hi", &ExperimentConfig::gan_bank_rt60_hi);

    add_double("attack.eps_db", &ExperimentConfig::attack_eps_db);
    add_int("attack.max_iters", &ExperimentConfig::attack_max_iters);
    add_double("attack.lr", &ExperimentConfig::attack_lr);
    add_int("attack.samples", &ExperimentConfig::attack_samples);
    add_int("attack.n_targets", &ExperimentConfig::attack_n_targets);
    add_int("attack.eot_n_mc", &ExperimentConfig::eot_n_mc);
    add_double("attack.eot_noise_sigma", &ExperimentConfig::eot_noise_sigma);
    add_double("attack.eot_alpha", &ExperimentConfig::eot_alpha);
    add_bool("attack.run_eot", &ExperimentConfig::attack_run_eot);

    add_int("defense.restarts", &ExperimentConfig::defense_restarts);
    add_int("defense.steps", &ExperimentConfig::defense_steps);
    add_double("defense.lr", &ExperimentConfig::defense_lr);
    add_string("defense.distance", &ExperimentConfig::defense_distance);
    add_bool("defense.use_ablation", &ExperimentConfig::defense_use_ablation);

    add_bool("report.include_reference", &ExperimentConfig::report_include_reference);
    return m;
  }();
  return s;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace config_detail

inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = config_detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = config_detail::trim(t.substr(1, t.size() - 2));
      require(!section.empty(), "config: empty section at line " + std::to_string(line_no));
      continue;
    }
    const auto eq = t.find('=');
    require(eq != std::string::npos, "config: expected key = value at line " +
                                         std::to_string(line_no) + ": " + t);
    const std::string key = config_detail::trim(t.substr(0, eq));
    const std::string value = config_detail::trim(t.substr(eq + 1));
    require(!section.empty(), "config: key outside any section at line " + std::to_string(line_no));
    const std::string full = section + "." + key;
    const auto it = config_detail::schema().find(full);
    require(it != config_detail::schema().end(), "config: unknown key: " + full);
    try {
      it->second.set(cfg, value);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("config: bad value for " + full + ": " + value + " (" + e.what() + ")");
    }
  }
  require(cfg.repetitions >= 1, "config: run.repetitions must be >= 1");
  require(cfg.defense_distance == "mfcc" || cfg.defense_distance == "spectrogram",
          "config: defense.distance must be mfcc or spectrogram");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "config: cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

// Canonical text: every schema key with its current value, sorted. The
// artifact hash is computed over this form, so defaults participate.
inline std::string canonical_config_text(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& [key, desc] : config_detail::schema())
    out += key + "=" + desc.get(cfg) + "\n";
  return out;
}

inline std::string config_hash(const ExperimentConfig& cfg) {
  const std::string text = canonical_config_text(cfg);
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rsdg

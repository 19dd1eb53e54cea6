#pragma once

// Experiment configuration: flat `key = value` lines with dotted section
// prefixes, '#' comments. See README for the full key list.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedfair/csv.hpp"
#include "fedfair/datagen.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/flcore.hpp"
#include "fedfair/numkit.hpp"

namespace fedfair {

struct PostFlConfig {
  bool enabled = true;
  std::size_t epochs = 100;
  double delta = 0.05;
  std::size_t eval_every = 1;

  friend bool operator==(const PostFlConfig&, const PostFlConfig&) = default;
};

struct ExperimentConfig {
  SyntheticConfig data;
  std::optional<std::string> data_path;  // load this CSV instead of generating
  ModelSpec model;
  FlConfig fl;  // fl.strategy and fl.seed are overwritten per run
  PostFlConfig post_fl;
  std::vector<Strategy> strategies;
  std::vector<std::uint64_t> seeds{0};
  bool scaling_study = false;  // adds fixed m in {2,3,4} and auto with M in {2,3,4}
  std::string output_dir = "out";

  void validate() const {
    if (data_path) {
      if (data_path->empty()) throw ValidationError("data.path must not be empty");
    } else {
      data.validate();
      if (model.input_dim != data.feature_dim) throw ValidationError("model.input_dim must equal data.feature_dim");
      if (model.num_classes != data.num_classes) throw ValidationError("model.num_classes must equal data.num_classes");
    }
    model.validate();
    fl.validate();
    if (strategies.empty() && !scaling_study) throw ValidationError("experiment.strategies must list at least one strategy");
    for (const auto& s : strategies) s.validate();
    if (seeds.empty()) throw ValidationError("experiment.seeds must list at least one seed");
    if (post_fl.epochs < 1) throw ValidationError("post_fl.epochs must be >= 1");
    if (post_fl.eval_every < 1) throw ValidationError("post_fl.eval_every must be >= 1");
    if (!(post_fl.delta > 0.0)) throw ValidationError("post_fl.delta must be positive");
    if (output_dir.empty()) throw ValidationError("experiment.output_dir must not be empty");
  }

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Reduced scale that runs the full comparison in seconds on one core. The
// learning rate is raised to match the much shorter schedule.
inline void apply_desk_preset(ExperimentConfig& cfg) {
  cfg.fl.rounds = 30;
  cfg.fl.local_epochs = 3;
  cfg.fl.batch_size = 32;
  cfg.fl.base_lr = 0.01;
  cfg.model.hidden_dims.clear();
  cfg.data.client_sizes = {147, 240, 165, 139, 77, 32};
  cfg.data.num_clients = 6;
  cfg.data.client_noise_scales = SyntheticConfig::linear_noise(6, 1.0, 1.8);
  cfg.data.feature_dim = 16;
  cfg.model.input_dim = 16;
  cfg.post_fl.epochs = 30;
}

namespace detail {

inline std::string join(const std::vector<std::string>& parts, std::string_view sep = ", ") {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Splits on commas that are not inside parentheses.
inline std::vector<std::string> split_top_level(std::string_view text) {
  std::vector<std::string> out;
  int depth = 0;
  std::string current;
  for (char ch : text) {
    if (ch == '(') ++depth;
    if (ch == ')') --depth;
    if (ch == ',' && depth == 0) {
      out.emplace_back(csv::trim(current));
      current.clear();
    } else {
      current += ch;
    }
  }
  if (!csv::trim(current).empty() || !out.empty()) out.emplace_back(csv::trim(current));
  return out;
}

}  // namespace detail

struct ParseOptions {
  bool desk_scale = false;  // apply the desk preset before the file's keys
};

inline ExperimentConfig parse_config_text(std::string_view text, ParseOptions options = {}) {
  ExperimentConfig cfg;
  std::map<std::string, std::pair<std::size_t, std::string>> entries;  // key -> (line, value)
  std::vector<std::string> order;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = csv::trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected 'key = value', found '" + std::string(line) + "'");
    std::string key(csv::trim(line.substr(0, eq)));
    std::string value(csv::trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(line_no, "missing key before '='");
    if (entries.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
    entries[key] = {line_no, value};
    order.push_back(key);
    if (end == text.size()) break;
  }

  bool desk = options.desk_scale;
  if (auto it = entries.find("preset"); it != entries.end()) {
    if (it->second.second == "desk") desk = true;
    else if (it->second.second != "paper") throw ParseError(it->second.first, "key 'preset' must be 'desk' or 'paper'");
  }
  if (desk) apply_desk_preset(cfg);

  // Typed setters; each throws ParseError naming the key and line.
  using Setter = std::function<void(std::size_t, const std::string&, const std::string&)>;
  auto fail = [](std::size_t line, const std::string& key, const std::string& why) {
    throw ParseError(line, "key '" + key + "': " + why);
  };
  auto as_count = [&](std::size_t line, const std::string& key, const std::string& v) -> std::size_t {
    try {
      return csv::parse_index(v, line, key);
    } catch (const ParseError&) {
      fail(line, key, "expected a non-negative integer, found '" + v + "'");
    }
    return 0;
  };
  auto as_real = [&](std::size_t line, const std::string& key, const std::string& v) -> double {
    if (v == "inf") return std::numeric_limits<double>::infinity();
    try {
      return csv::parse_double(v, line, key);
    } catch (const ParseError&) {
      fail(line, key, "expected a number, found '" + v + "'");
    }
    return 0.0;
  };
  auto as_bool = [&](std::size_t line, const std::string& key, const std::string& v) -> bool {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail(line, key, "expected true or false, found '" + v + "'");
    return false;
  };
  auto as_list = [](const std::string& v) {
    std::vector<std::string> out;
    if (csv::trim(v).empty()) return out;
    for (auto part : csv::split(v)) out.emplace_back(csv::trim(part));
    return out;
  };
  auto count_list = [&](std::size_t line, const std::string& key, const std::string& v) {
    std::vector<std::size_t> out;
    for (const auto& p : as_list(v)) out.push_back(as_count(line, key, p));
    return out;
  };
  auto real_list = [&](std::size_t line, const std::string& key, const std::string& v) {
    std::vector<double> out;
    for (const auto& p : as_list(v)) out.push_back(as_real(line, key, p));
    return out;
  };

  bool noise_given = false;
  std::map<std::string, Setter> setters{
      {"preset", [](auto, auto&, auto&) {}},
      {"data.path", [&](auto, auto&, auto& v) { cfg.data_path = v; }},
      {"data.num_clients", [&](auto l, auto& k, auto& v) { cfg.data.num_clients = as_count(l, k, v); }},
      {"data.num_classes", [&](auto l, auto& k, auto& v) {
         cfg.data.num_classes = as_count(l, k, v);
         cfg.model.num_classes = cfg.data.num_classes;
       }},
      {"data.feature_dim", [&](auto l, auto& k, auto& v) {
         cfg.data.feature_dim = as_count(l, k, v);
         cfg.model.input_dim = cfg.data.feature_dim;
       }},
      {"data.client_sizes", [&](auto l, auto& k, auto& v) { cfg.data.client_sizes = count_list(l, k, v); }},
      {"data.client_shift_scale", [&](auto l, auto& k, auto& v) { cfg.data.client_shift_scale = as_real(l, k, v); }},
      {"data.client_noise_scales", [&](auto l, auto& k, auto& v) {
         cfg.data.client_noise_scales = real_list(l, k, v);
         noise_given = true;
       }},
      {"data.anchor_scale", [&](auto l, auto& k, auto& v) { cfg.data.anchor_scale = as_real(l, k, v); }},
      {"model.hidden_dims", [&](auto l, auto& k, auto& v) { cfg.model.hidden_dims = count_list(l, k, v); }},
      {"fl.rounds", [&](auto l, auto& k, auto& v) { cfg.fl.rounds = as_count(l, k, v); }},
      {"fl.local_epochs", [&](auto l, auto& k, auto& v) { cfg.fl.local_epochs = as_count(l, k, v); }},
      {"fl.batch_size", [&](auto l, auto& k, auto& v) { cfg.fl.batch_size = as_count(l, k, v); }},
      {"fl.lr", [&](auto l, auto& k, auto& v) { cfg.fl.base_lr = as_real(l, k, v); }},
      {"fl.client_fraction", [&](auto l, auto& k, auto& v) { cfg.fl.client_fraction = as_real(l, k, v); }},
      {"fl.optimizer", [&](auto l, auto& k, auto& v) {
         try {
           cfg.fl.optimizer = parse_optimizer_kind(v);
         } catch (const ValidationError& e) {
           fail(l, k, e.what());
         }
       }},
      {"fl.parallel_clients", [&](auto l, auto& k, auto& v) { cfg.fl.parallel_clients = as_bool(l, k, v); }},
      {"post_fl.enabled", [&](auto l, auto& k, auto& v) { cfg.post_fl.enabled = as_bool(l, k, v); }},
      {"post_fl.epochs", [&](auto l, auto& k, auto& v) { cfg.post_fl.epochs = as_count(l, k, v); }},
      {"post_fl.delta", [&](auto l, auto& k, auto& v) { cfg.post_fl.delta = as_real(l, k, v); }},
      {"post_fl.eval_every", [&](auto l, auto& k, auto& v) { cfg.post_fl.eval_every = as_count(l, k, v); }},
      {"experiment.strategies", [&](auto l, auto& k, auto& v) {
         cfg.strategies.clear();
         for (const auto& s : detail::split_top_level(v)) {
           try {
             cfg.strategies.push_back(parse_strategy(s));
           } catch (const ValidationError& e) {
             fail(l, k, e.what());
           }
         }
       }},
      {"experiment.seeds", [&](auto l, auto& k, auto& v) {
         cfg.seeds.clear();
         for (auto s : count_list(l, k, v)) cfg.seeds.push_back(s);
       }},
      {"experiment.scaling_study", [&](auto l, auto& k, auto& v) { cfg.scaling_study = as_bool(l, k, v); }},
      {"experiment.output_dir", [&](auto, auto&, auto& v) { cfg.output_dir = v; }},
  };

  for (const auto& key : order) {
    const auto& [line, value] = entries[key];
    auto it = setters.find(key);
    if (it == setters.end()) throw ParseError(line, "unknown key '" + key + "'");
    it->second(line, key, value);
  }

  // A client count change without explicit noise keeps the linear 1.0 -> 1.8 ramp.
  if (!noise_given && cfg.data.client_noise_scales.size() != cfg.data.num_clients && cfg.data.num_clients >= 2) {
    cfg.data.client_noise_scales = SyntheticConfig::linear_noise(cfg.data.num_clients, 1.0, 1.8);
  }

  try {
    cfg.validate();
  } catch (const ValidationError& e) {
    // Point at the offending key when we can tell which one it was.
    const std::string what = e.what();
    const auto key_end = what.find(' ');
    const std::string key = what.substr(0, key_end);
    if (auto it = entries.find(key); it != entries.end()) throw ParseError(it->second.first, what);
    for (const auto& [k, lv] : entries) {
      if (what.find(k) != std::string::npos) throw ParseError(lv.first, what);
    }
    throw ParseError(0, what);
  }
  return cfg;
}

inline ExperimentConfig parse_config(const std::string& path, ParseOptions options = {}) {
  const auto lines = csv::read_lines(path);
  std::string text;
  for (const auto& l : lines) text += l + "\n";
  return parse_config_text(text, options);
}

// Emits every key explicitly, so reparsing reproduces the same config.
inline std::string serialize_config(const ExperimentConfig& cfg) {
  auto counts = [](const auto& xs) {
    std::vector<std::string> parts;
    for (auto x : xs) parts.push_back(std::to_string(x));
    return detail::join(parts);
  };
  auto reals = [](const std::vector<double>& xs) {
    std::vector<std::string> parts;
    for (double x : xs) parts.push_back(csv::format_double(x));
    return detail::join(parts);
  };
  std::vector<std::string> strategies;
  for (const auto& s : cfg.strategies) strategies.push_back(s.label());

  std::string out;
  auto put = [&](std::string_view key, const std::string& value) {
    out += std::string(key) + " = " + value + "\n";
  };
  if (cfg.data_path) put("data.path", *cfg.data_path);
  put("data.num_clients", std::to_string(cfg.data.num_clients));
  put("data.num_classes", std::to_string(cfg.data.num_classes));
  put("data.feature_dim", std::to_string(cfg.data.feature_dim));
  put("data.client_sizes", counts(cfg.data.client_sizes));
  put("data.client_shift_scale", csv::format_double(cfg.data.client_shift_scale));
  put("data.client_noise_scales", reals(cfg.data.client_noise_scales));
  put("data.anchor_scale", csv::format_double(cfg.data.anchor_scale));
  put("model.hidden_dims", counts(cfg.model.hidden_dims));
  put("fl.rounds", std::to_string(cfg.fl.rounds));
  put("fl.local_epochs", std::to_string(cfg.fl.local_epochs));
  put("fl.batch_size", std::to_string(cfg.fl.batch_size));
  put("fl.lr", csv::format_double(cfg.fl.base_lr));
  put("fl.client_fraction", csv::format_double(cfg.fl.client_fraction));
  put("fl.optimizer", std::string(to_string(cfg.fl.optimizer)));
  put("fl.parallel_clients", cfg.fl.parallel_clients ? "true" : "false");
  put("post_fl.enabled", cfg.post_fl.enabled ? "true" : "false");
  put("post_fl.epochs", std::to_string(cfg.post_fl.epochs));
  put("post_fl.delta", csv::format_double(cfg.post_fl.delta));
  put("post_fl.eval_every", std::to_string(cfg.post_fl.eval_every));
  put("experiment.strategies", detail::join(strategies));
  put("experiment.seeds", counts(cfg.seeds));
  put("experiment.scaling_study", cfg.scaling_study ? "true" : "false");
  put("experiment.output_dir", cfg.output_dir);
  return out;
}

}  // namespace fedfair

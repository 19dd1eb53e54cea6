#pragma once

// Round-based federated training: local updates, the loss-driven weight
// adjuster with its integer scaling factor m, the aggregation strategies and
// the global loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfair/csv.hpp"
#include "fedfair/datagen.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/numkit.hpp"

namespace fedfair {

enum class StrategyKind { fed_avg, fed_equal, fed_loss, fed_exp, qffl, fed_auto };

// Aggregation rule plus its hyper-parameters. Only the fields relevant to
// `kind` are meaningful; the others keep their defaults so equality is exact.
struct Strategy {
  StrategyKind kind = StrategyKind::fed_avg;
  int m_fixed = 1;        // fed_exp
  double q = 0.0;         // qffl
  double Q = 1.5;         // fed_auto escalation ratio
  int m_cap = 3;          // fed_auto upper bound on m
  bool allow_decrease = false;  // fed_auto: step m back down when the loss spread closes

  static Strategy fed_avg() { return {}; }
  static Strategy fed_equal() { return {.kind = StrategyKind::fed_equal}; }
  static Strategy fed_loss() { return {.kind = StrategyKind::fed_loss}; }
  static Strategy fed_exp(int m) { return {.kind = StrategyKind::fed_exp, .m_fixed = m}; }
  static Strategy q_ffl(double q) { return {.kind = StrategyKind::qffl, .q = q}; }
  static Strategy fed_auto(double Q = 1.5, int m_cap = 3) {
    return {.kind = StrategyKind::fed_auto, .Q = Q, .m_cap = m_cap};
  }

  void validate() const {
    switch (kind) {
      case StrategyKind::fed_exp:
        if (m_fixed < 1) throw ValidationError("fedexp: m must be >= 1");
        break;
      case StrategyKind::qffl:
        if (!(q >= 0.0) || !std::isfinite(q)) throw ValidationError("qffl: q must be finite and >= 0");
        break;
      case StrategyKind::fed_auto:
        if (!(Q > 1.0)) throw ValidationError("fedauto: Q must exceed 1");
        if (m_cap < 1) throw ValidationError("fedauto: M must be >= 1");
        break;
      default:
        break;
    }
  }

  bool loss_sensitive() const {
    return kind == StrategyKind::fed_loss || kind == StrategyKind::fed_exp ||
           kind == StrategyKind::fed_auto || (kind == StrategyKind::qffl && q > 0.0);
  }

  // Canonical text form, parsed back by parse_strategy.
  std::string label() const {
    switch (kind) {
      case StrategyKind::fed_avg: return "fedavg";
      case StrategyKind::fed_equal: return "fedequal";
      case StrategyKind::fed_loss: return "fedloss";
      case StrategyKind::fed_exp: return "fedexp(m=" + std::to_string(m_fixed) + ")";
      case StrategyKind::qffl: return "qffl(q=" + csv::format_double(q) + ")";
      case StrategyKind::fed_auto: {
        std::string s = "fedauto(Q=" + csv::format_double(Q) + ";M=" + std::to_string(m_cap);
        if (allow_decrease) s += ";decrease=1";
        return s + ")";
      }
    }
    return "fedavg";
  }

  friend bool operator==(const Strategy&, const Strategy&) = default;
};

// Parses `name` or `name(key=value;key=value)`. Q accepts "inf".
inline Strategy parse_strategy(std::string_view text) {
  text = csv::trim(text);
  std::string_view name = text;
  std::string_view args;
  if (const auto open = text.find('('); open != std::string_view::npos) {
    if (text.back() != ')') throw ValidationError("strategy '" + std::string(text) + "' is missing ')'");
    name = csv::trim(text.substr(0, open));
    args = text.substr(open + 1, text.size() - open - 2);
  }

  Strategy s;
  if (name == "fedavg") s = Strategy::fed_avg();
  else if (name == "fedequal") s = Strategy::fed_equal();
  else if (name == "fedloss") s = Strategy::fed_loss();
  else if (name == "fedexp") s = Strategy::fed_exp(1);
  else if (name == "qffl") s = Strategy::q_ffl(0.0);
  else if (name == "fedauto") s = Strategy::fed_auto();
  else throw ValidationError("unknown strategy '" + std::string(name) + "'");

  auto number = [&](std::string_view key, std::string_view v) {
    v = csv::trim(v);
    if (v == "inf") return std::numeric_limits<double>::infinity();
    try {
      return csv::parse_double(v, 0, key);
    } catch (const ParseError&) {
      throw ValidationError("strategy parameter '" + std::string(key) + "' is not a number");
    }
  };
  auto integer = [&](std::string_view key, std::string_view v) {
    const double x = number(key, v);
    if (x != std::floor(x) || std::abs(x) > 1e6) {
      throw ValidationError("strategy parameter '" + std::string(key) + "' must be an integer");
    }
    return static_cast<int>(x);
  };

  if (!csv::trim(args).empty()) {
    for (auto part : csv::split(args, ';')) {
      const auto eq = part.find('=');
      if (eq == std::string_view::npos) throw ValidationError("strategy parameter needs key=value");
      const auto key = csv::trim(part.substr(0, eq));
      const auto value = part.substr(eq + 1);
      if (s.kind == StrategyKind::fed_exp && key == "m") s.m_fixed = integer(key, value);
      else if (s.kind == StrategyKind::qffl && key == "q") s.q = number(key, value);
      else if (s.kind == StrategyKind::fed_auto && key == "Q") s.Q = number(key, value);
      else if (s.kind == StrategyKind::fed_auto && key == "M") s.m_cap = integer(key, value);
      else if (s.kind == StrategyKind::fed_auto && key == "decrease") s.allow_decrease = integer(key, value) != 0;
      else throw ValidationError("unknown parameter '" + std::string(key) + "' for strategy " + std::string(name));
    }
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Scaling factor controller

struct AdjusterState {
  int m = 1;
  std::vector<std::pair<std::size_t, int>> history;  // (round, m after update)
};

// Raises m by one when max(loss) > Q * min(loss) and m is below the cap.
// With allow_decrease, m steps down by one (not below 1) when the condition fails.
inline AdjusterState update_scaling_factor(AdjusterState adjuster, std::span<const double> losses,
                                           double Q, int m_cap, std::size_t round = 0,
                                           bool allow_decrease = false) {
  if (losses.empty()) throw ValidationError("update_scaling_factor: no losses");
  for (double l : losses) {
    if (!(l >= 0.0)) throw ValidationError("update_scaling_factor: losses must be >= 0");
  }
  const auto [lo, hi] = std::minmax_element(losses.begin(), losses.end());
  const bool spread = *hi > Q * *lo;
  if (spread && adjuster.m < m_cap) {
    ++adjuster.m;
  } else if (!spread && allow_decrease && adjuster.m > 1) {
    --adjuster.m;
  }
  adjuster.history.emplace_back(round, adjuster.m);
  return adjuster;
}

// ---------------------------------------------------------------------------
// Aggregation weights

namespace detail {

inline std::vector<double> normalize(std::vector<double> raw) {
  double total = 0.0;
  for (double v : raw) total += v;
  for (double& v : raw) v /= total;
  return raw;
}

inline std::vector<double> uniform_weights(std::size_t n) {
  return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

// e^{m L_c} / sum_i e^{m L_i}, shifted by the max exponent.
inline std::vector<double> exp_weights(std::span<const double> losses, int m) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double l : losses) peak = std::max(peak, m * l);
  std::vector<double> raw(losses.size());
  for (std::size_t i = 0; i < losses.size(); ++i) raw[i] = std::exp(m * losses[i] - peak);
  return normalize(std::move(raw));
}

}  // namespace detail

// FedLoss and q-FFL fall back to uniform weights when every raw term is zero.
// q-FFL uses the static form w_c ∝ N_c * L_c^q.
inline std::vector<double> compute_aggregation_weights(const Strategy& strategy,
                                                       std::span<const double> losses,
                                                       std::span<const std::size_t> counts,
                                                       const AdjusterState* adjuster = nullptr) {
  if (losses.empty() || losses.size() != counts.size()) {
    throw ValidationError("aggregation weights: losses and counts must be aligned and nonempty");
  }
  for (double l : losses) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ValidationError("aggregation weights: losses must be finite and >= 0");
  }
  const std::size_t n = losses.size();

  switch (strategy.kind) {
    case StrategyKind::fed_avg: {
      std::vector<double> raw(n);
      for (std::size_t i = 0; i < n; ++i) raw[i] = static_cast<double>(counts[i]);
      double total = 0.0;
      for (double v : raw) total += v;
      if (total == 0.0) return detail::uniform_weights(n);
      return detail::normalize(std::move(raw));
    }
    case StrategyKind::fed_equal:
      return detail::uniform_weights(n);
    case StrategyKind::fed_loss: {
      std::vector<double> raw(losses.begin(), losses.end());
      double total = 0.0;
      for (double v : raw) total += v;
      if (total == 0.0) return detail::uniform_weights(n);
      return detail::normalize(std::move(raw));
    }
    case StrategyKind::fed_exp:
      return detail::exp_weights(losses, strategy.m_fixed);
    case StrategyKind::qffl: {
      std::vector<double> raw(n);
      for (std::size_t i = 0; i < n; ++i) {
        raw[i] = static_cast<double>(counts[i]) * std::pow(losses[i], strategy.q);
      }
      double total = 0.0;
      for (double v : raw) total += v;
      if (!(total > 0.0) || !std::isfinite(total)) return detail::uniform_weights(n);
      return detail::normalize(std::move(raw));
    }
    case StrategyKind::fed_auto:
      return detail::exp_weights(losses, adjuster ? adjuster->m : 1);
  }
  return detail::uniform_weights(n);
}

inline ModelParams aggregate_global(std::span<const ModelParams> client_params, std::span<const double> weights) {
  if (client_params.size() != weights.size() || client_params.empty()) {
    throw DimensionError("aggregate_global: need one weight per client model");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ValidationError("aggregate_global: negative weight");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("aggregate_global: weights must sum to 1");
  return linear_combination_params(weights, client_params);
}

// ---------------------------------------------------------------------------
// Clients and local training

struct FlConfig {
  std::size_t rounds = 100;       // T
  std::size_t local_epochs = 5;   // E
  std::size_t batch_size = 128;   // B, clamped to the client's train size
  double base_lr = 1e-4;          // η, cosine-decayed over rounds
  double client_fraction = 1.0;
  OptimizerKind optimizer = OptimizerKind::adam;
  Strategy strategy = Strategy::fed_auto();
  std::uint64_t seed = 0;
  bool parallel_clients = true;

  void validate() const {
    if (rounds < 1) throw ValidationError("fl.rounds must be >= 1");
    if (local_epochs < 1) throw ValidationError("fl.local_epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("fl.batch_size must be >= 1");
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ValidationError("fl.lr must be finite and >= 0");
    if (!(client_fraction > 0.0 && client_fraction <= 1.0)) {
      throw ValidationError("fl.client_fraction must be in (0, 1]");
    }
    strategy.validate();
  }

  friend bool operator==(const FlConfig&, const FlConfig&) = default;
};

struct ClientState {
  std::size_t client_id = 0;
  ClientPartition partition;        // train list already rebalanced
  ModelParams params;
  std::optional<OptimizerState> optimizer;  // carried across rounds; created on first update
  std::size_t sample_count = 0;     // N_c: train size before resampling
  std::optional<double> last_loss;  // L_c
};

// Builds client states from raw partitions: records N_c, then rebalances classes.
inline std::vector<ClientState> make_clients(const Dataset& ds, std::span<const ClientPartition> partitions,
                                             std::uint64_t seed, bool rebalance = true) {
  std::vector<ClientState> clients;
  clients.reserve(partitions.size());
  for (const auto& p : partitions) {
    ClientState c;
    c.client_id = p.client_id;
    c.sample_count = p.train.size();
    c.partition = rebalance ? rebalance_by_resampling(p, ds, seed) : p;
    clients.push_back(std::move(c));
  }
  return clients;
}

inline double evaluate_accuracy(const ModelParams& params, const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  const auto predictions = predict(params, gather_rows(ds.features, indices));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) correct += predictions[i] == ds.labels[indices[i]];
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

struct LocalResult {
  ModelParams params;
  double loss = 0.0;  // mean per-sample loss over the final epoch
  OptimizerState optimizer;
};

// Runs `epochs` passes of mini-batch training over the client's train list,
// reshuffled each epoch from `rng`. Loss is accumulated from the forward pass
// of each batch before its step. Used by both local updates and fine-tuning.
struct EpochRunner {
  const Dataset& ds;
  std::span<const std::size_t> train;
  std::size_t batch_size;

  double run_epoch(ModelParams& params, OptimizerState& opt, double lr, RngStream& rng,
                   std::size_t client_id, std::size_t round) const {
    std::vector<std::size_t> order(train.begin(), train.end());
    rng.shuffle(std::span<std::size_t>(order));
    const std::size_t b = std::min(batch_size, order.size());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += b) {
      const std::size_t end = std::min(start + b, order.size());
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];
      const Matrix x = gather_rows(ds.features, idx);
      const Matrix t = one_hot(labels, ds.num_classes);
      auto step = backward_grads(params, x, t);
      if (!std::isfinite(step.mean_loss) || !step.grads.all_finite()) {
        throw DivergenceError(client_id, round, "non-finite loss or gradient during local training");
      }
      loss_sum += step.mean_loss * static_cast<double>(idx.size());
      params = optimizer_step(params, step.grads, opt, lr);
      if (!params.all_finite()) throw DivergenceError(client_id, round, "parameters became non-finite");
    }
    return loss_sum / static_cast<double>(order.size());
  }
};

// Copies the global model and trains it for cfg.local_epochs, continuing the
// client's own optimizer state. Randomness comes only from stream
// (cfg.seed, client, round). The client itself is not modified.
inline LocalResult local_update(const ClientState& client, const Dataset& ds, const ModelParams& global_params,
                                const FlConfig& cfg, double lr, std::size_t round) {
  if (client.partition.train.empty()) throw ValidationError("local_update: empty train split");
  if (cfg.local_epochs < 1) throw ValidationError("local_update: local_epochs must be >= 1");
  RngStream rng(cfg.seed, derive_stream_id({stream_tag::kLocalUpdate, client.client_id, round}));
  EpochRunner runner{ds, client.partition.train, cfg.batch_size};

  LocalResult result{global_params, 0.0, {}};
  result.optimizer = client.optimizer && client.optimizer->kind == cfg.optimizer
                         ? *client.optimizer
                         : OptimizerState::make(cfg.optimizer, global_params);
  for (std::size_t e = 0; e < cfg.local_epochs; ++e) {
    result.loss = runner.run_epoch(result.params, result.optimizer, lr, rng, client.client_id, round);
  }
  if (!std::isfinite(result.loss)) throw DivergenceError(client.client_id, round, "non-finite loss");
  return result;
}

// ---------------------------------------------------------------------------
// Round loop

struct ClientRoundEntry {
  std::size_t client_id = 0;
  double loss = 0.0;
  double weight = 0.0;
  double val_accuracy_client = 0.0;  // the client's local model on its val split
  double val_accuracy_global = 0.0;  // the aggregated model on the client's val split

  friend bool operator==(const ClientRoundEntry&, const ClientRoundEntry&) = default;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::string strategy;
  int m = 0;  // scaling factor in effect; 0 for strategies without one
  std::vector<ClientRoundEntry> clients;

  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct InFlResult {
  ModelParams global;
  std::vector<RoundRecord> rounds;
  std::vector<int> m_trajectory;  // per round; fed_auto only
};

namespace detail {

inline std::vector<std::size_t> select_clients(std::size_t num_clients, double fraction, std::uint64_t seed,
                                               std::size_t round) {
  std::vector<std::size_t> ids(num_clients);
  for (std::size_t i = 0; i < num_clients; ++i) ids[i] = i;
  const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(num_clients) - 1e-12));
  const std::size_t k = std::clamp<std::size_t>(wanted, 1, num_clients);
  if (k == num_clients) return ids;
  RngStream rng(seed, derive_stream_id({stream_tag::kClientSelection, round}));
  rng.shuffle(std::span<std::size_t>(ids));
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace detail

inline InFlResult run_in_fl(const Dataset& ds, std::vector<ClientState>& clients, const ModelSpec& spec,
                            const FlConfig& cfg, std::optional<ModelParams> initial = std::nullopt) {
  cfg.validate();
  spec.validate();
  if (clients.empty()) throw ValidationError("run_in_fl: no clients");
  if (ds.feature_dim() != spec.input_dim || ds.num_classes != spec.num_classes) {
    throw DimensionError("run_in_fl: model spec does not match dataset");
  }

  InFlResult result;
  result.global = initial ? std::move(*initial) : init_params(spec, cfg.seed);
  AdjusterState adjuster;
  const bool uses_adjuster = cfg.strategy.kind == StrategyKind::fed_auto;

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    const double lr = cosine_lr(t - 1, cfg.rounds, cfg.base_lr);
    const auto selected = detail::select_clients(clients.size(), cfg.client_fraction, cfg.seed, t);

    std::vector<LocalResult> updates(selected.size());
    if (cfg.parallel_clients && selected.size() > 1) {
      std::vector<std::future<LocalResult>> jobs;
      jobs.reserve(selected.size());
      for (auto idx : selected) {
        jobs.push_back(std::async(std::launch::async, [&, idx] {
          return local_update(clients[idx], ds, result.global, cfg, lr, t);
        }));
      }
      for (std::size_t i = 0; i < jobs.size(); ++i) updates[i] = jobs[i].get();
    } else {
      for (std::size_t i = 0; i < selected.size(); ++i) {
        updates[i] = local_update(clients[selected[i]], ds, result.global, cfg, lr, t);
      }
    }

    std::vector<double> losses(selected.size());
    std::vector<std::size_t> counts(selected.size());
    std::vector<ModelParams> locals(selected.size());
    for (std::size_t i = 0; i < selected.size(); ++i) {
      auto& client = clients[selected[i]];
      client.params = updates[i].params;
      client.last_loss = updates[i].loss;
      client.optimizer = std::move(updates[i].optimizer);
      losses[i] = updates[i].loss;
      counts[i] = client.sample_count;
      locals[i] = std::move(updates[i].params);
    }

    if (uses_adjuster) {
      adjuster = update_scaling_factor(std::move(adjuster), losses, cfg.strategy.Q, cfg.strategy.m_cap, t,
                                       cfg.strategy.allow_decrease);
      result.m_trajectory.push_back(adjuster.m);
    }
    const auto weights = compute_aggregation_weights(cfg.strategy, losses, counts, &adjuster);
    result.global = aggregate_global(locals, weights);

    RoundRecord record;
    record.round = t;
    record.strategy = cfg.strategy.label();
    record.m = uses_adjuster ? adjuster.m : (cfg.strategy.kind == StrategyKind::fed_exp ? cfg.strategy.m_fixed : 0);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      const auto& client = clients[selected[i]];
      record.clients.push_back({client.client_id, losses[i], weights[i],
                                evaluate_accuracy(locals[i], ds, client.partition.val),
                                evaluate_accuracy(result.global, ds, client.partition.val)});
    }
    result.rounds.push_back(std::move(record));
  }
  return result;
}

// ---------------------------------------------------------------------------
// RoundRecord CSV

inline constexpr std::string_view kRoundCsvHeader =
    "round,strategy,m,client_id,loss,weight,val_accuracy_client,val_accuracy_global";

// Strategy labels use ';' between parameters, so they never contain the CSV separator.
inline std::string round_records_to_csv(std::span<const RoundRecord> records, bool with_header = true) {
  std::string out;
  if (with_header) out = std::string(kRoundCsvHeader) + "\n";
  for (const auto& r : records) {
    for (const auto& c : r.clients) {
      out += std::to_string(r.round) + ',' + r.strategy + ',' + std::to_string(r.m) + ',' +
             std::to_string(c.client_id) + ',' + csv::format_double(c.loss) + ',' + csv::format_double(c.weight) +
             ',' + csv::format_double(c.val_accuracy_client) + ',' + csv::format_double(c.val_accuracy_global) + '\n';
    }
  }
  return out;
}

// Groups consecutive rows sharing (round, strategy) back into records.
inline std::vector<RoundRecord> round_records_from_lines(const std::vector<std::string>& lines) {
  csv::expect_header(lines, kRoundCsvHeader);
  std::vector<RoundRecord> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    if (csv::trim(lines[li]).empty()) continue;
    const auto f = csv::split(lines[li]);
    if (f.size() != 8) throw ParseError(line_no, "expected 8 fields, found " + std::to_string(f.size()));
    const auto round = csv::parse_index(f[0], line_no, "round");
    const std::string strategy(csv::trim(f[1]));
    const double m = csv::parse_double(f[2], line_no, "m");
    ClientRoundEntry e{csv::parse_index(f[3], line_no, "client_id"), csv::parse_double(f[4], line_no, "loss"),
                       csv::parse_double(f[5], line_no, "weight"),
                       csv::parse_double(f[6], line_no, "val_accuracy_client"),
                       csv::parse_double(f[7], line_no, "val_accuracy_global")};
    if (out.empty() || out.back().round != round || out.back().strategy != strategy) {
      out.push_back({round, strategy, static_cast<int>(m), {}});
    }
    out.back().clients.push_back(e);
  }
  return out;
}

}  // namespace fedfair

#pragma once

// Post-federation personalization: per-client fine-tuning with validation
// checkpoints, and selection of one checkpoint per client under a bound on
// the spread of the chosen accuracies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedfair/csv.hpp"
#include "fedfair/datagen.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/flcore.hpp"
#include "fedfair/numkit.hpp"

namespace fedfair {

struct FineTuneConfig {
  std::size_t epochs = 100;
  std::size_t eval_every = 1;
  double base_lr = 1e-4;  // cosine-decayed over the fine-tuning epochs
  std::size_t batch_size = 128;
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw ValidationError("post_fl.epochs must be >= 1");
    if (eval_every < 1) throw ValidationError("post_fl.eval_every must be >= 1");
    if (batch_size < 1) throw ValidationError("post_fl.batch_size must be >= 1");
    if (!(base_lr >= 0.0) || !std::isfinite(base_lr)) throw ValidationError("post_fl.lr must be finite and >= 0");
  }
};

struct Checkpoint {
  std::size_t epoch = 0;  // 1-based, counted from the start of fine-tuning
  double val_accuracy = 0.0;
  std::shared_ptr<const ModelParams> snapshot;  // may be released after selection
};

struct CheckpointHistory {
  std::size_t client_id = 0;
  std::vector<Checkpoint> entries;  // strictly increasing epochs
};

// Trains a copy of the global model on the client's own train list and logs
// validation accuracy every `eval_every` epochs and at the last epoch.
inline CheckpointHistory fine_tune_client(const ClientState& client, const Dataset& ds,
                                          const ModelParams& global_params, const FineTuneConfig& cfg) {
  cfg.validate();
  check_well_formed(global_params);
  if (client.partition.train.empty()) throw ValidationError("fine_tune_client: empty train split");

  RngStream rng(cfg.seed, derive_stream_id({stream_tag::kFineTune, client.client_id}));
  EpochRunner runner{ds, client.partition.train, cfg.batch_size};
  ModelParams params = global_params;
  OptimizerState opt = OptimizerState::make(cfg.optimizer, params);

  CheckpointHistory history;
  history.client_id = client.client_id;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch - 1, cfg.epochs, cfg.base_lr);
    runner.run_epoch(params, opt, lr, rng, client.client_id, epoch);
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
      history.entries.push_back({epoch, evaluate_accuracy(params, ds, client.partition.val),
                                 std::make_shared<const ModelParams>(params)});
    }
  }
  return history;
}

struct SelectedCheckpoint {
  std::size_t client_id = 0;
  std::size_t epoch = 0;
  double accuracy = 0.0;
  std::size_t entry_index = 0;  // position in the client's history
};

struct SelectionResult {
  std::vector<SelectedCheckpoint> chosen;  // same order as the input histories
  double spread = 0.0;
  double window_low = 0.0;
  double window_high = 0.0;
  bool feasible = true;
};

// Slack absorbed when comparing a spread against delta, so windows such as
// [0.70, 0.75] are not rejected by binary rounding.
inline constexpr double kSelectionTolerance = 1e-12;

namespace detail {

// Per client: the highest accuracy in [low, high], earliest epoch on ties.
inline std::vector<SelectedCheckpoint> best_in_window(std::span<const CheckpointHistory> histories, double low,
                                                      double high) {
  std::vector<SelectedCheckpoint> out;
  out.reserve(histories.size());
  for (const auto& h : histories) {
    std::optional<SelectedCheckpoint> best;
    for (std::size_t i = 0; i < h.entries.size(); ++i) {
      const auto& e = h.entries[i];
      if (e.val_accuracy < low || e.val_accuracy > high) continue;
      if (!best || e.val_accuracy > best->accuracy) best = SelectedCheckpoint{h.client_id, e.epoch, e.val_accuracy, i};
    }
    if (!best) return {};
    out.push_back(*best);
  }
  return out;
}

}  // namespace detail

// Picks one checkpoint per client with max - min <= delta, maximizing the
// minimum chosen accuracy, then the mean, then preferring earlier epochs.
// Candidate minima are the observed accuracies; for each anchor a the window
// is [a, a + delta]. The best feasible anchor is the largest one where every
// client has a checkpoint in its window. If none exists the result minimizes
// the spread instead and is flagged infeasible. delta may be +inf.
inline SelectionResult select_personalized_models(std::span<const CheckpointHistory> histories, double delta) {
  if (histories.empty()) throw ValidationError("select_personalized_models: no histories");
  if (!(delta > 0.0)) throw ValidationError("select_personalized_models: delta must be positive");
  for (const auto& h : histories) {
    if (h.entries.empty()) {
      throw ValidationError("select_personalized_models: client " + std::to_string(h.client_id) + " has no checkpoints");
    }
  }

  std::vector<double> anchors;
  for (const auto& h : histories) {
    for (const auto& e : h.entries) anchors.push_back(e.val_accuracy);
  }
  std::sort(anchors.begin(), anchors.end(), std::greater<>());
  anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());

  auto finish = [&](std::vector<SelectedCheckpoint> chosen, bool feasible) {
    SelectionResult r;
    r.chosen = std::move(chosen);
    r.feasible = feasible;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto& c : r.chosen) {
      lo = std::min(lo, c.accuracy);
      hi = std::max(hi, c.accuracy);
    }
    r.window_low = lo;
    r.window_high = hi;
    r.spread = hi - lo;
    return r;
  };

  for (double a : anchors) {
    auto chosen = detail::best_in_window(histories, a, a + delta + kSelectionTolerance);
    if (!chosen.empty()) return finish(std::move(chosen), true);
  }

  // Infeasible: for each anchor as the minimum, every client takes its
  // smallest accuracy >= anchor; keep the anchor with the least spread
  // (larger anchor on ties), then re-pick the best inside that window.
  double best_spread = std::numeric_limits<double>::infinity();
  double best_anchor = 0.0;
  double best_top = 0.0;
  for (double a : anchors) {
    double top = a;
    bool covered = true;
    for (const auto& h : histories) {
      double smallest = std::numeric_limits<double>::infinity();
      for (const auto& e : h.entries) {
        if (e.val_accuracy >= a) smallest = std::min(smallest, e.val_accuracy);
      }
      if (!std::isfinite(smallest)) {
        covered = false;
        break;
      }
      top = std::max(top, smallest);
    }
    if (covered && top - a < best_spread) {
      best_spread = top - a;
      best_anchor = a;
      best_top = top;
    }
  }
  return finish(detail::best_in_window(histories, best_anchor, best_top), false);
}

// Drops every snapshot except the selected one for each client.
inline void retain_selected_snapshots(std::span<CheckpointHistory> histories, const SelectionResult& selection) {
  for (std::size_t c = 0; c < histories.size(); ++c) {
    for (std::size_t i = 0; i < histories[c].entries.size(); ++i) {
      if (i != selection.chosen.at(c).entry_index) histories[c].entries[i].snapshot.reset();
    }
  }
}

inline constexpr std::string_view kCheckpointCsvHeader = "client_id,epoch,val_accuracy";
inline constexpr std::string_view kSelectionCsvHeader = "client_id,selected_epoch,selected_accuracy";

inline std::string checkpoints_to_csv(std::span<const CheckpointHistory> histories) {
  std::string out = std::string(kCheckpointCsvHeader) + "\n";
  for (const auto& h : histories) {
    for (const auto& e : h.entries) {
      out += std::to_string(h.client_id) + ',' + std::to_string(e.epoch) + ',' + csv::format_double(e.val_accuracy) + '\n';
    }
  }
  return out;
}

// Snapshots are not part of the log; parsed entries carry none.
inline std::vector<CheckpointHistory> checkpoints_from_lines(const std::vector<std::string>& lines) {
  csv::expect_header(lines, kCheckpointCsvHeader);
  std::vector<CheckpointHistory> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto f = csv::split(lines[li]);
    if (f.size() != 3) throw ParseError(li + 1, "expected 3 fields");
    const auto client = csv::parse_index(f[0], li + 1, "client_id");
    const auto epoch = csv::parse_index(f[1], li + 1, "epoch");
    const double acc = csv::parse_double(f[2], li + 1, "val_accuracy");
    if (out.empty() || out.back().client_id != client) out.push_back({client, {}});
    auto& entries = out.back().entries;
    if (!entries.empty() && entries.back().epoch >= epoch) throw ParseError(li + 1, "epochs must increase per client");
    entries.push_back({epoch, acc, nullptr});
  }
  return out;
}

inline std::string selection_to_csv(const SelectionResult& selection) {
  std::string out = std::string(kSelectionCsvHeader) + "\n";
  for (const auto& c : selection.chosen) {
    out += std::to_string(c.client_id) + ',' + std::to_string(c.epoch) + ',' + csv::format_double(c.accuracy) + '\n';
  }
  return out;
}

inline std::vector<SelectedCheckpoint> selection_from_lines(const std::vector<std::string>& lines) {
  csv::expect_header(lines, kSelectionCsvHeader);
  std::vector<SelectedCheckpoint> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto f = csv::split(lines[li]);
    if (f.size() != 3) throw ParseError(li + 1, "expected 3 fields");
    out.push_back({csv::parse_index(f[0], li + 1, "client_id"), csv::parse_index(f[1], li + 1, "selected_epoch"),
                   csv::parse_double(f[2], li + 1, "selected_accuracy"), 0});
  }
  return out;
}

}  // namespace fedfair

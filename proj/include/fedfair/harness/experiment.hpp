#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fedfair/datagen.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/flcore.hpp"
#include "fedfair/harness/config.hpp"
#include "fedfair/metrics.hpp"
#include "fedfair/personalize.hpp"

namespace fedfair {

struct PostFlSummary {
  std::vector<CheckpointHistory> histories;  // only selected snapshots retained
  SelectionResult selection;
  std::vector<double> global_val_accuracy;  // in-FL model, per client
  std::vector<double> peak_val_accuracy;
  std::vector<std::size_t> peak_epoch;
  std::vector<double> personalized_test_accuracy;
  ClassificationReport test_report;  // personalized models, pooled test split
  FairnessReport fairness;
};

struct RunSummary {
  Strategy strategy;
  std::uint64_t seed = 0;
  ClassificationReport test_report;  // in-FL global model, pooled test split
  FairnessReport fairness;           // groups are clients
  std::vector<int> m_trajectory;
  std::vector<RoundRecord> rounds;
  std::optional<PostFlSummary> post_fl;
};

struct ExperimentSummary {
  std::size_t num_clients = 0;
  std::vector<Strategy> strategies;  // run order, study strategies included
  std::vector<std::uint64_t> seeds;
  bool scaling_study = false;
  bool post_fl = false;
  std::vector<RunSummary> runs;  // strategy-major, then seed

  const RunSummary* find(const Strategy& s, std::uint64_t seed) const {
    for (const auto& r : runs) {
      if (r.strategy == s && r.seed == seed) return &r;
    }
    return nullptr;
  }
};

inline std::vector<Strategy> scaling_study_fixed() {
  return {Strategy::fed_exp(2), Strategy::fed_exp(3), Strategy::fed_exp(4)};
}
inline std::vector<Strategy> scaling_study_auto() {
  return {Strategy::fed_auto(1.5, 2), Strategy::fed_auto(1.5, 3), Strategy::fed_auto(1.5, 4)};
}

// Configured strategies followed by any scaling-study strategies not already listed.
inline std::vector<Strategy> strategies_to_run(const ExperimentConfig& cfg) {
  std::vector<Strategy> out = cfg.strategies;
  if (cfg.scaling_study) {
    for (const auto& group : {scaling_study_fixed(), scaling_study_auto()}) {
      for (const auto& s : group) {
        if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
      }
    }
  }
  return out;
}

struct PreparedData {
  Dataset dataset;
  std::vector<ClientPartition> partitions;
};

// Generated data is split with the run seed; loaded data keeps its split tags.
inline PreparedData prepare_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  PreparedData out;
  if (cfg.data_path) {
    out.dataset = read_dataset_csv(*cfg.data_path, cfg.model.num_classes);
    if (out.dataset.feature_dim() != cfg.model.input_dim) {
      throw ValidationError("dataset '" + *cfg.data_path + "' has " + std::to_string(out.dataset.feature_dim()) +
                            " features, model.input_dim is " + std::to_string(cfg.model.input_dim));
    }
    out.partitions = partitions_from_tags(out.dataset);
    for (const auto& p : out.partitions) {
      if (p.train.empty() || p.val.empty() || p.test.empty()) {
        throw ValidationError("client " + std::to_string(p.client_id) + " in '" + *cfg.data_path +
                              "' lacks a train, val or test sample");
      }
    }
    return out;
  }
  SyntheticConfig data = cfg.data;
  data.seed = seed;
  out.dataset = generate_synthetic(data);
  out.partitions = split_dataset(out.dataset, seed);
  apply_split_tags(out.dataset, out.partitions);
  return out;
}

namespace detail {

inline GroupedPredictions test_predictions(const Dataset& ds, const std::vector<ClientState>& clients,
                                           const std::function<const ModelParams&(std::size_t)>& model_for) {
  GroupedPredictions preds;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    const auto& test = clients[c].partition.test;
    const auto predicted = predict(model_for(c), gather_rows(ds.features, test));
    for (std::size_t i = 0; i < test.size(); ++i) {
      preds.push_back({clients[c].client_id, ds.labels[test[i]], predicted[i]});
    }
  }
  return preds;
}

}  // namespace detail

inline RunSummary run_single(const ExperimentConfig& cfg, const Strategy& strategy, std::uint64_t seed) {
  auto data = prepare_data(cfg, seed);
  auto clients = make_clients(data.dataset, data.partitions, seed);

  FlConfig fl = cfg.fl;
  fl.strategy = strategy;
  fl.seed = seed;
  auto in_fl = run_in_fl(data.dataset, clients, cfg.model, fl);

  RunSummary run;
  run.strategy = strategy;
  run.seed = seed;
  run.m_trajectory = in_fl.m_trajectory;
  run.rounds = std::move(in_fl.rounds);

  const auto preds = detail::test_predictions(data.dataset, clients,
                                              [&](std::size_t) -> const ModelParams& { return in_fl.global; });
  run.test_report = classification_report(confusion_matrix(preds, cfg.model.num_classes));
  run.fairness = gap_worst_report(preds);

  if (!cfg.post_fl.enabled) return run;

  FineTuneConfig ft;
  ft.epochs = cfg.post_fl.epochs;
  ft.eval_every = cfg.post_fl.eval_every;
  ft.base_lr = cfg.fl.base_lr;
  ft.batch_size = cfg.fl.batch_size;
  ft.optimizer = cfg.fl.optimizer;
  ft.seed = seed;

  PostFlSummary post;
  for (const auto& client : clients) {
    post.histories.push_back(fine_tune_client(client, data.dataset, in_fl.global, ft));
    post.global_val_accuracy.push_back(evaluate_accuracy(in_fl.global, data.dataset, client.partition.val));
    const auto& entries = post.histories.back().entries;
    auto peak = entries.begin();
    for (auto it = entries.begin(); it != entries.end(); ++it) {
      if (it->val_accuracy > peak->val_accuracy) peak = it;
    }
    post.peak_val_accuracy.push_back(peak->val_accuracy);
    post.peak_epoch.push_back(peak->epoch);
  }
  post.selection = select_personalized_models(post.histories, cfg.post_fl.delta);
  retain_selected_snapshots(post.histories, post.selection);

  const auto personalized = detail::test_predictions(data.dataset, clients, [&](std::size_t c) -> const ModelParams& {
    const auto& h = post.histories[c];
    return *h.entries[post.selection.chosen[c].entry_index].snapshot;
  });
  for (std::size_t c = 0; c < clients.size(); ++c) {
    const auto& h = post.histories[c];
    post.personalized_test_accuracy.push_back(evaluate_accuracy(
        *h.entries[post.selection.chosen[c].entry_index].snapshot, data.dataset, clients[c].partition.test));
  }
  post.test_report = classification_report(confusion_matrix(personalized, cfg.model.num_classes));
  post.fairness = gap_worst_report(personalized);
  run.post_fl = std::move(post);
  return run;
}

// Runs every (strategy, seed) pair. Runs execute concurrently; results are
// stored in a fixed order so scheduling never affects the output. A failing
// run aborts the experiment after the completed runs are handed to
// `on_partial` (used to flush reports).
inline ExperimentSummary run_experiment(const ExperimentConfig& cfg,
                                        const std::function<void(const ExperimentSummary&)>& on_partial = {}) {
  cfg.validate();
  ExperimentSummary summary;
  summary.strategies = strategies_to_run(cfg);
  summary.seeds = cfg.seeds;
  summary.scaling_study = cfg.scaling_study;
  summary.post_fl = cfg.post_fl.enabled;

  struct Job {
    Strategy strategy;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& s : summary.strategies) {
    for (auto seed : cfg.seeds) jobs.push_back({s, seed});
  }

  const std::size_t width = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  std::vector<std::optional<RunSummary>> results(jobs.size());
  std::optional<std::string> failure;
  for (std::size_t start = 0; start < jobs.size() && !failure; start += width) {
    const std::size_t end = std::min(jobs.size(), start + width);
    std::vector<std::future<RunSummary>> pending;
    for (std::size_t i = start; i < end; ++i) {
      pending.push_back(std::async(std::launch::async, [&cfg, job = jobs[i]] {
        return run_single(cfg, job.strategy, job.seed);
      }));
    }
    for (std::size_t i = start; i < end; ++i) {
      try {
        results[i] = pending[i - start].get();
      } catch (const std::exception& e) {
        if (!failure) {
          failure = "run " + jobs[i].strategy.label() + " seed " + std::to_string(jobs[i].seed) + ": " + e.what();
        }
      }
    }
  }

  for (auto& r : results) {
    if (r) summary.runs.push_back(std::move(*r));
  }
  if (!summary.runs.empty()) summary.num_clients = summary.runs.front().fairness.groups.size();
  if (failure) {
    if (on_partial && !summary.runs.empty()) on_partial(summary);
    throw std::runtime_error(*failure);
  }
  return summary;
}

}  // namespace fedfair

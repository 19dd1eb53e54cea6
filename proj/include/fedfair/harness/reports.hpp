#pragma once

// Comparison reports written by `fedfair run`. Seeds are combined by median;
// per-seed rows are kept in in_fl_runs.csv and selection.csv.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedfair/csv.hpp"
#include "fedfair/errors.hpp"
#include "fedfair/flcore.hpp"
#include "fedfair/harness/experiment.hpp"
#include "fedfair/metrics.hpp"
#include "fedfair/personalize.hpp"

namespace fedfair {

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw ValidationError("median of empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

// File-name-safe form of a strategy label.
inline std::string strategy_slug(const Strategy& s) {
  std::string out;
  for (char ch : s.label()) {
    if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '.') out += ch;
    else if (ch == '=' || ch == '(' || ch == ';') out += '_';
  }
  return out;
}

namespace detail {

inline std::string group_columns(std::string_view prefix, std::size_t n) {
  std::string out;
  for (std::size_t g = 0; g < n; ++g) out += "," + std::string(prefix) + std::to_string(g);
  return out;
}

struct MetricRow {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0, variance = 0, mean_gap = 0, mean_worst = 0;
  std::vector<double> group_accuracy;
};

inline MetricRow in_fl_row(const RunSummary& r) {
  MetricRow m{r.test_report.accuracy, r.test_report.precision, r.test_report.recall, r.test_report.f1,
              r.fairness.variance,    r.fairness.mean_gap,     r.fairness.mean_worst, {}};
  for (const auto& g : r.fairness.groups) m.group_accuracy.push_back(g.accuracy);
  return m;
}

inline MetricRow median_row(const std::vector<MetricRow>& rows) {
  auto col = [&](auto field) {
    std::vector<double> xs;
    for (const auto& r : rows) xs.push_back(field(r));
    return median(xs);
  };
  MetricRow m;
  m.accuracy = col([](const MetricRow& r) { return r.accuracy; });
  m.precision = col([](const MetricRow& r) { return r.precision; });
  m.recall = col([](const MetricRow& r) { return r.recall; });
  m.f1 = col([](const MetricRow& r) { return r.f1; });
  m.variance = col([](const MetricRow& r) { return r.variance; });
  m.mean_gap = col([](const MetricRow& r) { return r.mean_gap; });
  m.mean_worst = col([](const MetricRow& r) { return r.mean_worst; });
  for (std::size_t g = 0; g < rows.front().group_accuracy.size(); ++g) {
    m.group_accuracy.push_back(col([g](const MetricRow& r) { return r.group_accuracy[g]; }));
  }
  return m;
}

inline MetricRow mean_row(const std::vector<MetricRow>& rows) {
  MetricRow m = rows.front();
  m.group_accuracy.assign(rows.front().group_accuracy.size(), 0.0);
  m.accuracy = m.precision = m.recall = m.f1 = m.variance = m.mean_gap = m.mean_worst = 0.0;
  for (const auto& r : rows) {
    m.accuracy += r.accuracy;
    m.precision += r.precision;
    m.recall += r.recall;
    m.f1 += r.f1;
    m.variance += r.variance;
    m.mean_gap += r.mean_gap;
    m.mean_worst += r.mean_worst;
    for (std::size_t g = 0; g < m.group_accuracy.size(); ++g) m.group_accuracy[g] += r.group_accuracy[g];
  }
  const auto n = static_cast<double>(rows.size());
  for (double* v : {&m.accuracy, &m.precision, &m.recall, &m.f1, &m.variance, &m.mean_gap, &m.mean_worst}) *v /= n;
  for (double& v : m.group_accuracy) v /= n;
  return m;
}

inline std::string metric_cells(const MetricRow& m) {
  std::string out = csv::format_fixed(m.accuracy) + ',' + csv::format_fixed(m.precision) + ',' +
                    csv::format_fixed(m.recall) + ',' + csv::format_fixed(m.f1) + ',' +
                    csv::format_fixed(m.variance, 8) + ',' + csv::format_fixed(m.mean_gap) + ',' +
                    csv::format_fixed(m.mean_worst);
  for (double a : m.group_accuracy) out += ',' + csv::format_fixed(a);
  return out;
}

inline std::vector<MetricRow> seed_rows(const ExperimentSummary& s, const Strategy& strategy) {
  std::vector<MetricRow> rows;
  for (auto seed : s.seeds) {
    if (const auto* r = s.find(strategy, seed)) rows.push_back(in_fl_row(*r));
  }
  return rows;
}

}  // namespace detail

inline std::string in_fl_comparison_header(std::size_t num_clients) {
  return "strategy,accuracy,precision,recall,f1,variance,mean_gap,mean_worst" +
         detail::group_columns("acc_client_", num_clients);
}

inline std::string in_fl_runs_header(std::size_t num_clients) {
  return "strategy,seed,accuracy,precision,recall,f1,variance,mean_gap,mean_worst" +
         detail::group_columns("acc_client_", num_clients);
}

inline constexpr std::string_view kScalingStudyHeader = "configuration,strategy,accuracy,f1,variance";

inline std::string gap_worst_header(std::size_t num_clients) {
  return "strategy,stage,metric" + detail::group_columns("client_", num_clients) + ",all";
}

inline constexpr std::string_view kSelectionReportHeader =
    "strategy,seed,client_id,global_val_accuracy,best_accuracy,best_epoch,selected_accuracy,selected_epoch,"
    "personalized_test_accuracy,spread,feasible";

inline constexpr std::string_view kMTrajectoryHeader = "strategy,seed,round,m";

// Median over seeds per strategy; when q-FFL ran with q = 0, 1 and 5 an
// additional "qffl(avg)" row averages those three.
inline std::string in_fl_comparison_csv(const ExperimentSummary& s) {
  std::string out = in_fl_comparison_header(s.num_clients) + "\n";
  std::vector<detail::MetricRow> qffl_rows;
  for (const auto& strategy : s.strategies) {
    const auto rows = detail::seed_rows(s, strategy);
    if (rows.empty()) continue;
    const auto m = detail::median_row(rows);
    out += strategy.label() + ',' + detail::metric_cells(m) + '\n';
    if (strategy.kind == StrategyKind::qffl && (strategy.q == 0.0 || strategy.q == 1.0 || strategy.q == 5.0)) {
      qffl_rows.push_back(m);
    }
  }
  if (qffl_rows.size() == 3) out += "qffl(avg)," + detail::metric_cells(detail::mean_row(qffl_rows)) + '\n';
  return out;
}

inline std::string in_fl_runs_csv(const ExperimentSummary& s) {
  std::string out = in_fl_runs_header(s.num_clients) + "\n";
  for (const auto& r : s.runs) {
    out += r.strategy.label() + ',' + std::to_string(r.seed) + ',' + detail::metric_cells(detail::in_fl_row(r)) + '\n';
  }
  return out;
}

inline std::string scaling_study_csv(const ExperimentSummary& s) {
  std::string out = std::string(kScalingStudyHeader) + "\n";
  if (!s.scaling_study) return out;
  auto emit = [&](const std::string& name, const Strategy& strategy) {
    const auto rows = detail::seed_rows(s, strategy);
    if (rows.empty()) return;
    const auto m = detail::median_row(rows);
    out += name + ',' + strategy.label() + ',' + csv::format_fixed(m.accuracy) + ',' + csv::format_fixed(m.f1) + ',' +
           csv::format_fixed(m.variance, 8) + '\n';
  };
  for (const auto& st : scaling_study_fixed()) emit("fixed m=" + std::to_string(st.m_fixed), st);
  for (const auto& st : scaling_study_auto()) emit("auto M=" + std::to_string(st.m_cap), st);
  return out;
}

inline std::string gap_worst_csv(const ExperimentSummary& s) {
  std::string out = gap_worst_header(s.num_clients) + "\n";
  auto emit = [&](const Strategy& strategy, std::string_view stage, auto pick) {
    std::vector<const FairnessReport*> reports;
    for (auto seed : s.seeds) {
      const auto* r = s.find(strategy, seed);
      if (r && pick(*r)) reports.push_back(pick(*r));
    }
    if (reports.empty()) return;
    for (std::string_view metric : {"gap", "worst"}) {
      out += strategy.label() + ',' + std::string(stage) + ',' + std::string(metric);
      const bool gap = metric == "gap";
      for (std::size_t g = 0; g < reports.front()->groups.size(); ++g) {
        std::vector<double> xs;
        for (const auto* rep : reports) xs.push_back(gap ? rep->groups[g].gap : rep->groups[g].worst);
        out += ',' + csv::format_fixed(median(xs), 4);
      }
      std::vector<double> all;
      for (const auto* rep : reports) all.push_back(gap ? rep->mean_gap : rep->mean_worst);
      out += ',' + csv::format_fixed(median(all), 4) + '\n';
    }
  };
  for (const auto& strategy : s.strategies) {
    emit(strategy, "in_fl", [](const RunSummary& r) -> const FairnessReport* { return &r.fairness; });
    emit(strategy, "post_fl",
         [](const RunSummary& r) -> const FairnessReport* { return r.post_fl ? &r.post_fl->fairness : nullptr; });
  }
  return out;
}

inline std::string selection_report_csv(const ExperimentSummary& s) {
  std::string out = std::string(kSelectionReportHeader) + "\n";
  for (const auto& r : s.runs) {
    if (!r.post_fl) continue;
    const auto& p = *r.post_fl;
    for (std::size_t c = 0; c < p.selection.chosen.size(); ++c) {
      const auto& ch = p.selection.chosen[c];
      out += r.strategy.label() + ',' + std::to_string(r.seed) + ',' + std::to_string(ch.client_id) + ',' +
             csv::format_fixed(p.global_val_accuracy[c]) + ',' + csv::format_fixed(p.peak_val_accuracy[c]) + ',' +
             std::to_string(p.peak_epoch[c]) + ',' + csv::format_fixed(ch.accuracy) + ',' + std::to_string(ch.epoch) +
             ',' + csv::format_fixed(p.personalized_test_accuracy[c]) + ',' + csv::format_fixed(p.selection.spread) +
             ',' + (p.selection.feasible ? "true" : "false") + '\n';
    }
  }
  return out;
}

inline std::string m_trajectory_csv(const ExperimentSummary& s) {
  std::string out = std::string(kMTrajectoryHeader) + "\n";
  for (const auto& r : s.runs) {
    for (std::size_t t = 0; t < r.m_trajectory.size(); ++t) {
      out += r.strategy.label() + ',' + std::to_string(r.seed) + ',' + std::to_string(t + 1) + ',' +
             std::to_string(r.m_trajectory[t]) + '\n';
    }
  }
  return out;
}

inline std::string summary_text(const ExperimentSummary& s) {
  std::string out = "runs: " + std::to_string(s.runs.size()) + " (" + std::to_string(s.strategies.size()) +
                    " strategies x " + std::to_string(s.seeds.size()) + " seeds)\n\n";
  out += "in-FL, median over seeds (test split)\n";
  for (const auto& strategy : s.strategies) {
    const auto rows = detail::seed_rows(s, strategy);
    if (rows.empty()) continue;
    const auto m = detail::median_row(rows);
    char line[256];
    std::snprintf(line, sizeof(line), "  %-24s acc %.4f  f1 %.4f  var %.6f  gap %.4f  worst %.4f\n",
                  strategy.label().c_str(), m.accuracy, m.f1, m.variance, m.mean_gap, m.mean_worst);
    out += line;
  }
  if (s.post_fl) {
    out += "\npost-FL personalized models, median over seeds (test split)\n";
    for (const auto& strategy : s.strategies) {
      std::vector<double> acc, var, spread;
      std::size_t infeasible = 0;
      for (auto seed : s.seeds) {
        const auto* r = s.find(strategy, seed);
        if (!r || !r->post_fl) continue;
        acc.push_back(r->post_fl->test_report.accuracy);
        var.push_back(r->post_fl->fairness.variance);
        spread.push_back(r->post_fl->selection.spread);
        infeasible += !r->post_fl->selection.feasible;
      }
      if (acc.empty()) continue;
      char line[256];
      std::snprintf(line, sizeof(line), "  %-24s acc %.4f  var %.6f  val spread %.4f  infeasible %zu\n",
                    strategy.label().c_str(), median(acc), median(var), median(spread), infeasible);
      out += line;
    }
  }
  return out;
}

// Writes every report into output_dir (created if missing):
//   in_fl_comparison.csv, in_fl_runs.csv, scaling_factor_study.csv,
//   gap_worst.csv, selection.csv, m_trajectory.csv, summary.txt,
//   rounds_seed<N>.csv, and per run post_fl/<strategy>_seed<N>_{checkpoints,selection}.csv
inline void emit_reports(const ExperimentSummary& s, const std::string& output_dir) {
  if (s.runs.empty()) throw ValidationError("emit_reports: empty summary");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(output_dir, ec);
  if (ec || !fs::is_directory(output_dir)) throw IoError("cannot create output directory '" + output_dir + "'");
  const fs::path dir(output_dir);

  csv::write_text((dir / "in_fl_comparison.csv").string(), in_fl_comparison_csv(s));
  csv::write_text((dir / "in_fl_runs.csv").string(), in_fl_runs_csv(s));
  csv::write_text((dir / "scaling_factor_study.csv").string(), scaling_study_csv(s));
  csv::write_text((dir / "gap_worst.csv").string(), gap_worst_csv(s));
  csv::write_text((dir / "selection.csv").string(), selection_report_csv(s));
  csv::write_text((dir / "m_trajectory.csv").string(), m_trajectory_csv(s));
  csv::write_text((dir / "summary.txt").string(), summary_text(s));

  for (auto seed : s.seeds) {
    std::string text = std::string(kRoundCsvHeader) + "\n";
    for (const auto& r : s.runs) {
      if (r.seed == seed) text += round_records_to_csv(r.rounds, false);
    }
    csv::write_text((dir / ("rounds_seed" + std::to_string(seed) + ".csv")).string(), text);
  }

  nlohmann::json fairness = nlohmann::json::array();
  for (const auto& r : s.runs) {
    auto doc = fairness_summary_json(r.fairness, &r.test_report);
    doc["strategy"] = r.strategy.label();
    doc["seed"] = r.seed;
    fairness.push_back(std::move(doc));
  }
  csv::write_text((dir / "in_fl_fairness.json").string(), fairness.dump(2) + "\n");

  if (s.post_fl) {
    fs::create_directories(dir / "post_fl", ec);
    if (ec) throw IoError("cannot create '" + (dir / "post_fl").string() + "'");
    for (const auto& r : s.runs) {
      if (!r.post_fl) continue;
      const std::string stem = strategy_slug(r.strategy) + "_seed" + std::to_string(r.seed);
      csv::write_text((dir / "post_fl" / (stem + "_checkpoints.csv")).string(), checkpoints_to_csv(r.post_fl->histories));
      csv::write_text((dir / "post_fl" / (stem + "_selection.csv")).string(), selection_to_csv(r.post_fl->selection));
    }
  }
}

}  // namespace fedfair

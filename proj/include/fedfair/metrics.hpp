#pragma once

// Classification metrics (support-weighted precision/recall/F1) and group
// fairness metrics: accuracy variance and the per-group gap/worst pair.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedfair/csv.hpp"
#include "fedfair/errors.hpp"

namespace fedfair {

struct Prediction {
  std::size_t group = 0;
  std::size_t true_label = 0;
  std::size_t predicted_label = 0;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

using GroupedPredictions = std::vector<Prediction>;

// counts(i, j) = number of samples with true class i predicted as j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes) : n_(num_classes), counts_(num_classes * num_classes, 0) {}

  std::size_t num_classes() const noexcept { return n_; }
  std::size_t operator()(std::size_t truth, std::size_t predicted) const { return counts_[truth * n_ + predicted]; }

  void add(std::size_t truth, std::size_t predicted) {
    if (truth >= n_ || predicted >= n_) {
      throw ValidationError("confusion matrix: label out of range (" + std::to_string(truth) + ", " +
                            std::to_string(predicted) + ") for " + std::to_string(n_) + " classes");
    }
    ++counts_[truth * n_ + predicted];
  }

  std::size_t total() const {
    std::size_t t = 0;
    for (auto c : counts_) t += c;
    return t;
  }
  std::size_t trace() const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, i);
    return t;
  }
  std::size_t row_total(std::size_t truth) const {
    std::size_t t = 0;
    for (std::size_t j = 0; j < n_; ++j) t += (*this)(truth, j);
    return t;
  }
  std::size_t column_total(std::size_t predicted) const {
    std::size_t t = 0;
    for (std::size_t i = 0; i < n_; ++i) t += (*this)(i, predicted);
    return t;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

inline ConfusionMatrix confusion_matrix(std::span<const Prediction> preds, std::size_t num_classes) {
  ConfusionMatrix cm(num_classes);
  for (const auto& p : preds) cm.add(p.true_label, p.predicted_label);
  return cm;
}

struct ClassMetrics {
  std::size_t support = 0;  // true instances
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // Set when the class was never predicted (precision fixed to 0) or never occurs (recall fixed to 0).
  bool degenerate = false;
};

struct ClassificationReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::vector<ClassMetrics> per_class;
  bool has_degenerate_class = false;
};

// One-vs-rest precision/recall/F1 per class, averaged with weights equal to
// each class's true-instance count. Zero denominators give 0.
inline ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (total == 0) throw ValidationError("classification_report: empty confusion matrix");

  ClassificationReport report;
  report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t k = 0; k < cm.num_classes(); ++k) {
    ClassMetrics m;
    const auto tp = static_cast<double>(cm(k, k));
    const auto predicted = cm.column_total(k);
    m.support = cm.row_total(k);
    if (predicted > 0) m.precision = tp / static_cast<double>(predicted);
    else m.degenerate = true;
    if (m.support > 0) m.recall = tp / static_cast<double>(m.support);
    else m.degenerate = true;
    if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);

    const double w = static_cast<double>(m.support) / static_cast<double>(total);
    report.precision += w * m.precision;
    report.recall += w * m.recall;
    report.f1 += w * m.f1;
    report.has_degenerate_class |= m.degenerate && m.support > 0;
    report.per_class.push_back(m);
  }
  return report;
}

// Population variance (divisor |C|).
inline double accuracy_variance(std::span<const double> per_group_accuracy) {
  if (per_group_accuracy.empty()) throw ValidationError("accuracy_variance: no groups");
  // Shifting by the first value keeps identical inputs at exactly zero.
  const double origin = per_group_accuracy.front();
  const auto n = static_cast<double>(per_group_accuracy.size());
  double offset = 0.0;
  for (double a : per_group_accuracy) offset += a - origin;
  offset /= n;
  double var = 0.0;
  for (double a : per_group_accuracy) var += (a - origin - offset) * (a - origin - offset);
  return var / n;
}

struct GroupFairness {
  std::size_t group = 0;
  std::size_t samples = 0;
  double accuracy = 0.0;             // Acc(s)
  double complement_accuracy = 0.0;  // Acc(not s), pooled over every other group's samples
  double gap = 0.0;
  double worst = 0.0;
};

struct FairnessReport {
  std::vector<GroupFairness> groups;  // ascending group id
  double variance = 0.0;
  double mean_gap = 0.0;
  double mean_worst = 0.0;
  double overall_accuracy = 0.0;
};

// Groups are the distinct group ids present; each needs a nonempty complement.
inline FairnessReport gap_worst_report(std::span<const Prediction> preds) {
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally;  // group -> (correct, total)
  std::size_t correct_all = 0;
  for (const auto& p : preds) {
    auto& [correct, total] = tally[p.group];
    const bool hit = p.true_label == p.predicted_label;
    correct += hit;
    ++total;
    correct_all += hit;
  }
  if (tally.size() < 2) {
    throw ValidationError("gap_worst_report: need at least two groups so every group has a complement");
  }

  FairnessReport report;
  report.overall_accuracy = static_cast<double>(correct_all) / static_cast<double>(preds.size());
  std::vector<double> accuracies;
  for (const auto& [g, ct] : tally) {
    const auto [correct, total] = ct;
    GroupFairness gf;
    gf.group = g;
    gf.samples = total;
    gf.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    gf.complement_accuracy =
        static_cast<double>(correct_all - correct) / static_cast<double>(preds.size() - total);
    gf.gap = std::abs(gf.accuracy - gf.complement_accuracy);
    gf.worst = std::min(gf.accuracy, gf.complement_accuracy);
    report.mean_gap += gf.gap;
    report.mean_worst += gf.worst;
    accuracies.push_back(gf.accuracy);
    report.groups.push_back(gf);
  }
  const auto n = static_cast<double>(report.groups.size());
  report.mean_gap /= n;
  report.mean_worst /= n;
  report.variance = accuracy_variance(accuracies);
  return report;
}

inline constexpr std::string_view kFairnessCsvHeader = "group,accuracy,gap,worst";

inline std::string fairness_report_to_csv(const FairnessReport& report) {
  std::string out = std::string(kFairnessCsvHeader) + "\n";
  for (const auto& g : report.groups) {
    out += std::to_string(g.group) + ',' + csv::format_double(g.accuracy) + ',' + csv::format_double(g.gap) + ',' +
           csv::format_double(g.worst) + '\n';
  }
  return out;
}

// Rows of a fairness CSV; only the per-group columns are recoverable.
inline std::vector<GroupFairness> fairness_rows_from_lines(const std::vector<std::string>& lines) {
  csv::expect_header(lines, kFairnessCsvHeader);
  std::vector<GroupFairness> out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto f = csv::split(lines[li]);
    if (f.size() != 4) throw ParseError(li + 1, "expected 4 fields");
    GroupFairness g;
    g.group = csv::parse_index(f[0], li + 1, "group");
    g.accuracy = csv::parse_double(f[1], li + 1, "accuracy");
    g.gap = csv::parse_double(f[2], li + 1, "gap");
    g.worst = csv::parse_double(f[3], li + 1, "worst");
    out.push_back(g);
  }
  return out;
}

inline nlohmann::json fairness_summary_json(const FairnessReport& report,
                                            const ClassificationReport* classification = nullptr) {
  nlohmann::json doc;
  doc["num_groups"] = report.groups.size();
  doc["overall_accuracy"] = report.overall_accuracy;
  doc["accuracy_variance"] = report.variance;
  doc["mean_gap"] = report.mean_gap;
  doc["mean_worst"] = report.mean_worst;
  auto& groups = doc["groups"] = nlohmann::json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"group", g.group},
                      {"samples", g.samples},
                      {"accuracy", g.accuracy},
                      {"complement_accuracy", g.complement_accuracy},
                      {"gap", g.gap},
                      {"worst", g.worst}});
  }
  if (classification) {
    doc["classification"] = {{"accuracy", classification->accuracy},
                             {"precision", classification->precision},
                             {"recall", classification->recall},
                             {"f1", classification->f1},
                             {"has_degenerate_class", classification->has_degenerate_class}};
  }
  return doc;
}

inline constexpr std::string_view kPredictionCsvHeader = "group,true_label,predicted_label";

inline GroupedPredictions predictions_from_lines(const std::vector<std::string>& lines) {
  csv::expect_header(lines, kPredictionCsvHeader);
  GroupedPredictions out;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    if (csv::trim(lines[li]).empty()) continue;
    const auto f = csv::split(lines[li]);
    if (f.size() != 3) throw ParseError(li + 1, "expected 3 fields, found " + std::to_string(f.size()));
    out.push_back({csv::parse_index(f[0], li + 1, "group"), csv::parse_index(f[1], li + 1, "true_label"),
                   csv::parse_index(f[2], li + 1, "predicted_label")});
  }
  if (out.empty()) throw ParseError(lines.size(), "prediction file has no rows");
  return out;
}

inline std::string predictions_to_csv(std::span<const Prediction> preds) {
  std::string out = std::string(kPredictionCsvHeader) + "\n";
  for (const auto& p : preds) {
    out += std::to_string(p.group) + ',' + std::to_string(p.true_label) + ',' + std::to_string(p.predicted_label) + '\n';
  }
  return out;
}

}  // namespace fedfair

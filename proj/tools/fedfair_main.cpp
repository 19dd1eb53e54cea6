// fedfair: generate synthetic client data, run federated fairness
// experiments and evaluate external prediction logs.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "fedfair/csv.hpp"
#include "fedfair/datagen.hpp"
#include "fedfair/harness/config.hpp"
#include "fedfair/harness/experiment.hpp"
#include "fedfair/harness/reports.hpp"
#include "fedfair/metrics.hpp"

namespace {

constexpr const char* kOutputDirEnv = "FEDFAIR_OUTPUT_DIR";

// --out-dir beats the environment, which beats the config file.
std::string resolve_output_dir(const std::string& flag, const std::string& from_config) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return from_config;
}

int generate_data(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed,
                  bool desk) {
  auto cfg = fedfair::parse_config(config_path, {.desk_scale = desk});
  if (cfg.data_path) throw fedfair::ValidationError("config points at data.path; nothing to generate");
  auto data = fedfair::prepare_data(cfg, seed.value_or(cfg.seeds.front()));
  fedfair::write_dataset_csv(out, data.dataset);
  std::cout << "wrote " << data.dataset.size() << " samples for " << data.partitions.size() << " clients to " << out
            << "\n";
  return 0;
}

int run(const std::string& config_path, const std::string& out_dir, const std::string& strategy,
        std::optional<std::uint64_t> seed, bool desk) {
  auto cfg = fedfair::parse_config(config_path, {.desk_scale = desk});
  if (!strategy.empty()) {
    cfg.strategies = {fedfair::parse_strategy(strategy)};
    cfg.scaling_study = false;
  }
  if (seed) cfg.seeds = {*seed};
  cfg.output_dir = resolve_output_dir(out_dir, cfg.output_dir);

  auto summary = fedfair::run_experiment(
      cfg, [&](const fedfair::ExperimentSummary& partial) { fedfair::emit_reports(partial, cfg.output_dir); });
  fedfair::emit_reports(summary, cfg.output_dir);
  std::cout << fedfair::summary_text(summary) << "reports written to " << cfg.output_dir << "\n";
  return 0;
}

int evaluate(const std::string& predictions_path, const std::string& out_dir, std::size_t num_classes) {
  const auto preds = fedfair::predictions_from_lines(fedfair::csv::read_lines(predictions_path));
  if (num_classes == 0) {
    for (const auto& p : preds) num_classes = std::max({num_classes, p.true_label + 1, p.predicted_label + 1});
    num_classes = std::max<std::size_t>(num_classes, 2);
  }
  const auto report = fedfair::classification_report(fedfair::confusion_matrix(preds, num_classes));
  const auto fairness = fedfair::gap_worst_report(preds);

  const std::string dir = resolve_output_dir(out_dir, "out");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw fedfair::IoError("cannot create output directory '" + dir + "'");
  const std::filesystem::path base(dir);
  fedfair::csv::write_text((base / "fairness.csv").string(), fedfair::fairness_report_to_csv(fairness));
  fedfair::csv::write_text((base / "fairness_summary.json").string(),
                           fedfair::fairness_summary_json(fairness, &report).dump(2) + "\n");
  std::cout << "accuracy " << report.accuracy << ", variance " << fairness.variance << ", mean gap "
            << fairness.mean_gap << ", mean worst " << fairness.mean_worst << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning fairness simulator"};
  app.require_subcommand(1);

  std::string config_path, out_path, out_dir, strategy, predictions_path;
  std::optional<std::uint64_t> seed;
  bool desk = false;
  std::size_t num_classes = 0;

  auto* gen = app.add_subcommand("generate-data", "Write a synthetic, split dataset as CSV");
  gen->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "Output CSV path")->required();
  gen->add_option("--seed", seed, "Data seed (default: first experiment seed)");
  gen->add_flag("--desk-scale", desk, "Apply the desk-scale preset");

  auto* runc = app.add_subcommand("run", "Run in-FL training, post-FL personalization and write reports");
  runc->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
  runc->add_option("--out-dir", out_dir, std::string("Report directory (else $") + kOutputDirEnv + ", else config)");
  runc->add_option("--strategy", strategy, "Run only this strategy, e.g. fedauto(Q=1.5;M=3)");
  runc->add_option("--seed", seed, "Run only this seed");
  runc->add_flag("--desk-scale", desk, "Apply the desk-scale preset before the config keys");

  auto* eval = app.add_subcommand("evaluate", "Fairness and classification metrics for a prediction log");
  eval->add_option("--predictions", predictions_path, "CSV with group,true_label,predicted_label")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--out-dir", out_dir, std::string("Report directory (else $") + kOutputDirEnv + ", else ./out)");
  eval->add_option("--num-classes", num_classes, "Class count (default: inferred from labels)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return generate_data(config_path, out_path, seed, desk);
    if (*runc) return run(config_path, out_dir, strategy, seed, desk);
    if (*eval) return evaluate(predictions_path, out_dir, num_classes);
  } catch (const std::exception& e) {
    std::cerr << "fedfair: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

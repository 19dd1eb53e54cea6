#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "fedfair/harness/config.hpp"
#include "fedfair/harness/experiment.hpp"
#include "fedfair/harness/reports.hpp"

namespace fedfair {
namespace {

namespace fs = std::filesystem;

const char* kTinyConfig = R"(# small federation for fast tests
data.num_clients = 3
data.num_classes = 3
data.feature_dim = 4
data.client_sizes = 40, 30, 20
fl.rounds = 2
fl.local_epochs = 1
fl.batch_size = 8
fl.lr = 0.05
post_fl.epochs = 3
experiment.strategies = fedavg
)";

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fedfair_harness_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::map<std::string, std::string> csv_files(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

TEST(Config, MinimalConfigGetsDefaults) {
  const auto cfg = parse_config_text("experiment.strategies = fedauto\n");
  EXPECT_EQ(cfg.fl.rounds, 100u);
  EXPECT_EQ(cfg.fl.local_epochs, 5u);
  EXPECT_EQ(cfg.fl.batch_size, 128u);
  EXPECT_DOUBLE_EQ(cfg.fl.base_lr, 1e-4);
  ASSERT_EQ(cfg.strategies.size(), 1u);
  EXPECT_DOUBLE_EQ(cfg.strategies[0].Q, 1.5);
  EXPECT_EQ(cfg.strategies[0].m_cap, 3);
  EXPECT_DOUBLE_EQ(cfg.post_fl.delta, 0.05);
  EXPECT_EQ(cfg.data.client_sizes, (std::vector<std::size_t>{147, 240, 165, 139, 77, 32}));
}

TEST(Config, RejectsInvalidQWithLineNumber) {
  try {
    parse_config_text("fl.rounds = 3\nexperiment.strategies = fedauto(Q=0.5)\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(Config, RejectsUnknownDuplicateAndMalformedKeys) {
  EXPECT_THROW(parse_config_text("fl.round = 3\nexperiment.strategies = fedavg\n"), ParseError);
  EXPECT_THROW(parse_config_text("fl.rounds = 3\nfl.rounds = 4\nexperiment.strategies = fedavg\n"), ParseError);
  EXPECT_THROW(parse_config_text("fl.rounds 3\n"), ParseError);
  EXPECT_THROW(parse_config_text("fl.rounds = three\nexperiment.strategies = fedavg\n"), ParseError);
  EXPECT_THROW(parse_config_text("fl.rounds = 3\n"), ParseError);
  EXPECT_THROW(parse_config_text("experiment.strategies = fedavg\ndata.client_sizes = 10, 10\n"), ParseError);
  EXPECT_THROW(parse_config_text("preset = laptop\nexperiment.strategies = fedavg\n"), ParseError);
}

TEST(Config, StrategyListKeepsParenthesisedCommasTogether) {
  const auto cfg = parse_config_text("experiment.strategies = fedavg, fedexp(m=2), fedauto(Q=2;M=4), qffl(q=5)\n");
  ASSERT_EQ(cfg.strategies.size(), 4u);
  EXPECT_EQ(cfg.strategies[2], Strategy::fed_auto(2.0, 4));
}

TEST(Config, DeskPresetAndFlagAgree) {
  const auto from_key = parse_config_text("preset = desk\nexperiment.strategies = fedavg\n");
  const auto from_flag = parse_config_text("experiment.strategies = fedavg\n", {.desk_scale = true});
  EXPECT_EQ(from_key, from_flag);
  EXPECT_EQ(from_key.fl.rounds, 30u);
  EXPECT_EQ(from_key.fl.local_epochs, 3u);
  // Explicit keys still override the preset.
  EXPECT_EQ(parse_config_text("preset = desk\nfl.rounds = 7\nexperiment.strategies = fedavg\n").fl.rounds, 7u);
}

TEST(Config, SerializeRoundTrips) {
  for (const char* text : {kTinyConfig, "preset = desk\nexperiment.strategies = fedavg, fedauto(Q=inf;M=3)\n",
                           "experiment.scaling_study = true\nexperiment.seeds = 0, 4\nmodel.hidden_dims = 8, 4\n"}) {
    const auto cfg = parse_config_text(text);
    EXPECT_EQ(parse_config_text(serialize_config(cfg)), cfg) << serialize_config(cfg);
  }
}

TEST(Config, NoiseRampFollowsClientCount) {
  const auto cfg = parse_config_text(kTinyConfig);
  ASSERT_EQ(cfg.data.client_noise_scales.size(), 3u);
  EXPECT_DOUBLE_EQ(cfg.data.client_noise_scales.front(), 1.0);
  EXPECT_DOUBLE_EQ(cfg.data.client_noise_scales.back(), 1.8);
}

TEST(Experiment, OneStrategyOneSeedOneRound) {
  auto cfg = parse_config_text(kTinyConfig);
  cfg.fl.rounds = 1;
  const auto s = run_experiment(cfg);
  ASSERT_EQ(s.runs.size(), 1u);
  EXPECT_EQ(s.num_clients, 3u);
  EXPECT_EQ(s.runs[0].rounds.size(), 1u);
  const auto rows = lines_of(round_records_to_csv(s.runs[0].rounds));
  EXPECT_EQ(rows.size(), 1u + 3u);
  EXPECT_EQ(lines_of(in_fl_comparison_csv(s)).size(), 2u);
  ASSERT_TRUE(s.runs[0].post_fl.has_value());
  EXPECT_EQ(s.runs[0].post_fl->histories.size(), 3u);
}

TEST(Experiment, CrossProductOfStrategiesAndSeeds) {
  auto cfg = parse_config_text(kTinyConfig);
  cfg.strategies = {Strategy::fed_avg(), Strategy::fed_auto()};
  cfg.seeds = {0, 1, 2};
  cfg.post_fl.enabled = false;
  const auto s = run_experiment(cfg);
  ASSERT_EQ(s.runs.size(), 6u);
  EXPECT_EQ(lines_of(in_fl_runs_csv(s)).size(), 7u);
  for (const auto& r : s.runs) {
    if (r.strategy.kind == StrategyKind::fed_auto) {
      EXPECT_EQ(r.m_trajectory.size(), cfg.fl.rounds);
    } else {
      EXPECT_TRUE(r.m_trajectory.empty());
    }
    EXPECT_FALSE(r.post_fl.has_value());
  }
  EXPECT_EQ(lines_of(m_trajectory_csv(s)).size(), 1u + 3u * cfg.fl.rounds);
}

TEST(Experiment, ScalingStudyTableHasSixRows) {
  auto cfg = parse_config_text(kTinyConfig);
  cfg.scaling_study = true;
  cfg.fl.rounds = 1;
  cfg.post_fl.enabled = false;
  const auto s = run_experiment(cfg);
  EXPECT_EQ(s.strategies.size(), 7u);
  const auto rows = lines_of(scaling_study_csv(s));
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0], kScalingStudyHeader);
  EXPECT_EQ(rows[1].rfind("fixed m=2,", 0), 0u);
  EXPECT_EQ(rows[6].rfind("auto M=4,", 0), 0u);
}

TEST(Experiment, QfflAverageRowNeedsAllThreeQs) {
  auto cfg = parse_config_text(kTinyConfig);
  cfg.strategies = {Strategy::q_ffl(0), Strategy::q_ffl(1), Strategy::q_ffl(5)};
  cfg.fl.rounds = 1;
  cfg.post_fl.enabled = false;
  const auto rows = lines_of(in_fl_comparison_csv(run_experiment(cfg)));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows.back().rfind("qffl(avg),", 0), 0u);
}

TEST(Experiment, ReportsAreByteIdenticalAcrossRuns) {
  const auto cfg = parse_config_text(kTinyConfig);
  const auto a = fresh_dir("det_a");
  const auto b = fresh_dir("det_b");
  emit_reports(run_experiment(cfg), a.string());
  emit_reports(run_experiment(cfg), b.string());
  const auto fa = csv_files(a);
  EXPECT_EQ(fa, csv_files(b));
  EXPECT_TRUE(fa.count("in_fl_comparison.csv"));
  EXPECT_TRUE(fa.count("rounds_seed0.csv"));
  EXPECT_TRUE(fa.count("post_fl/fedavg_seed0_selection.csv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(Experiment, GoldenHeaders) {
  const auto cfg = parse_config_text(kTinyConfig);
  const auto dir = fresh_dir("headers");
  emit_reports(run_experiment(cfg), dir.string());
  auto first = [&](const std::string& name) { return lines_of(slurp(dir / name)).at(0); };
  EXPECT_EQ(first("in_fl_comparison.csv"),
            "strategy,accuracy,precision,recall,f1,variance,mean_gap,mean_worst,acc_client_0,acc_client_1,acc_client_2");
  EXPECT_EQ(first("in_fl_runs.csv"),
            "strategy,seed,accuracy,precision,recall,f1,variance,mean_gap,mean_worst,acc_client_0,acc_client_1,"
            "acc_client_2");
  EXPECT_EQ(first("scaling_factor_study.csv"), "configuration,strategy,accuracy,f1,variance");
  EXPECT_EQ(first("gap_worst.csv"), "strategy,stage,metric,client_0,client_1,client_2,all");
  EXPECT_EQ(first("selection.csv"),
            "strategy,seed,client_id,global_val_accuracy,best_accuracy,best_epoch,selected_accuracy,selected_epoch,"
            "personalized_test_accuracy,spread,feasible");
  EXPECT_EQ(first("m_trajectory.csv"), "strategy,seed,round,m");
  EXPECT_EQ(first("rounds_seed0.csv"), "round,strategy,m,client_id,loss,weight,val_accuracy_client,val_accuracy_global");
  EXPECT_EQ(first("post_fl/fedavg_seed0_checkpoints.csv"), "client_id,epoch,val_accuracy");
  EXPECT_EQ(first("post_fl/fedavg_seed0_selection.csv"), "client_id,selected_epoch,selected_accuracy");
  fs::remove_all(dir);
}

TEST(Experiment, LoadsDatasetFromCsv) {
  auto cfg = parse_config_text(kTinyConfig);
  const auto data = prepare_data(cfg, 0);
  const auto path = fs::temp_directory_path() / "fedfair_harness_data.csv";
  write_dataset_csv(path.string(), data.dataset);
  auto from_file = cfg;
  from_file.data_path = path.string();
  const auto loaded = prepare_data(from_file, 5);
  EXPECT_EQ(loaded.dataset, data.dataset);
  EXPECT_EQ(loaded.partitions, data.partitions);
  fs::remove(path);
}

TEST(Experiment, EmitRejectsEmptySummary) {
  EXPECT_THROW(emit_reports(ExperimentSummary{}, fresh_dir("empty").string()), ValidationError);
}

TEST(Reports, MedianAndSlug) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  const auto slug = strategy_slug(Strategy::fed_auto());
  EXPECT_EQ(slug.find_first_of("();=/ "), std::string::npos) << slug;
}

}  // namespace
}  // namespace fedfair

#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "fedfair/personalize.hpp"
#include "test_support.hpp"

namespace fedfair {
namespace {

CheckpointHistory history(std::size_t client, std::vector<std::pair<std::size_t, double>> points) {
  CheckpointHistory h;
  h.client_id = client;
  for (auto [epoch, acc] : points) h.entries.push_back({epoch, acc, nullptr});
  return h;
}

ClientState client_with_all_train(const Dataset& ds, std::size_t val_from) {
  ClientState c;
  for (std::size_t i = 0; i < ds.size(); ++i) (i < val_from ? c.partition.train : c.partition.val).push_back(i);
  c.sample_count = c.partition.train.size();
  return c;
}

TEST(Selection, AllAtSameAccuracy) {
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.6}, {2, 0.75}}), history(1, {{3, 0.75}, {4, 0.7}})};
  const auto r = select_personalized_models(hs, 0.05);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.spread, 0.0);
  EXPECT_EQ(r.chosen[0].epoch, 2u);
  EXPECT_EQ(r.chosen[1].epoch, 3u);
}

TEST(Selection, WorkedTwoClientExample) {
  const std::vector<CheckpointHistory> hs{history(0, {{10, 0.70}, {20, 0.72}}),
                                          history(1, {{5, 0.68}, {15, 0.80}, {25, 0.74}})};
  const auto r = select_personalized_models(hs, 0.05);
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.chosen[0].epoch, 20u);
  EXPECT_EQ(r.chosen[1].epoch, 25u);
  EXPECT_EQ(r.chosen[1].entry_index, 2u);
  EXPECT_NEAR(r.spread, 0.02, 1e-12);
}

TEST(Selection, SacrificesPeaksToKeepGapSmall) {
  // Selected accuracies from the skin-type fine-tuning log, with higher peaks that break the window.
  const std::vector<double> chosen{0.709, 0.740, 0.738, 0.746, 0.738, 0.725};
  const std::vector<double> peaks{0.709, 0.740, 0.738, 0.772, 0.809, 0.725};
  std::vector<CheckpointHistory> hs;
  for (std::size_t c = 0; c < 6; ++c) {
    std::vector<std::pair<std::size_t, double>> pts{{10, 0.60}, {20, chosen[c]}};
    if (peaks[c] != chosen[c]) pts.push_back({30, peaks[c]});
    hs.push_back(history(c, pts));
  }
  const auto r = select_personalized_models(hs, 0.05);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.spread, 0.037, 1e-12);
  EXPECT_EQ(r.chosen[3].epoch, 20u);
  EXPECT_EQ(r.chosen[4].epoch, 20u);
}

TEST(Selection, BoundaryWindowIsNotLostToRounding) {
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.70}}), history(1, {{1, 0.75}})};
  const auto r = select_personalized_models(hs, 0.05);
  EXPECT_TRUE(r.feasible);
  EXPECT_NEAR(r.spread, 0.05, 1e-12);
}

TEST(Selection, InfeasibleReturnsMinimumSpread) {
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.5}, {2, 0.6}}), history(1, {{1, 0.9}, {2, 0.7}})};
  const auto r = select_personalized_models(hs, 0.05);
  EXPECT_FALSE(r.feasible);
  EXPECT_NEAR(r.spread, 0.1, 1e-12);
  EXPECT_EQ(r.chosen[0].epoch, 2u);
  EXPECT_EQ(r.chosen[1].epoch, 2u);
}

TEST(Selection, InfiniteDeltaPicksEachPeakEarliestOnTies) {
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.5}, {2, 0.9}, {3, 0.9}}), history(1, {{1, 0.2}, {2, 0.1}})};
  const auto r = select_personalized_models(hs, std::numeric_limits<double>::infinity());
  EXPECT_TRUE(r.feasible);
  EXPECT_EQ(r.chosen[0].epoch, 2u);
  EXPECT_EQ(r.chosen[1].epoch, 1u);
}

TEST(Selection, ChoicesComeFromHistories) {
  RngStream rng(4, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<CheckpointHistory> hs;
    const std::size_t clients = 1 + rng.uniform_index(5);
    for (std::size_t c = 0; c < clients; ++c) {
      std::vector<std::pair<std::size_t, double>> pts;
      const std::size_t n = 1 + rng.uniform_index(8);
      for (std::size_t e = 1; e <= n; ++e) pts.push_back({e, static_cast<double>(rng.uniform_index(21)) / 20.0});
      hs.push_back(history(c, pts));
    }
    const auto r = select_personalized_models(hs, 0.1);
    ASSERT_EQ(r.chosen.size(), clients);
    for (std::size_t c = 0; c < clients; ++c) {
      const auto& e = hs[c].entries.at(r.chosen[c].entry_index);
      EXPECT_EQ(e.epoch, r.chosen[c].epoch);
      EXPECT_EQ(e.val_accuracy, r.chosen[c].accuracy);
    }
    if (r.feasible) {
      EXPECT_LE(r.spread, 0.1 + 1e-12);
    }
  }
}

TEST(Selection, RejectsBadInput) {
  EXPECT_THROW(select_personalized_models(std::vector<CheckpointHistory>{}, 0.05), ValidationError);
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.5}})};
  EXPECT_THROW(select_personalized_models(hs, 0.0), ValidationError);
  const std::vector<CheckpointHistory> empty{history(0, {})};
  EXPECT_THROW(select_personalized_models(empty, 0.05), ValidationError);
}

TEST(FineTune, ZeroLearningRateKeepsGlobalAccuracy) {
  const auto ds = testing::make_dataset({{6, 6, 6}}, 3);
  const auto client = client_with_all_train(ds, 12);
  const auto global = init_params({3, {}, 3}, 1);
  FineTuneConfig cfg;
  cfg.epochs = 1;
  cfg.base_lr = 0.0;
  const auto h = fine_tune_client(client, ds, global, cfg);
  ASSERT_EQ(h.entries.size(), 1u);
  EXPECT_EQ(h.entries[0].epoch, 1u);
  EXPECT_EQ(h.entries[0].val_accuracy, evaluate_accuracy(global, ds, client.partition.val));
  EXPECT_EQ(*h.entries[0].snapshot, global);
}

TEST(FineTune, SeparableClientReachesPerfectAccuracy) {
  Dataset ds;
  ds.num_classes = 2;
  std::vector<double> values;
  for (std::size_t i = 0; i < 40; ++i) {
    const std::size_t label = i % 2;
    const double x = (label ? 2.0 : -2.0) + 0.05 * static_cast<double>(i % 7);
    values.insert(values.end(), {x, 0.3 * static_cast<double>(i % 5)});
    ds.labels.push_back(label);
    ds.client_ids.push_back(0);
    ds.split_tags.push_back(Split::train);
  }
  ds.features = Matrix(40, 2, std::move(values));
  const auto client = client_with_all_train(ds, 30);
  FineTuneConfig cfg;
  cfg.epochs = 50;
  cfg.base_lr = 0.1;
  cfg.batch_size = 8;
  const auto h = fine_tune_client(client, ds, zeros_like(init_params({2, {}, 2}, 0)), cfg);
  EXPECT_EQ(h.entries.back().val_accuracy, 1.0);
  EXPECT_EQ(h.entries.size(), 50u);
}

TEST(FineTune, DeterministicAndHonoursEvalEvery) {
  const auto ds = testing::make_dataset({{10, 10}}, 3, 2);
  const auto client = client_with_all_train(ds, 14);
  const auto global = init_params({3, {}, 2}, 3);
  FineTuneConfig cfg;
  cfg.epochs = 7;
  cfg.eval_every = 3;
  cfg.base_lr = 0.05;
  cfg.batch_size = 4;
  const auto a = fine_tune_client(client, ds, global, cfg);
  const auto b = fine_tune_client(client, ds, global, cfg);
  ASSERT_EQ(a.entries.size(), 3u);
  EXPECT_EQ(a.entries[0].epoch, 3u);
  EXPECT_EQ(a.entries[1].epoch, 6u);
  EXPECT_EQ(a.entries[2].epoch, 7u);
  for (std::size_t i = 0; i < a.entries.size(); ++i) {
    EXPECT_EQ(a.entries[i].val_accuracy, b.entries[i].val_accuracy);
    EXPECT_EQ(*a.entries[i].snapshot, *b.entries[i].snapshot);
  }
}

TEST(RetainSnapshots, KeepsOnlySelected) {
  std::vector<CheckpointHistory> hs{history(0, {{1, 0.5}, {2, 0.6}})};
  for (auto& e : hs[0].entries) e.snapshot = std::make_shared<const ModelParams>();
  const auto r = select_personalized_models(hs, 0.05);
  retain_selected_snapshots(hs, r);
  EXPECT_EQ(hs[0].entries[0].snapshot, nullptr);
  EXPECT_NE(hs[0].entries[1].snapshot, nullptr);
}

TEST(CheckpointCsv, RoundTrips) {
  const std::vector<CheckpointHistory> hs{history(0, {{1, 0.5}, {2, 0.625}}), history(1, {{1, 0.75}})};
  const auto text = checkpoints_to_csv(hs);
  EXPECT_EQ(text, "client_id,epoch,val_accuracy\n0,1,0.5\n0,2,0.625\n1,1,0.75\n");
  const auto back = checkpoints_from_lines({"client_id,epoch,val_accuracy", "0,1,0.5", "0,2,0.625", "1,1,0.75"});
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].entries[1].val_accuracy, 0.625);
  EXPECT_THROW(checkpoints_from_lines({"client_id,epoch,val_accuracy", "0,2,0.5", "0,1,0.6"}), ParseError);

  const auto sel = select_personalized_models(hs, 0.5);
  const auto sel_text = selection_to_csv(sel);
  std::vector<std::string> lines;
  for (std::size_t start = 0; start < sel_text.size();) {
    const auto end = sel_text.find('\n', start);
    lines.push_back(sel_text.substr(start, end - start));
    start = end + 1;
  }
  const auto parsed = selection_from_lines(lines);
  ASSERT_EQ(parsed.size(), 2u);
  EXPECT_EQ(parsed[0].epoch, sel.chosen[0].epoch);
  EXPECT_EQ(parsed[1].accuracy, sel.chosen[1].accuracy);
}

}  // namespace
}  // namespace fedfair

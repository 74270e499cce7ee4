#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "fixtures.hpp"
#include "flowhazard/experiment.hpp"

using namespace flowhazard;
using namespace flowhazard::experiment;

namespace {

template <typename F>
void expect_error(ErrorKind kind, F&& f) {
  try {
    f();
    FAIL() << "expected " << to_string(kind);
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), kind) << e.what();
  }
}

FlowDataset indexed_flows(std::size_t n) {
  std::vector<FlowRecord> rows;
  for (std::size_t i = 0; i < n; ++i) rows.push_back({{static_cast<double>(i), 10.0 * static_cast<double>(i)}, "P"});
  return FlowDataset(FlowSchema{{"idx", "v"}, "Label"}, rows);
}

void check_sequence_invariants(const SequenceResult& r, const Band& band, std::size_t seq_len) {
  EXPECT_EQ(r.survival.event, r.detected_flow_index.has_value());
  if (r.detected_flow_index) {
    EXPECT_EQ(r.survival.time, static_cast<double>(*r.detected_flow_index));
    ASSERT_LT(*r.detected_flow_index, r.score_trace.size());
    EXPECT_TRUE(band.contains(r.score_trace[*r.detected_flow_index]));
    for (std::size_t i = 0; i < *r.detected_flow_index; ++i) EXPECT_FALSE(band.contains(r.score_trace[i]));
    EXPECT_EQ(r.score_trace.size(), *r.detected_flow_index + 1);
  } else {
    EXPECT_EQ(r.survival.time, static_cast<double>(seq_len));
    EXPECT_EQ(r.score_trace.size(), seq_len);
  }
  EXPECT_LE(r.score_trace.size(), seq_len);
  for (double c : r.survival.covariates) EXPECT_GE(c, 0.0);
}

}  // namespace

TEST(BuildSequences, SingleFlowRepeats) {
  Rng rng = make_rng(1);
  const auto seqs = build_sequences(indexed_flows(1), 4, 7, rng);
  ASSERT_EQ(seqs.size(), 4u);
  for (const auto& s : seqs) EXPECT_EQ(s.rows, std::vector<std::size_t>(7, 0));
}

TEST(BuildSequences, DefaultShapeAndDeterminism) {
  const auto post = indexed_flows(50);
  Rng a = make_rng(9);
  Rng b = make_rng(9);
  const auto sa = build_sequences(post, 500, 100, a);
  const auto sb = build_sequences(post, 500, 100, b);
  ASSERT_EQ(sa.size(), 500u);
  for (std::size_t i = 0; i < sa.size(); ++i) {
    EXPECT_EQ(sa[i].rows.size(), 100u);
    EXPECT_EQ(sa[i].rows, sb[i].rows);
    for (auto r : sa[i].rows) EXPECT_LT(r, post.size());
  }
}

TEST(BuildSequences, EmptyPost) {
  Rng rng = make_rng(1);
  expect_error(ErrorKind::EmptyInput, [&] { build_sequences(FlowDataset(FlowSchema{{"a"}, "L"}, {}), 1, 1, rng); });
}

TEST(RunSequence, ConstantInBandScoreDetectsAtZero) {
  const auto post = indexed_flows(5);
  const FeatureSummary pre{{1.0, 1.0}, {1.0, 1.0}, 0};
  const FlowSequence seq{{3, 1, 2}};
  auto scorer = [](std::span<const double>) { return 0.45; };
  const auto r = run_sequence(scorer, post, seq, Band{}, pre);
  ASSERT_TRUE(r.detected_flow_index.has_value());
  EXPECT_EQ(*r.detected_flow_index, 0u);
  EXPECT_EQ(r.survival.time, 0.0);
  EXPECT_EQ(r.survival.covariates, (std::vector<double>{2.0, 29.0}));
  check_sequence_invariants(r, Band{}, 3);
}

TEST(RunSequence, ConstantOutOfBandScoreCensors) {
  const auto post = indexed_flows(5);
  const FeatureSummary pre{{1.0, 0.0}, {1.0, 1.0}, 0};
  const FlowSequence seq{{0, 2, 4, 4}};
  auto scorer = [](std::span<const double>) { return 0.99; };
  const auto r = run_sequence(scorer, post, seq, Band{}, pre);
  EXPECT_FALSE(r.detected_flow_index.has_value());
  EXPECT_FALSE(r.survival.event);
  EXPECT_EQ(r.survival.time, 4.0);
  // Mean of |idx - 1| over {0,2,4,4} and of |v - 0| over {0,20,40,40}.
  EXPECT_DOUBLE_EQ(r.survival.covariates[0], (1.0 + 1.0 + 3.0 + 3.0) / 4.0);
  EXPECT_DOUBLE_EQ(r.survival.covariates[1], (0.0 + 20.0 + 40.0 + 40.0) / 4.0);
  check_sequence_invariants(r, Band{}, 4);
}

TEST(RunSequence, FirstHitScanWithClosedBand) {
  const auto post = indexed_flows(4);
  const std::vector<double> scores{0.9, 0.61, 0.60, 0.2};
  auto scorer = [&](std::span<const double> x) { return scores[static_cast<std::size_t>(x[0])]; };
  const FeatureSummary pre{{0.5, 12.0}, {1.0, 1.0}, 0};
  const auto r = run_sequence(scorer, post, FlowSequence{{0, 1, 2, 3}}, Band{}, pre);
  ASSERT_TRUE(r.detected_flow_index.has_value());
  EXPECT_EQ(*r.detected_flow_index, 2u);
  EXPECT_EQ(r.survival.covariates, (std::vector<double>{1.5, 8.0}));
  EXPECT_EQ(r.score_trace, (std::vector<double>{0.9, 0.61, 0.60}));
  EXPECT_TRUE(Band{}.contains(0.40));
  EXPECT_FALSE(Band{}.contains(0.6000001));
}

TEST(RunSequence, SummaryWidthMismatch) {
  const auto post = indexed_flows(2);
  auto scorer = [](std::span<const double>) { return 0.5; };
  expect_error(ErrorKind::SchemaMismatch,
               [&] { run_sequence(scorer, post, FlowSequence{{0}}, Band{}, FeatureSummary{{1.0}, {1.0}, 0}); });
}

TEST(Config, Validation) {
  ExperimentConfig c;
  c.band = {0.6, 0.4};
  expect_error(ErrorKind::InvalidConfig, [&] { c.validate(); });
  c = ExperimentConfig{};
  c.seq_len = 0;
  expect_error(ErrorKind::InvalidConfig, [&] { c.validate(); });
  c = ExperimentConfig{};
  c.band = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  EXPECT_NO_THROW(c.validate());
  c.band.low = std::numeric_limits<double>::quiet_NaN();
  expect_error(ErrorKind::InvalidConfig, [&] { c.validate(); });
}

TEST(RunIteration, SmokeRunHasOneRowPerSequence) {
  const auto data = fixture::planted_data(1);
  auto cfg = fixture::planted_config(fixture::planted_forest(), 3);
  cfg.n_sequences = 3;
  const auto it = run_iteration(cfg, data, 0);
  EXPECT_EQ(it.sequences.size(), 3u);
  EXPECT_EQ(it.records().size(), 3u);
  EXPECT_EQ(it.beta_full.size(), 3u);
  EXPECT_EQ(it.km.n_total, 3u);
  EXPECT_GE(it.holdout_accuracy, 0.95);
  for (const auto& r : it.sequences) check_sequence_invariants(r, cfg.band, cfg.seq_len);
}

TEST(RunIteration, PostMatchingKnownAttackIsRarelyDetected) {
  auto data = fixture::planted_data(2);
  data.post = fixture::gaussian_class("NOVEL", {4.0, 4.0, 1.0}, 0.3, 1000, 77);
  for (const models::RegressorKind& kind :
       {models::RegressorKind{models::RandomForestParams{}}, models::RegressorKind{models::BayesianRidgeParams{}},
        models::RegressorKind{models::LinearSvrParams{}}}) {
    auto cfg = fixture::planted_config(kind, 5);
    cfg.n_sequences = 100;
    const auto it = run_iteration(cfg, data, 0);
    EXPECT_LT(it.detection_rate, 0.2) << models::kind_name(kind);
  }
}

TEST(RunIteration, PlantedFeatureHasPositiveBeta) {
  const auto data = fixture::planted_data(3);
  const auto cfg = fixture::planted_config(fixture::planted_forest(), 21);
  int positive = 0;
  for (std::size_t i = 0; i < cfg.n_iterations; ++i) {
    const auto it = run_iteration(cfg, data, i);
    for (const auto& r : it.sequences) check_sequence_invariants(r, cfg.band, cfg.seq_len);
    if (it.usable() && it.beta_full[1] > 0.0) ++positive;
  }
  EXPECT_GE(positive, 8);
}

TEST(RunIteration, AccuracyGateReportsAchievedValue) {
  auto data = fixture::planted_data(4);
  data.pre_attack = fixture::gaussian_class("KNOWN", {0.2, 0.2, 1.0}, 0.3, 400, 8);
  auto cfg = fixture::planted_config(models::BayesianRidgeParams{}, 1);
  try {
    run_iteration(cfg, data, 0);
    FAIL() << "gate should fail";
  } catch (const AccuracyGateError& e) {
    EXPECT_EQ(e.kind(), ErrorKind::AccuracyGateFailed);
    EXPECT_LT(e.achieved(), 0.95);
    EXPECT_EQ(e.required(), 0.95);
  }
  expect_error(ErrorKind::AccuracyGateFailed, [&] { run_experiment(cfg, data); });
}

TEST(RunIteration, StreamsDependOnIterationIndex) {
  const auto data = fixture::planted_data(6);
  const auto cfg = fixture::planted_config(fixture::planted_forest(), 4);
  const auto a = run_iteration(cfg, data, 0);
  const auto b = run_iteration(cfg, data, 0);
  const auto c = run_iteration(cfg, data, 1);
  auto times = [](const IterationResult& it) {
    std::vector<double> t;
    for (const auto& r : it.sequences) t.push_back(r.survival.time);
    return t;
  };
  EXPECT_EQ(times(a), times(b));
  EXPECT_NE(times(a), times(c));
}

TEST(RunExperiment, SingleIterationMeanEqualsBeta) {
  const auto data = fixture::planted_data(7);
  auto cfg = fixture::planted_config(models::BayesianRidgeParams{}, 2);
  cfg.n_iterations = 1;
  const auto rep = run_experiment(cfg, data);
  ASSERT_EQ(rep.n_usable_fits, 1u);
  EXPECT_EQ(rep.mean_beta, rep.iterations[0].beta_full);
}

TEST(RunExperiment, UnreachableBandCensorsEverything) {
  const auto data = fixture::planted_data(8);
  auto cfg = fixture::planted_config(models::LinearSvrParams{}, 2);
  cfg.n_iterations = 2;
  cfg.n_sequences = 50;
  cfg.band = {50.0, 60.0};
  const auto rep = run_experiment(cfg, data);
  EXPECT_EQ(rep.n_usable_fits, 0u);
  EXPECT_EQ(rep.detection_rate, 0.0);
  EXPECT_TRUE(rep.selected_features.empty());
  for (const auto& it : rep.iterations) {
    ASSERT_TRUE(it.cox_error.has_value());
    EXPECT_EQ(*it.cox_error, "NoEvents");
  }
  EXPECT_TRUE(rep.pooled_km.times.empty());
  EXPECT_EQ(rep.pooled_km.n_censored_tail(), 100u);
  for (double t = 0.0; t <= 100.0; t += 1.0) EXPECT_EQ(survival::km_survival_at(rep.pooled_km, t), 1.0);
}

TEST(RunExperiment, UnboundedBandKillsAtZero) {
  const auto data = fixture::planted_data(9);
  auto cfg = fixture::planted_config(fixture::planted_forest(), 2);
  cfg.n_iterations = 2;
  cfg.n_sequences = 40;
  cfg.band = {-std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  const auto rep = run_experiment(cfg, data);
  EXPECT_EQ(rep.detection_rate, 1.0);
  EXPECT_EQ(survival::km_survival_at(rep.pooled_km, 0.0), 0.0);
  for (const auto& it : rep.iterations) {
    for (const auto& r : it.sequences) EXPECT_EQ(r.survival.time, 0.0);
  }
}

TEST(RunExperiment, PooledCurveIdentities) {
  const auto data = fixture::planted_data(10);
  auto cfg = fixture::planted_config(fixture::planted_forest(), 6);
  cfg.n_iterations = 3;
  const auto rep = run_experiment(cfg, data);
  EXPECT_GT(rep.detection_rate, 0.0);
  EXPECT_LT(rep.detection_rate, 1.0);
  EXPECT_NEAR(survival::km_survival_at(rep.pooled_km, static_cast<double>(cfg.seq_len)), 1.0 - rep.detection_rate,
              1e-12);

  // Exchangeability: shuffling the pooled sequences leaves the curve as is.
  std::vector<survival::SurvivalRecord> pooled;
  for (const auto& it : rep.iterations) {
    for (const auto& r : it.sequences) pooled.push_back(r.survival);
  }
  std::mt19937_64 rng(3);
  std::shuffle(pooled.begin(), pooled.end(), rng);
  const auto km = survival::km_fit(pooled);
  EXPECT_EQ(km.times, rep.pooled_km.times);
  EXPECT_EQ(km.survival, rep.pooled_km.survival);
}

TEST(RunExperiment, DeterministicAcrossRuns) {
  const auto data = fixture::planted_data(11);
  auto cfg = fixture::planted_config(models::LinearSvrParams{}, 8);
  cfg.n_iterations = 2;
  const auto a = run_experiment(cfg, data);
  const auto b = run_experiment(cfg, data);
  EXPECT_EQ(a.mean_beta, b.mean_beta);
  EXPECT_EQ(a.pooled_km.survival, b.pooled_km.survival);
}

TEST(RunExperiment, ZeroVarianceCovariatesAreDropped) {
  auto data = fixture::planted_data(12);
  auto constant = [](const FlowDataset& d) {
    std::vector<FlowRecord> rows = d.rows();
    for (auto& r : rows) r.features[2] = 1.0;
    return FlowDataset(d.schema(), rows);
  };
  data.benign = constant(data.benign);
  data.pre_attack = constant(data.pre_attack);
  data.post = constant(data.post);
  auto cfg = fixture::planted_config(fixture::planted_forest(), 1);
  cfg.n_iterations = 1;
  const auto rep = run_experiment(cfg, data);
  const auto& it = rep.iterations[0];
  EXPECT_EQ(it.dropped_features, (std::vector<std::string>{"noise"}));
  EXPECT_EQ(it.cox_features, (std::vector<std::string>{"f0", "f1"}));
  EXPECT_EQ(it.beta_full[2], 0.0);
}

TEST(SelectFeatures, RuleArithmetic) {
  ExperimentReport rep;
  rep.feature_names = {"a", "b", "c"};
  for (int i = 0; i < 10; ++i) {
    IterationResult it;
    it.cox = survival::CoxModel{};
    it.cox->converged = true;
    it.beta_full = {0.0, i < 7 ? 0.5 : 0.0, -0.2};
    rep.iterations.push_back(it);
  }
  rep.n_usable_fits = 10;
  rep.mean_beta = {0.0, 0.35, -0.2};
  const auto sel = select_features(rep, SelectionRule{1e-3, 0.8});
  ASSERT_EQ(sel.size(), 1u);
  EXPECT_EQ(sel[0].name, "c");
  EXPECT_EQ(sel[0].nonzero_fraction, 1.0);
  const auto loose = select_features(rep, SelectionRule{1e-3, 0.7});
  ASSERT_EQ(loose.size(), 2u);
  EXPECT_EQ(loose[0].name, "b");  // |0.35| > |-0.2|

  for (auto& it : rep.iterations) it.beta_full = {0.0, 0.0, 0.0};
  rep.mean_beta = {0.0, 0.0, 0.0};
  EXPECT_TRUE(select_features(rep, SelectionRule{}).empty());
}

TEST(SelectFeatures, PlantedFeatureIsSelectedFirst) {
  const auto data = fixture::planted_data(13);
  const auto rep = run_experiment(fixture::planted_config(fixture::planted_forest(), 17), data);
  ASSERT_FALSE(rep.selected_features.empty());
  EXPECT_EQ(rep.selected_features[0].name, "f1");
  EXPECT_GT(rep.selected_features[0].mean_beta, 0.0);
}

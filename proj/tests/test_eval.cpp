#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "decode/eval.hpp"
#include "decode/hawkes.hpp"
#include "test_util.hpp"

using namespace decode;

namespace {

HawkesSpec two_mark() {
  HawkesSpec s;
  s.v = Vector{{0.4, 0.2}};
  s.alpha = Matrix{{0.3, 0.1}, {0.5, 0.2}};
  s.beta = Matrix{{1.5, 1.0}, {2.0, 1.2}};
  s.sign = Vector::Ones(2);
  return s;
}

PredictConfig long_horizon() {
  PredictConfig c;
  c.horizon.chunk = 1.0;
  c.horizon.max_chunks = 60;
  c.horizon.mass_tolerance = 1e-12;
  c.horizon.epsilon = 0.0;
  return c;
}

}  // namespace

TEST(Predict, UnitRateGivesUnitMeanWait) {
  const HawkesProcess unit(HawkesSpec::poisson(Vector::Constant(1, 1.0)));
  const std::vector<Event> hist{{2.5, 0}};
  const auto p = predict_event(unit, hist, long_horizon());
  EXPECT_NEAR(p.t_hat, 3.5, 1e-6);
  EXPECT_EQ(p.k_hat, 0);
  EXPECT_LT(p.residual_mass, 1e-9);
}

TEST(Predict, SingleMarkModelAlwaysPredictsMarkZero) {
  const auto model = decode::testing::small_model(1, 3);
  std::mt19937_64 rng(2);
  const auto seq = decode::testing::random_sequence(rng, 6, 1);
  for (const auto& p : predict_sequence(DecOdeProcess(model, {ivp::Method::euler, 16}), seq, predict_config(model))) {
    EXPECT_EQ(p.k_hat, 0);
  }
}

TEST(Predict, ExpectedTimeMatchesThinningMean) {
  const auto s = two_mark();
  const HawkesProcess proc(s);
  const std::vector<Event> hist{{0.0, 0}, {0.3, 1}, {0.8, 0}};
  const auto p = predict_event(proc, hist, long_horizon());
  std::mt19937_64 rng(5);
  double sum = 0.0, sumsq = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_next_event(proc, hist, 0.8, ThinningConfig{}, rng).event->t;
    sum += t;
    sumsq += t * t;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sumsq / n - mean * mean) / n);
  EXPECT_LT(std::abs(p.t_hat - mean), 3.0 * se) << p.t_hat << " vs " << mean;
}

TEST(Predict, IncrementalBlocksMatchFreshBlocks) {
  const auto model = decode::testing::small_model(3, 8);
  std::mt19937_64 rng(4);
  const auto seq = decode::testing::random_sequence(rng, 5, 3);
  const DecOdeProcess proc(model, {ivp::Method::rk4, 16});
  PredictConfig cfg = predict_config(model);
  cfg.mark = {ivp::Method::rk4, 16};
  const auto preds = predict_sequence(proc, seq, cfg);
  ASSERT_EQ(preds.size(), 4U);
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const auto fresh = predict_event(proc, std::span<const Event>(seq.events.data(), j), cfg);
    EXPECT_NEAR(fresh.t_hat, preds[j - 1].t_hat, 1e-9);
    EXPECT_EQ(fresh.k_hat, preds[j - 1].k_hat);
  }
}

TEST(Predict, EmptyHistoryIsRejected) {
  const HawkesProcess unit(HawkesSpec::poisson(Vector::Constant(1, 1.0)));
  EXPECT_THROW((void)predict_event(unit, {}, PredictConfig{}), std::invalid_argument);
}

TEST(Bootstrap, ConstantValuesHaveNoSpread) {
  const std::vector<double> v(20, 3.25);
  const auto b = bootstrap(v, 200, 1);
  EXPECT_DOUBLE_EQ(b.mean, 3.25);
  EXPECT_DOUBLE_EQ(b.std, 0.0);
}

TEST(Bootstrap, TwoPointMean) {
  const std::vector<double> v{0.0, 1.0};
  const auto b = bootstrap(v, 1000, 9);
  EXPECT_NEAR(b.mean, 0.5, 0.05);
  EXPECT_GT(b.std, 0.0);
}

TEST(Bootstrap, SeedDeterminesResult) {
  const std::vector<double> v{0.1, 0.7, 2.0, 3.5};
  const auto a = bootstrap(v, 100, 4);
  const auto b = bootstrap(v, 100, 4);
  EXPECT_EQ(a.mean, b.mean);
  EXPECT_EQ(a.std, b.std);
}

TEST(Evaluate, ConstantPredictorRmseIsGapRms) {
  // Predicting t_prev leaves the gap itself as the error.
  std::mt19937_64 rng(3);
  std::vector<SequenceScore> scores;
  double sq = 0.0;
  long n = 0;
  for (int s = 0; s < 5; ++s) {
    const auto seq = decode::testing::random_sequence(rng, 6, 2);
    SequenceScore sc;
    sc.scored = 5;
    for (std::size_t j = 1; j < seq.size(); ++j) {
      const double gap = seq.events[j].t - seq.events[j - 1].t;
      sc.sq_error += gap * gap;
      ++sc.predicted;
      sq += gap * gap;
      ++n;
    }
    scores.push_back(sc);
  }
  const auto r = summarize(scores, 2.0, 50, 1);
  EXPECT_NEAR(r.rmse.value, std::sqrt(sq / n), 1e-12);
  EXPECT_NEAR(r.rmse_unscaled.value, 2.0 * std::sqrt(sq / n), 1e-12);
  EXPECT_GE(r.rmse.std, 0.0);
}

TEST(Evaluate, DeterministicMarksGiveFullAccuracy) {
  // Mark 1 never fires, so argmax f is always the true mark.
  const auto spec = HawkesSpec::poisson(Vector{{1.0, 0.0}});
  auto ds = simulate_dataset(spec, 10, {8.0, 1000, 2});
  ds.num_marks = 2;
  EvalConfig cfg;
  cfg.resamples = 20;
  cfg.predict = long_horizon();
  const auto r = evaluate_process(HawkesProcess(spec), ds, cfg);
  EXPECT_GT(r.predicted_events, 0);
  EXPECT_DOUBLE_EQ(r.acc.value, 1.0);
  EXPECT_DOUBLE_EQ(r.acc.std, 0.0);
}

TEST(Evaluate, HawkesOracleMatchesAnalyticNll) {
  const auto spec = two_mark();
  const double T = 12.0;
  const auto ds = simulate_dataset(spec, 60, {T, 1000, 6});
  EvalConfig cfg;
  cfg.first_event = FirstEventPolicy::include;
  cfg.with_predictions = false;
  cfg.resamples = 50;
  const auto r = evaluate_process(HawkesProcess(spec), ds, cfg);
  double total = 0.0;
  long events = 0;
  for (const auto& s : ds.sequences) {
    total += analytic_nll(spec, s, T);
    events += static_cast<long>(s.size());
  }
  EXPECT_EQ(r.scored_events, events);
  EXPECT_NEAR(r.nll.value, total / static_cast<double>(events), 0.02);
  EXPECT_EQ(r.first_event_policy, "include");
}

TEST(Evaluate, ModelReportIsDeterministicAndHashed) {
  const auto model = decode::testing::small_model(2, 5);
  std::mt19937_64 rng(8);
  Dataset ds;
  ds.num_marks = 2;
  ds.time_scale = 0.5;
  for (int i = 0; i < 4; ++i) ds.sequences.push_back(decode::testing::random_sequence(rng, 4, 2));
  EvalConfig cfg;
  cfg.resamples = 30;
  cfg.seed = 2;
  const auto a = evaluate(model, ds, cfg);
  const auto b = evaluate(model, ds, cfg);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  cfg.workers = 2;
  EXPECT_EQ(evaluate(model, ds, cfg).to_json()["nll"], a.to_json()["nll"]);
  EXPECT_EQ(a.checkpoint_hash, fnv1a_hex(model.to_json().dump()));
  EXPECT_EQ(a.scored_events, 12);
  EXPECT_EQ(a.predicted_events, 12);
  EXPECT_EQ(a.resamples, 30);
  EXPECT_EQ(a.first_event_policy, "exclude");
  EXPECT_GE(a.acc.value, 0.0);
  EXPECT_LE(a.acc.value, 1.0);
}

TEST(Evaluate, NllMatchesLikelihoodModule) {
  const auto model = decode::testing::small_model(3, 6);
  std::mt19937_64 rng(1);
  Dataset ds;
  ds.num_marks = 3;
  for (int i = 0; i < 3; ++i) ds.sequences.push_back(decode::testing::random_sequence(rng, 5, 3));
  EvalConfig cfg;
  cfg.with_predictions = false;
  cfg.resamples = 10;
  const auto r = evaluate(model, ds, cfg);
  double total = 0.0;
  int events = 0;
  for (const auto& s : ds.sequences) {
    const auto lb = sequence_log_likelihood(model, s, cfg.likelihood);
    total -= lb.total();
    events += lb.scored_events;
  }
  EXPECT_NEAR(r.nll.value, total / events, 1e-9);
}

TEST(Evaluate, EmptyDatasetIsAnError) {
  const auto model = decode::testing::small_model(2, 1);
  Dataset ds;
  ds.num_marks = 2;
  EXPECT_THROW((void)evaluate(model, ds, EvalConfig{}), std::invalid_argument);
}

TEST(Evaluate, ConfigRoundTrips) {
  EvalConfig cfg;
  cfg.first_event = FirstEventPolicy::include;
  cfg.resamples = 77;
  cfg.predict = long_horizon();
  EXPECT_EQ(EvalConfig::from_json(cfg.to_json()).to_json(), cfg.to_json());
}

TEST(Baselines, MarginalMarkAccuracy) {
  Dataset train, test;
  Sequence a;
  a.events = {{0.0, 2}, {1.0, 1}, {2.0, 1}, {3.0, 0}};
  train.sequences = {a};
  Sequence b;
  b.events = {{0.0, 0}, {0.5, 1}, {0.7, 0}, {0.9, 1}, {1.1, 1}};
  test.sequences = {b};
  EXPECT_DOUBLE_EQ(marginal_mark_accuracy(train, test), 0.75);
}

TEST(Hashing, KnownFnvValues) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

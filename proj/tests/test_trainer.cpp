#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "decode/hawkes.hpp"
#include "decode/trainer.hpp"
#include "test_util.hpp"

using namespace decode;
using decode::testing::random_sequence;
using decode::testing::small_model;

namespace {

Dataset random_dataset(std::uint64_t seed, int n, int k, int min_len = 2, int max_len = 8) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len(min_len, max_len);
  Dataset ds;
  ds.num_marks = k;
  for (int i = 0; i < n; ++i) ds.sequences.push_back(random_sequence(rng, len(rng), k));
  return ds;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.solver = {ivp::Method::euler, 4};
  cfg.valid_solver = {ivp::Method::euler, 4};
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(Batches, PadsShorterSequences) {
  Dataset ds;
  ds.num_marks = 2;
  Sequence a, b;
  a.events = {{0.1, 0}, {0.5, 1}, {0.9, 0}};
  a.t_end = 1.5;
  b.events = {{0.2, 1}, {0.3, 1}, {0.7, 0}, {1.1, 1}, {1.4, 0}};
  b.t_end = 1.4;
  ds.sequences = {a, b};
  const auto batches = make_batches(ds, 2, 0, false);
  ASSERT_EQ(batches.size(), 1U);
  const Batch& bt = batches[0];
  EXPECT_EQ(bt.times.rows(), 2);
  EXPECT_EQ(bt.max_length(), 5);
  EXPECT_EQ(bt.sequence_mask.row(0).sum(), 3.0);
  EXPECT_EQ(bt.sequence_mask.row(1).sum(), 5.0);
  // Only the first row has a live tail interval.
  EXPECT_EQ(bt.propagation_mask(0, 3), 1.0);
  EXPECT_EQ(bt.propagation_mask(1, 5), 0.0);
  const auto seqs = masked_sequences(bt);
  EXPECT_EQ(seqs[0].size(), 3U);
  EXPECT_DOUBLE_EQ(seqs[0].t_end, 1.5);
  EXPECT_EQ(seqs[1].size(), 5U);
  EXPECT_DOUBLE_EQ(seqs[1].t_end, 1.4);
}

TEST(Batches, BatchSizeOneHasNoPadding) {
  const auto ds = random_dataset(1, 5, 2);
  for (const auto& b : make_batches(ds, 1, 7)) {
    EXPECT_EQ(b.size(), 1U);
    EXPECT_EQ(b.sequence_mask.sum(), static_cast<double>(b.lengths[0]));
  }
}

TEST(Batches, SeedFixesOrder) {
  const auto ds = random_dataset(2, 20, 3);
  const auto a = make_batches(ds, 6, 11);
  const auto b = make_batches(ds, 6, 11);
  const auto c = make_batches(ds, 6, 12);
  ASSERT_EQ(a.size(), 4U);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].seq_ids, b[i].seq_ids);
    differs = differs || a[i].seq_ids != c[i].seq_ids;
  }
  EXPECT_TRUE(differs);
}

TEST(Trainer, PaddedSlotsDoNotTouchTheLoss) {
  const auto model = small_model(3, 4);
  const auto ds = random_dataset(3, 4, 3, 2, 9);
  Batch b = make_batches(ds, 4, 0, false).front();
  const TrainConfig cfg = quick_config();
  const BatchLoss ref = batch_loss(model, b, cfg);
  for (Eigen::Index r = 0; r < b.times.rows(); ++r) {
    for (Eigen::Index i = b.lengths[static_cast<std::size_t>(r)]; i < b.times.cols(); ++i) {
      b.times(r, i) = 1e6 + static_cast<double>(i);
      b.marks(r, i) = 2;
    }
  }
  const BatchLoss got = batch_loss(model, b, cfg);
  EXPECT_EQ(got.nll_lambda, ref.nll_lambda);
  EXPECT_EQ(got.nll_mark, ref.nll_mark);
  for (std::size_t s = 0; s < ref.grads.size(); ++s) EXPECT_TRUE(got.grads[s] == ref.grads[s]);
}

TEST(Trainer, ZeroLearningRateLeavesParameters) {
  auto model = small_model(2, 5);
  const auto before = model.parameters();
  const auto ds = random_dataset(4, 8, 2);
  TrainConfig cfg = quick_config();
  cfg.adam.lr = 0.0;
  const auto res = train(model, ds, nullptr, cfg);
  for (std::size_t s = 0; s < before.size(); ++s) {
    EXPECT_TRUE(model.parameters()[s].value == before[s].value);
  }
  ASSERT_EQ(res.epochs.size(), 2U);
  EXPECT_DOUBLE_EQ(res.epochs[0].nll, res.epochs[1].nll);
}

TEST(Trainer, ModesAgreeBeforeAnyUpdate) {
  for (auto comb : {Combinator::linear, Combinator::nonlinear}) {
    const auto model = small_model(3, 6, comb);
    const auto ds = random_dataset(5, 6, 3, 2, 10);
    TrainConfig cfg = quick_config();
    cfg.variant = comb;
    const Batch b = make_batches(ds, 6, 0).front();
    cfg.mode = PropagationMode::parallel;
    const BatchLoss p = batch_loss(model, b, cfg);
    cfg.mode = PropagationMode::sequential;
    const BatchLoss s = batch_loss(model, b, cfg);
    EXPECT_NEAR(p.per_event(), s.per_event(), 1e-5);
    for (std::size_t k = 0; k < p.grads.size(); ++k) EXPECT_LT((p.grads[k] - s.grads[k]).norm(), 1e-8);
  }
}

TEST(Trainer, RunsAreReproducible) {
  const auto ds = random_dataset(6, 10, 2);
  const TrainConfig cfg = quick_config();
  auto m1 = small_model(2, 9);
  auto m2 = small_model(2, 9);
  const auto r1 = train(m1, ds, nullptr, cfg);
  const auto r2 = train(m2, ds, nullptr, cfg);
  for (std::size_t e = 0; e < r1.epochs.size(); ++e) EXPECT_NEAR(r1.epochs[e].nll, r2.epochs[e].nll, 1e-10);
}

TEST(Trainer, WorkerCountDoesNotChangeTheLoss) {
  const auto model = small_model(3, 10);
  const auto ds = random_dataset(7, 9, 3);
  TrainConfig cfg = quick_config();
  const Batch b = make_batches(ds, 9, 0).front();
  const BatchLoss one = batch_loss(model, b, cfg);
  cfg.workers = 3;
  const BatchLoss three = batch_loss(model, b, cfg);
  EXPECT_NEAR(one.per_event(), three.per_event(), 1e-12);
  for (std::size_t k = 0; k < one.grads.size(); ++k) EXPECT_LT((one.grads[k] - three.grads[k]).norm(), 1e-12);
}

TEST(Trainer, VariantMismatchIsRejected) {
  const auto model = small_model(2, 1, Combinator::nonlinear);
  const auto ds = random_dataset(8, 2, 2);
  const TrainConfig cfg = quick_config();
  EXPECT_THROW((void)batch_loss(model, make_batches(ds, 2, 0).front(), cfg), std::invalid_argument);
}

TEST(Trainer, NonFiniteLossNamesTheSequence) {
  auto model = small_model(2, 2);
  model.parameters()[0].value.setConstant(std::numeric_limits<double>::quiet_NaN());
  const auto ds = random_dataset(9, 3, 2);
  try {
    (void)batch_loss(model, make_batches(ds, 3, 0, false).front(), quick_config());
    FAIL() << "expected an error";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos) << e.what();
  }
}

TEST(Trainer, LossDecreasesOnHawkesData) {
  std::mt19937_64 rng(3);
  SpecRanges r;
  const auto spec = sample_spec(2, r, rng);
  const auto ds = preprocess(simulate_dataset(spec, 40, {15.0, 1000, 4}));
  auto model = small_model(2, 3);
  TrainConfig cfg = quick_config();
  cfg.epochs = 6;
  cfg.batch_size = 8;
  cfg.adam.lr = 1e-2;
  std::ostringstream log;
  const auto res = train(model, ds, &ds, cfg, &log);
  EXPECT_LT(res.epochs.back().nll, res.epochs.front().nll);
  EXPECT_EQ(log.str().rfind("epoch,split,nll_lambda,nll_mark,sec_per_iter\n", 0), 0U);
  EXPECT_GE(res.best_epoch, 0);
}

TEST(Trainer, PoissonRateIsRecovered) {
  // Constant-rate data: the maximum-likelihood intensity is n / T.
  const auto spec = HawkesSpec::poisson(Vector::Constant(1, 2.0));
  const auto ds = simulate_dataset(spec, 40, {10.0, 1000, 8});
  auto model = small_model(1, 12);
  TrainConfig cfg = quick_config();
  cfg.epochs = 25;
  cfg.batch_size = 10;
  cfg.adam.lr = 2e-2;
  (void)train(model, ds, nullptr, cfg);

  double count = 0.0, span = 0.0, lam_sum = 0.0;
  int lam_n = 0;
  const DecOdeProcess proc(model, {ivp::Method::rk4, 16});
  for (const auto& s : ds.sequences) {
    if (s.size() < 2) continue;
    count += static_cast<double>(s.size() - 1);
    span += s.t_end - s.events.front().t;
    for (std::size_t j = 1; j < s.size(); ++j) {
      const std::span<const Event> hist(s.events.data(), j);
      const double t = s.events[j].t;
      lam_sum += proc.ground_intensity(hist, t, proc.block_at(hist, t));
      ++lam_n;
    }
  }
  const double empirical = count / span;
  const double learned = lam_sum / lam_n;
  EXPECT_NEAR(learned, empirical, 0.2 * empirical);
}

TEST(Trainer, ConfigRoundTrips) {
  TrainConfig cfg = quick_config();
  cfg.mode = PropagationMode::sequential;
  cfg.variant = Combinator::nonlinear;
  cfg.workers = 2;
  const auto back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  auto bad = cfg.to_json();
  bad["mode"] = "sideways";
  EXPECT_THROW((void)TrainConfig::from_json(bad), std::invalid_argument);
}

TEST(Trainer, BenchmarkReportsBothModes) {
  const auto model = small_model(2, 13);
  const auto ds = random_dataset(10, 8, 2, 4, 10);
  const auto b = benchmark_modes(model, ds, quick_config(), 2);
  EXPECT_GT(b.parallel_sec_per_iter, 0.0);
  EXPECT_GT(b.sequential_sec_per_iter, 0.0);
  EXPECT_DOUBLE_EQ(b.ratio, b.parallel_sec_per_iter / b.sequential_sec_per_iter);
}

#include <gtest/gtest.h>

#include <cmath>

#include "decode/likelihood.hpp"
#include "test_util.hpp"

using namespace decode;
using decode::testing::random_sequence;
using decode::testing::small_model;

namespace {

// lambda_g = c everywhere, marks uniform.
class ConstantProcess final : public ConditionalProcess {
 public:
  ConstantProcess(double c, int k) : c_(c), k_(k) {}
  int num_marks() const override { return k_; }
  double ground_intensity(std::span<const Event>, double, const Matrix&) const override { return c_; }
  Vector mark_distribution(std::span<const Event>, double, const Matrix&) const override {
    return Vector::Constant(k_, 1.0 / k_);
  }

 private:
  double c_;
  int k_;
};

double relative_gap(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST(Likelihood, ParallelMatchesSequential) {
  std::mt19937_64 rng(21);
  for (auto comb : {Combinator::linear, Combinator::nonlinear}) {
    for (auto method : {ivp::Method::euler, ivp::Method::rk4}) {
      const auto m = small_model(3, 17, comb);
      std::vector<Sequence> seqs;
      for (int n : {1, 2, 5, 8}) seqs.push_back(random_sequence(rng, n, 3));
      seqs[2].t_end = seqs[2].last_time();
      std::vector<const Sequence*> batch;
      for (const auto& s : seqs) batch.push_back(&s);
      PlainOps ops = m.plain_ops();
      const ivp::SolverConfig cfg{method, 5};
      const auto par = parallel_likelihood(ops, m, batch, cfg, Terms{}, -30.0);
      for (std::size_t s = 0; s < seqs.size(); ++s) {
        const auto seq = sequential_likelihood(ops, m, seqs[s], cfg, Terms{}, -30.0);
        const auto r = static_cast<Eigen::Index>(s);
        EXPECT_NEAR(par.compensator(r, 0), seq.compensator(0, 0), 1e-10);
        EXPECT_NEAR(par.log_intensity(r, 0), seq.log_intensity(0, 0), 1e-10);
        EXPECT_NEAR(par.mark_log_prob(r, 0), seq.mark_log_prob(0, 0), 1e-10);
      }
    }
  }
}

TEST(Likelihood, TapeForwardEqualsPlain) {
  std::mt19937_64 rng(5);
  const auto m = small_model(2, 3, Combinator::nonlinear);
  const auto s = random_sequence(rng, 4, 2);
  const Sequence* batch[1] = {&s};
  PlainOps plain = m.plain_ops();
  ad::Tape tape;
  TapeOps tops{&tape, &m.parameters()};
  const ivp::SolverConfig cfg{ivp::Method::rk4, 3};
  const auto a = parallel_likelihood(plain, m, batch, cfg, Terms{}, -30.0);
  const auto b = parallel_likelihood(tops, m, batch, cfg, Terms{}, -30.0);
  EXPECT_EQ(a.compensator(0, 0), b.compensator.value()(0, 0));
  EXPECT_EQ(a.log_intensity(0, 0), b.log_intensity.value()(0, 0));
  EXPECT_EQ(a.mark_log_prob(0, 0), b.mark_log_prob.value()(0, 0));
}

TEST(Likelihood, BatchCompositionDoesNotChangeResults) {
  std::mt19937_64 rng(8);
  const auto m = small_model(3, 2);
  std::vector<Sequence> seqs;
  for (int n : {3, 7, 2, 6}) seqs.push_back(random_sequence(rng, n, 3));
  PlainOps ops = m.plain_ops();
  const ivp::SolverConfig cfg{ivp::Method::euler, 4};
  std::vector<const Sequence*> all;
  for (const auto& s : seqs) all.push_back(&s);
  const auto joint = parallel_likelihood(ops, m, all, cfg, Terms{}, -30.0);
  for (std::size_t s = 0; s < seqs.size(); ++s) {
    const Sequence* one[1] = {&seqs[s]};
    const auto alone = parallel_likelihood(ops, m, one, cfg, Terms{}, -30.0);
    const auto r = static_cast<Eigen::Index>(s);
    EXPECT_NEAR(joint.log_intensity(r, 0), alone.log_intensity(0, 0), 1e-12);
    EXPECT_NEAR(joint.compensator(r, 0), alone.compensator(0, 0), 1e-12);
    EXPECT_NEAR(joint.mark_log_prob(r, 0), alone.mark_log_prob(0, 0), 1e-12);
  }
}

TEST(Likelihood, ConditionsOnStrictlyEarlierEvents) {
  std::mt19937_64 rng(4);
  const auto m = small_model(3, 6);
  const auto s = random_sequence(rng, 6, 3);
  const LikelihoodOptions opts{{ivp::Method::rk4, 8}, {ivp::Method::rk4, 8}, -30.0};
  const DecOdeProcess proc(m, opts.intensity_solver);
  for (std::size_t j = 1; j + 1 < s.size(); ++j) {
    Sequence a, b;
    a.events.assign(s.events.begin(), s.events.begin() + static_cast<long>(j));
    a.t_end = s.events[j - 1].t;
    b.events.assign(s.events.begin(), s.events.begin() + static_cast<long>(j + 1));
    b.t_end = s.events[j].t;
    const auto la = sequence_log_likelihood(m, a, opts);
    const auto lb = sequence_log_likelihood(m, b, opts);
    const std::span<const Event> hist(s.events.data(), j);
    const Matrix block = proc.block_at(hist, s.events[j].t);
    const double lam = proc.ground_intensity(hist, s.events[j].t, block);
    const double comp = compensator_parallel(m, b, s.events[j].t, opts.intensity_solver) -
                        compensator_parallel(m, a, s.events[j - 1].t, opts.intensity_solver);
    EXPECT_NEAR(lb.logL_lambda - la.logL_lambda, std::log(lam) - comp, 1e-9);
    const Vector p = proc.mark_distribution(hist, s.events[j].t, block);
    EXPECT_NEAR(lb.logL_mark - la.logL_mark, std::log(p(s.events[j].k)), 1e-9);
  }
}

TEST(Likelihood, CompensatorParallelExamples) {
  auto m = small_model(2, 3);
  decode::testing::zero_network(m, m.intensity_net());
  Sequence one{{{0.75, 1}}, 0.75};
  const ivp::SolverConfig cfg{ivp::Method::rk4, 8};
  EXPECT_NEAR(compensator_parallel(m, one, 3.0, cfg), 2.25 * std::log(2.0), 1e-12);
  EXPECT_EQ(compensator_parallel(m, one, 0.5, cfg), 0.0);

  auto nl = small_model(2, 3, Combinator::nonlinear);
  EXPECT_THROW((void)compensator_parallel(nl, one, 3.0, cfg), std::invalid_argument);
}

TEST(Likelihood, CompensatorParallelMatchesAugmentedIntegration) {
  std::mt19937_64 rng(31);
  const auto m = small_model(3, 12);
  const auto s = random_sequence(rng, 5, 3);
  const ivp::SolverConfig cfg{ivp::Method::rk4, 32};
  const DecOdeProcess proc(m, cfg);
  double Lambda = 0.0;
  Matrix block = proc.extend_block(std::span<const Event>(s.events.data(), 1), Matrix(0, m.hidden_dim()));
  for (std::size_t j = 0; j + 1 < s.size(); ++j) {
    const std::span<const Event> hist(s.events.data(), j + 1);
    const auto tr = integrate_augmented(proc, hist, s.events[j].t, s.events[j + 1].t, cfg, block);
    Lambda += tr.points.back().Lambda;
    block = proc.extend_block(std::span<const Event>(s.events.data(), j + 2), tr.block);
  }
  EXPECT_NEAR(compensator_parallel(m, s, s.last_time(), cfg), Lambda, 1e-6);
}

TEST(Likelihood, AugmentedUnitRateIsExponential) {
  const ConstantProcess unit(1.0, 1);
  const auto tr = integrate_augmented(unit, {}, 0.0, 3.0, {ivp::Method::rk4, 64});
  for (const auto& p : tr.points) {
    EXPECT_NEAR(p.Lambda, p.t, 1e-12);
    EXPECT_NEAR(p.F, 1.0 - std::exp(-p.t), 1e-7);
  }
  HorizonPolicy pol;
  pol.chunk = 1.0;
  pol.max_chunks = 20;
  const auto d = next_event_density(unit, {}, 0.0, pol, {ivp::Method::rk4, 64});
  // Mean of Exp(1) truncated to [0, T].
  const double T = d.horizon;
  EXPECT_NEAR(d.expected_time, 1.0 - T * std::exp(-T) / (1.0 - std::exp(-T)), 1e-8);
  EXPECT_NEAR(d.expected_time, 1.0, 1e-4);
  EXPECT_GE(d.F_end, 1.0 - 1e-6);
}

TEST(Likelihood, DensityRefinesStepsForFastDecay) {
  // Rate 40 with 4 steps per unit chunk: h * lambda = 10 unless refined.
  const ConstantProcess fast(40.0, 1);
  HorizonPolicy pol;
  pol.chunk = 1.0;
  pol.max_chunks = 1;
  const auto d = next_event_density(fast, {}, 0.0, pol, {ivp::Method::rk4, 4}, std::nullopt, true);
  EXPECT_EQ(d.steps_per_chunk, 80);
  EXPECT_EQ(d.points.size(), 81U);
  EXPECT_NEAR(d.F_end, 1.0, 1e-4);
  EXPECT_NEAR(d.expected_time, 1.0 / 40.0, 1e-4);

  pol.max_refine = 1;
  EXPECT_EQ(next_event_density(fast, {}, 0.0, pol, {ivp::Method::rk4, 4}).steps_per_chunk, 4);
}

TEST(Likelihood, AugmentedEmptyHistoryLinearHasNoMass) {
  const auto m = small_model(2, 1);
  const DecOdeProcess proc(m, {});
  const auto tr = integrate_augmented(proc, {}, 0.0, 2.0, {ivp::Method::rk4, 16});
  for (const auto& p : tr.points) {
    EXPECT_EQ(p.lambda, 0.0);
    EXPECT_EQ(p.F, 0.0);
  }
}

TEST(Likelihood, AugmentedCdfMatchesDenseQuadrature) {
  auto cfg_model = small_model(2, 15);
  cfg_model.set_mean_gap(2.0);
  const Sequence s{{{0.3, 0}, {1.1, 1}}, 1.1};
  const ivp::SolverConfig rk{ivp::Method::rk4, 32};
  const DecOdeProcess proc(cfg_model, rk);
  const auto tr = integrate_augmented(proc, s.events, 1.1, 3.1, rk);

  // Hidden trajectories on a 1e5-point grid, then trapezoid rules for Lambda and F.
  const int n = 100000;
  const auto traj = propagate(cfg_model, s, 3.1, {ivp::Method::rk4, n});
  std::vector<double> lam(n + 1);
  for (int p = 0; p <= n; ++p) {
    const double mu[2] = {traj[0].mu(n + p), traj[1].mu(p)};
    lam[static_cast<std::size_t>(p)] = ground_intensity(Combinator::linear, mu);
  }
  const double h = 2.0 / n;
  double Lambda = 0.0, F = 0.0;
  double prev_dens = lam[0];
  for (int p = 1; p <= n; ++p) {
    Lambda += 0.5 * h * (lam[static_cast<std::size_t>(p - 1)] + lam[static_cast<std::size_t>(p)]);
    const double dens = lam[static_cast<std::size_t>(p)] * std::exp(-Lambda);
    F += 0.5 * h * (prev_dens + dens);
    prev_dens = dens;
  }
  EXPECT_NEAR(tr.points.back().Lambda, Lambda, 1e-4);
  EXPECT_NEAR(tr.points.back().F, F, 1e-4);
}

TEST(Likelihood, PoissonStubs) {
  const ConstantProcess unit(1.0, 1);
  const Sequence one{{{1.0, 0}}, 1.0};
  const auto lb = process_log_likelihood(unit, one, FirstEventPolicy::include, 0.0, {ivp::Method::rk4, 16});
  EXPECT_NEAR(lb.logL_lambda, -1.0, 1e-12);
  EXPECT_NEAR(lb.logL_mark, 0.0, 1e-15);

  const double c = 2.5;
  const ConstantProcess rate(c, 1);
  const Sequence four{{{0.4, 0}, {1.0, 0}, {2.2, 0}, {3.0, 0}}, 3.0};
  const auto l4 = process_log_likelihood(rate, four, FirstEventPolicy::include, 0.0, {ivp::Method::euler, 4});
  EXPECT_NEAR(l4.logL_lambda, 4 * std::log(c) - c * 3.0, 1e-12);
  EXPECT_EQ(l4.scored_events, 4);
}

TEST(Likelihood, LogFloorClampsVanishingIntensity) {
  auto m = small_model(2, 3);
  decode::testing::zero_network(m, m.intensity_net());
  m.parameters()[m.intensity_net().bias_slots().back()].value(0, 0) = -100.0;
  const Sequence s{{{0.5, 0}, {1.0, 1}, {1.4, 0}}, 1.4};
  const auto lb = sequence_log_likelihood(m, s);
  EXPECT_EQ(lb.clamped_terms, 2);
  EXPECT_NEAR(lb.logL_lambda, -60.0, 1e-9);
  EXPECT_TRUE(std::isfinite(lb.total()));
}

TEST(Likelihood, EvaluationSolversAreIndependent) {
  std::mt19937_64 rng(13);
  const auto m = small_model(3, 4);
  const auto s = random_sequence(rng, 5, 3);
  const LikelihoodOptions both{{ivp::Method::rk4, 16}, {ivp::Method::rk4, 16}, -30.0};
  const LikelihoodOptions split{{ivp::Method::rk4, 16}, {ivp::Method::euler, 16}, -30.0};
  const auto a = sequence_log_likelihood(m, s, both);
  const auto b = sequence_log_likelihood(m, s, split);
  EXPECT_EQ(a.logL_lambda, b.logL_lambda);
  EXPECT_GT(relative_gap(a.logL_mark, b.logL_mark), 0.0);
}

TEST(Likelihood, NormalizeDensity) {
  const std::vector<double> f{0.1, 0.4, 0.2};
  EXPECT_EQ(normalize_density(f, 1.0), f);
  const auto g = normalize_density(f, 0.5);
  EXPECT_DOUBLE_EQ(g[1], 0.8);
  EXPECT_THROW((void)normalize_density(f, 1e-9), std::invalid_argument);
}

#include <gtest/gtest.h>

#include <cmath>

#include "decode/hawkes.hpp"

using namespace decode;

namespace {

HawkesSpec single(double v, double a, double b) {
  HawkesSpec s = HawkesSpec::poisson(Vector::Constant(1, v));
  s.alpha(0, 0) = a;
  s.beta(0, 0) = b;
  return s;
}

HawkesSpec two_mark() {
  HawkesSpec s;
  s.v = Vector(2);
  s.v << 0.3, 0.2;
  s.alpha = Matrix(2, 2);
  s.alpha << 0.3, 0.2, 0.1, 0.4;
  s.beta = Matrix(2, 2);
  s.beta << 1.0, 2.0, 0.7, 1.5;
  s.sign = Vector::Ones(2);
  return s;
}

// Compensator on a dense midpoint grid.
double dense_compensator(const HawkesSpec& s, const Sequence& seq, double T, int n) {
  const double h = T / n;
  double c = 0.0;
  for (int i = 0; i < n; ++i) c += intensities(s, seq.events, (i + 0.5) * h).sum() * h;
  return c;
}

class ConstantRate final : public ConditionalProcess {
 public:
  explicit ConstantRate(double c) : c_(c) {}
  int num_marks() const override { return 1; }
  double ground_intensity(std::span<const Event>, double, const Matrix&) const override { return c_; }
  Vector mark_distribution(std::span<const Event>, double, const Matrix&) const override { return Vector::Ones(1); }

 private:
  double c_;
};

}  // namespace

TEST(Hawkes, IntensityExamples) {
  const auto s = single(0.5, 0.8, 1.0);
  EXPECT_DOUBLE_EQ(intensity(s, {}, 2.0, 0), 0.5);
  const std::vector<Event> h{{1.0, 0}};
  EXPECT_NEAR(intensity(s, h, 1.0 + 1e-12, 0), 1.3, 1e-9);
  EXPECT_DOUBLE_EQ(intensity(s, h, 1.0, 0), 0.5);  // events at exactly t are excluded
  EXPECT_NEAR(intensity(s, h, 1.0 + std::log(2.0), 0), 0.9, 1e-12);
}

TEST(Hawkes, PoissonNll) {
  const auto unit = HawkesSpec::poisson(Vector::Ones(1));
  const Sequence one{{{0.4, 0}}, 1.0};
  EXPECT_NEAR(analytic_nll(unit, one, 1.0), 1.0, 1e-15);
  const double c = 1.7;
  const auto rate = HawkesSpec::poisson(Vector::Constant(1, c));
  const Sequence three{{{0.4, 0}, {2.0, 0}, {4.5, 0}}, 5.0};
  EXPECT_NEAR(analytic_nll(rate, three, 5.0), c * 5.0 - 3 * std::log(c), 1e-12);
}

TEST(Hawkes, CompensatorMatchesDenseQuadrature) {
  const auto s = two_mark();
  const Sequence seq = simulate(s, {8.0, 1000, 3}).seq;
  ASSERT_GT(seq.size(), 2u);
  const double closed = compensator(s, seq.events, 0.0, 8.0);
  EXPECT_NEAR(closed, dense_compensator(s, seq, 8.0, 1000000), 1e-5);
  // The NLL compensator term agrees with the same integral.
  double log_terms = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    log_terms += std::log(intensity(s, std::span<const Event>(seq.events.data(), i), seq.events[i].t, seq.events[i].k));
  }
  EXPECT_NEAR(analytic_nll(s, seq, 8.0), closed - log_terms, 1e-10);
}

TEST(Hawkes, SimulatedPoissonCount) {
  const auto s = HawkesSpec::poisson(Vector::Constant(2, 1.0));
  const auto r = simulate(s, {1000.0, 100000, 42});
  EXPECT_FALSE(r.truncated);
  EXPECT_NEAR(static_cast<double>(r.seq.size()), 2000.0, 3 * std::sqrt(2000.0));
  const auto again = simulate(s, {1000.0, 100000, 42});
  EXPECT_EQ(r.seq.events, again.seq.events);
  const auto capped = simulate(s, {1000.0, 10, 42});
  EXPECT_TRUE(capped.truncated);
  EXPECT_EQ(capped.seq.size(), 10u);
}

TEST(Hawkes, StationaryRate) {
  const auto s = two_mark();
  const auto r = simulate(s, {10000.0, 1000000, 5});
  const double expected = s.stationary_rate().sum();
  EXPECT_NEAR(static_cast<double>(r.seq.size()) / 10000.0, expected, 0.05 * expected);
}

TEST(Hawkes, TimeRescalingPassesKs) {
  const auto s = two_mark();
  const auto seq = simulate(s, {4000.0, 1000000, 9}).seq;
  const auto gaps = rescaled_gaps(s, seq);
  const double d = ks_statistic(gaps, [](double x) { return 1.0 - std::exp(-x); });
  EXPECT_LT(d, ks_critical_value(gaps.size(), 0.01));
}

TEST(Hawkes, TrueSpecBeatsPerturbedSpec) {
  const auto s = two_mark();
  const auto ds = simulate_dataset(s, 300, {50.0, 100000, 1});
  HawkesSpec bigger = s;
  bigger.alpha *= 1.5;
  bigger.v *= 1.5;
  bigger.beta *= 1.5;
  double a = 0, b = 0;
  for (const auto& seq : ds.sequences) {
    a += analytic_nll(s, seq, 50.0);
    b += analytic_nll(bigger, seq, 50.0);
  }
  EXPECT_LT(a, b);
}

TEST(Hawkes, NumericNllMatchesClosedForm) {
  const auto s = two_mark();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto seq = simulate(s, {20.0, 1000, seed}).seq;
    if (seq.size() < 2) continue;
    EXPECT_NEAR(numeric_nll(s, seq, FirstEventPolicy::include), analytic_nll(s, seq, 20.0), 1e-6);
    EXPECT_NEAR(numeric_nll(s, seq, FirstEventPolicy::exclude), conditional_nll(s, seq), 1e-6);
  }
}

TEST(Hawkes, RescaleTimeShiftsNllByLogScale) {
  const auto s = two_mark();
  const auto seq = simulate(s, {30.0, 1000, 4}).seq;
  const double scale = 2.5;
  Sequence scaled = seq;
  for (auto& e : scaled.events) e.t /= scale;
  scaled.t_end = seq.t_end / scale;
  const auto r = rescale_time(s, scale);
  EXPECT_NEAR(analytic_nll(r, scaled, 30.0 / scale), analytic_nll(s, seq, 30.0) - seq.size() * std::log(scale), 1e-9);
}

TEST(Hawkes, InhibitoryIntensityIsClipped) {
  auto s = two_mark();
  s.sign(1) = -1.0;
  s.alpha(0, 1) = 2.0;
  const std::vector<Event> h{{1.0, 1}};
  EXPECT_EQ(intensity(s, h, 1.01, 0), 0.0);
  EXPECT_THROW((void)analytic_nll(s, Sequence{h, 2.0}, 2.0), std::invalid_argument);
  const auto seq = simulate(s, {30.0, 1000, 8}).seq;
  EXPECT_TRUE(std::isfinite(numeric_nll(s, seq, FirstEventPolicy::exclude)));
}

TEST(Hawkes, SampledSpecsAreStationary) {
  std::mt19937_64 rng(3);
  SpecRanges r;
  for (bool cross : {false, true}) {
    r.dominant_cross = cross;
    const auto s = sample_spec(5, r, rng);
    EXPECT_LT(s.spectral_radius(), 0.9);
    EXPECT_TRUE((s.v.array() >= 0.1).all() && (s.v.array() <= 0.5).all());
    EXPECT_TRUE((s.beta.array() >= 0.5).all() && (s.beta.array() <= 2.0).all());
  }
}

TEST(Hawkes, TuneHorizonHitsTarget) {
  std::mt19937_64 rng(2);
  const auto s = sample_spec(3, SpecRanges{}, rng);
  const double T = tune_horizon(s, 30.0, 11, 200);
  const auto ds = simulate_dataset(s, 2000, {T, 100000, 99});
  EXPECT_NEAR(static_cast<double>(ds.num_events()) / 2000.0, 30.0, 1.5);
}

TEST(Hawkes, SpecJsonRoundTrip) {
  auto s = two_mark();
  s.sign(0) = -1;
  const auto back = HawkesSpec::from_json(s.to_json());
  EXPECT_EQ(back.alpha, s.alpha);
  EXPECT_EQ(back.beta, s.beta);
  EXPECT_EQ(back.v, s.v);
  EXPECT_EQ(back.sign, s.sign);
  auto j = s.to_json();
  j["beta"][0][0] = -1.0;
  EXPECT_THROW((void)HawkesSpec::from_json(j), std::invalid_argument);
}

TEST(Thinning, ConstantRateIsExponential) {
  const ConstantRate unit(1.0);
  std::mt19937_64 rng(1);
  std::vector<double> draws;
  for (int i = 0; i < 10000; ++i) {
    const auto smp = sample_next_event(unit, {}, 0.0, ThinningConfig{}, rng);
    ASSERT_TRUE(smp.event.has_value());
    draws.push_back(smp.event->t);
  }
  const double d = ks_statistic(draws, [](double x) { return 1.0 - std::exp(-x); });
  EXPECT_LT(d, ks_critical_value(draws.size(), 0.01));
}

TEST(Thinning, BoundBelowIntensityIsFlagged) {
  const ConstantRate unit(1.0);
  std::mt19937_64 rng(1);
  ThinningConfig cfg;
  cfg.c = 0.5;
  const auto smp = sample_next_event(unit, {}, 0.0, cfg, rng);
  EXPECT_TRUE(smp.bound_violated);
}

TEST(Thinning, ZeroIntensityStopsAtHorizon) {
  const ConstantRate none(0.0);
  std::mt19937_64 rng(1);
  ThinningConfig cfg;
  cfg.horizon = 5.0;
  EXPECT_FALSE(sample_next_event(none, {}, 0.0, cfg, rng).event.has_value());
}

TEST(Thinning, HawkesSamplerMatchesAnalyticSurvival) {
  // P(no event in (t, t + u]) = exp(-compensator); compare the empirical CDF.
  const auto s = two_mark();
  const HawkesProcess proc(s);
  const std::vector<Event> hist{{0.0, 0}, {0.4, 1}};
  std::mt19937_64 rng(23);
  std::vector<double> waits;
  for (int i = 0; i < 5000; ++i) waits.push_back(sample_next_event(proc, hist, 0.5, ThinningConfig{}, rng).event->t - 0.5);
  const double d = ks_statistic(waits, [&](double u) { return 1.0 - std::exp(-compensator(s, hist, 0.5, 0.5 + u)); });
  EXPECT_LT(d, ks_critical_value(waits.size(), 0.01));
}

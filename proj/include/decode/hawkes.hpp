#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <span>

#include <json.hpp>

#include "decode/data.hpp"
#include "decode/likelihood.hpp"

namespace decode {

// Multivariate Hawkes process with kernels phi(s) = alpha * beta * exp(-beta s).
// alpha(k, j) and beta(k, j) describe the effect of a mark-j event on mark k,
// so alpha is the branching matrix. sign(j) = -1 turns every kernel emitted by
// mark j inhibitory; the intensity is then max(0, v_k + sum of signed kernels).
struct HawkesSpec {
  Vector v;
  Matrix alpha;
  Matrix beta;
  Vector sign;

  [[nodiscard]] int num_marks() const { return static_cast<int>(v.size()); }
  [[nodiscard]] bool inhibitory() const;
  void validate() const;
  [[nodiscard]] double spectral_radius() const;
  // (I - A)^{-1} v per mark, for excitatory specs.
  [[nodiscard]] Vector stationary_rate() const;

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static HawkesSpec from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  [[nodiscard]] static HawkesSpec load(const std::filesystem::path& path);

  // Poisson process with per-mark rates v.
  [[nodiscard]] static HawkesSpec poisson(const Vector& v);
};

// Times divided by `scale`: rates and decays multiply by it, amplitudes stay.
[[nodiscard]] HawkesSpec rescale_time(const HawkesSpec& spec, double scale);

// lambda_k(t) given the events of `history` strictly before t.
[[nodiscard]] double intensity(const HawkesSpec& spec, std::span<const Event> history, double t, int k);
[[nodiscard]] Vector intensities(const HawkesSpec& spec, std::span<const Event> history, double t);

// sum_k int_{t0}^{t1} lambda_k for an excitatory spec, history = events before t1.
[[nodiscard]] double compensator(const HawkesSpec& spec, std::span<const Event> history, double t0, double t1);

// -log L of every event on [0, T] with the closed-form compensator. Infinite
// when some event has zero intensity. Requires an excitatory spec.
[[nodiscard]] double analytic_nll(const HawkesSpec& spec, const Sequence& seq, double T);

// -log L of events 1..n-1 given event 0, compensator over [t_0, seq.t_end].
// This is the quantity a model that conditions on the first event estimates.
[[nodiscard]] double conditional_nll(const HawkesSpec& spec, const Sequence& seq);

// Quadrature version of the two NLLs above; the only option for inhibitory specs.
[[nodiscard]] double numeric_nll(const HawkesSpec& spec, const Sequence& seq, FirstEventPolicy policy,
                                 const ivp::SolverConfig& cfg = {ivp::Method::rk4, 128});

struct SimConfig {
  double horizon{10.0};
  std::size_t max_events{100000};
  std::uint64_t seed{0};
};

struct SimResult {
  Sequence seq;
  bool truncated{false};
};

// Ogata thinning with the current total intensity as the bound.
[[nodiscard]] SimResult simulate(const HawkesSpec& spec, const SimConfig& cfg);
// n sequences on [0, horizon], each with its own generator derived from cfg.seed.
// Sequences without events are kept (callers usually preprocess them away).
[[nodiscard]] Dataset simulate_dataset(const HawkesSpec& spec, std::size_t n, const SimConfig& cfg);

struct SpecRanges {
  double v_lo{0.1}, v_hi{0.5};
  // Amplitudes are drawn in [alpha_lo, alpha_hi] / K.
  double alpha_lo{0.1}, alpha_hi{0.5};
  double beta_lo{0.5}, beta_hi{2.0};
  double max_radius{0.9};
  // Adds U[lo, hi] to alpha(pi(j), j) for a random permutation pi, so each
  // mark mostly triggers one other mark.
  bool dominant_cross{false};
  double cross_lo{0.4}, cross_hi{0.7};
};

// Rejection-resamples until the spectral radius is below ranges.max_radius.
[[nodiscard]] HawkesSpec sample_spec(int K, const SpecRanges& ranges, std::mt19937_64& rng);

// Horizon T whose simulated sequences carry `target_events` on average.
[[nodiscard]] double tune_horizon(const HawkesSpec& spec, double target_events, std::uint64_t seed,
                                  std::size_t probes = 300);

// Hawkes intensities behind the ConditionalProcess interface (no hidden block).
class HawkesProcess final : public ConditionalProcess {
 public:
  explicit HawkesProcess(HawkesSpec spec) : spec_(std::move(spec)) { spec_.validate(); }
  [[nodiscard]] int num_marks() const override { return spec_.num_marks(); }
  [[nodiscard]] double ground_intensity(std::span<const Event> history, double t, const Matrix&) const override;
  [[nodiscard]] Vector mark_distribution(std::span<const Event> history, double t, const Matrix&) const override;
  [[nodiscard]] double max_influence(std::span<const Event> history, double t, const Matrix&) const override;
  [[nodiscard]] const HawkesSpec& spec() const { return spec_; }

 private:
  HawkesSpec spec_;
};

// ---- thinning for arbitrary processes ----------------------------------------

struct ThinningConfig {
  // lambda_up = c * max of lambda over m uniform probes in the current window.
  double c{1.5};
  int m{10};
  double window{1.0};
  // No event by this time returns an empty sample.
  double horizon{std::numeric_limits<double>::infinity()};
  long max_rejections{1000000};
  // Advances a hidden block between probe and candidate times.
  ivp::SolverConfig propagation{ivp::Method::rk4, 16};
};

struct ThinningSample {
  std::optional<Event> event;
  long proposals{0};
  // A candidate intensity exceeded the bound at least once.
  bool bound_violated{false};
};

[[nodiscard]] ThinningSample sample_next_event(const ConditionalProcess& process, std::span<const Event> history,
                                               double t_from, const ThinningConfig& cfg, std::mt19937_64& rng,
                                               std::optional<Matrix> block0 = std::nullopt);

// ---- goodness of fit -----------------------------------------------------------

// Lambda(t_i) - Lambda(t_{i-1}) of the ground process; Exp(1) under the true spec.
[[nodiscard]] std::vector<double> rescaled_gaps(const HawkesSpec& spec, const Sequence& seq);

// sup |F_n - F| against a continuous CDF.
[[nodiscard]] double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf);
// Asymptotic critical value sqrt(-ln(alpha/2) / 2) / sqrt(n).
[[nodiscard]] double ks_critical_value(std::size_t n, double alpha);

}  // namespace decode

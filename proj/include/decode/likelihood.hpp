#pragma once

#include <optional>
#include <span>
#include <vector>

#include "decode/data.hpp"
#include "decode/ivp.hpp"
#include "decode/model.hpp"

namespace decode {

struct LossBreakdown {
  double logL_lambda{0.0};
  double logL_mark{0.0};
  // Event terms hitting the log floor.
  int clamped_terms{0};
  int scored_events{0};

  [[nodiscard]] double total() const { return logL_lambda + logL_mark; }
};

// The first event of a sequence has an empty history. Dec-ODE has no baseline
// rate, so its first event is conditioned on rather than scored.
enum class FirstEventPolicy { exclude, include };

struct LikelihoodOptions {
  ivp::SolverConfig intensity_solver{ivp::Method::rk4, 64};
  ivp::SolverConfig mark_solver{ivp::Method::euler, 16};
  double log_floor{-30.0};
};

// Which terms the batched engines build.
struct Terms {
  bool intensity{true};
  bool marks{true};
};

// Per-sequence (B x 1) log-likelihood pieces.
template <class Ops>
struct BatchLikelihood {
  typename Ops::Value log_intensity;  // sum of clamped ln lambda_g(t_j) over scored events
  typename Ops::Value compensator;    // Lambda_g over [t_0, t_end]
  typename Ops::Value mark_log_prob;  // sum of ln f(k_j | t_j)
  int clamped_terms{0};
};

// Every event row propagates on its own clock (tau_i = t_i + t) and all rows of
// all sequences advance together, one inter-event interval per stage. For the
// linear combinator the compensator is the sum of per-row integrals; the
// nonlinear combinator sums influences at the (aligned) absolute grid points.
template <class Ops>
BatchLikelihood<Ops> parallel_likelihood(Ops& ops, const DecOdeModel& model, std::span<const Sequence* const> batch,
                                         const ivp::SolverConfig& cfg, Terms terms, double log_floor);

// Solves one sequence from t_0 to t_end on a single clock: the block of live
// hidden states grows by one row per event and Lambda_g is part of the ODE state.
template <class Ops>
BatchLikelihood<Ops> sequential_likelihood(Ops& ops, const DecOdeModel& model, const Sequence& seq,
                                           const ivp::SolverConfig& cfg, Terms terms, double log_floor);

// Plain evaluation of the log-likelihood. Events are scored from the second one;
// the compensator runs from t_0 to seq.t_end.
[[nodiscard]] LossBreakdown sequence_log_likelihood(const DecOdeModel& model, const Sequence& seq,
                                                    const LikelihoodOptions& opts = {});
[[nodiscard]] std::vector<LossBreakdown> dataset_log_likelihood(const DecOdeModel& model, const Dataset& ds,
                                                                const LikelihoodOptions& opts = {},
                                                                std::size_t batch_size = 32);

// sum_i int_{t_i}^{t} softplus(mu(s; e_i)) ds over events with t_i < t, each on its own clock.
[[nodiscard]] double compensator_parallel(const DecOdeModel& model, const Sequence& seq, double t,
                                          const ivp::SolverConfig& cfg);

// ---- generic conditional processes ------------------------------------------

// lambda_g(t | H) and f(k | t, H) for a history H, optionally carried by a block
// of hidden states that is integrated alongside.
class ConditionalProcess {
 public:
  virtual ~ConditionalProcess() = default;
  [[nodiscard]] virtual int num_marks() const = 0;
  // Hidden block for `history` at time t >= its last event; empty when stateless.
  [[nodiscard]] virtual Matrix block_at(std::span<const Event> history, double t) const;
  [[nodiscard]] virtual Matrix block_derivative(std::span<const Event> history, double t, const Matrix& block) const;
  // Block once history.back() has just occurred, given `block` (the block of the
  // shorter history at that time).
  [[nodiscard]] virtual Matrix extend_block(std::span<const Event> history, const Matrix& block) const;
  [[nodiscard]] virtual double ground_intensity(std::span<const Event> history, double t,
                                                const Matrix& block) const = 0;
  [[nodiscard]] virtual Vector mark_distribution(std::span<const Event> history, double t,
                                                 const Matrix& block) const = 0;
  // Largest single-event contribution; horizon extension stops once it is negligible.
  [[nodiscard]] virtual double max_influence(std::span<const Event> history, double t, const Matrix& block) const;
};

class DecOdeProcess final : public ConditionalProcess {
 public:
  DecOdeProcess(const DecOdeModel& model, ivp::SolverConfig propagation)
      : model_(&model), propagation_(propagation) {}

  [[nodiscard]] int num_marks() const override { return model_->num_marks(); }
  [[nodiscard]] Matrix block_at(std::span<const Event> history, double t) const override;
  [[nodiscard]] Matrix block_derivative(std::span<const Event> history, double t,
                                        const Matrix& block) const override;
  [[nodiscard]] Matrix extend_block(std::span<const Event> history, const Matrix& block) const override;
  [[nodiscard]] double ground_intensity(std::span<const Event> history, double t,
                                        const Matrix& block) const override;
  [[nodiscard]] Vector mark_distribution(std::span<const Event> history, double t,
                                         const Matrix& block) const override;
  [[nodiscard]] double max_influence(std::span<const Event> history, double t, const Matrix& block) const override;

  [[nodiscard]] const DecOdeModel& model() const { return *model_; }
  [[nodiscard]] const ivp::SolverConfig& propagation() const { return propagation_; }

 private:
  const DecOdeModel* model_;
  ivp::SolverConfig propagation_;
};

struct AugmentedPoint {
  double t{0.0};
  double Lambda{0.0};  // compensator accumulated since t_from
  double F{0.0};       // next-event CDF
  double E{0.0};       // int t f(t) dt since t_from
  double lambda{0.0};  // ground intensity at t
};

struct AugmentedTrajectory {
  std::vector<AugmentedPoint> points;
  Matrix block;  // hidden block at the final time
  bool mass_overflow{false};  // F exceeded 1 + 1e-3
};

// Co-integrates [h, Lambda_g, F, E] over [t_from, t_to] in cfg.steps_per_interval
// steps. Lambda, F and E start at zero at t_from, so F is the CDF of the next
// event given none occurred in (last history event, t_from].
[[nodiscard]] AugmentedTrajectory integrate_augmented(const ConditionalProcess& process,
                                                      std::span<const Event> history, double t_from, double t_to,
                                                      const ivp::SolverConfig& cfg,
                                                      std::optional<Matrix> block0 = std::nullopt);

// Dec-ODE convenience: history is seq.events[0, history_cut).
[[nodiscard]] AugmentedTrajectory integrate_augmented(const DecOdeModel& model, const Sequence& seq,
                                                      std::size_t history_cut, double t_from, double t_to,
                                                      const ivp::SolverConfig& cfg);

struct HorizonPolicy {
  double chunk{1.0};
  int max_chunks{10};
  double epsilon{1e-4};
  // Stop once F >= 1 - mass_tolerance.
  double mass_tolerance{1e-6};
  // A chunk is redone with more steps while h * peak lambda exceeds this,
  // up to max_refine times the configured step count.
  double max_step_rate{0.5};
  int max_refine{64};
};

[[nodiscard]] HorizonPolicy horizon_policy(const DecOdeModel& model);

struct NextEventDensity {
  double t_from{0.0};
  double horizon{0.0};
  double F_end{0.0};
  double E_raw{0.0};
  // E[t] of the density normalized to unit mass on [t_from, horizon].
  double expected_time{0.0};
  double residual_mass{1.0};
  bool mass_overflow{false};
  int steps_per_chunk{0};  // after refinement
  std::vector<AugmentedPoint> points;
  Matrix block;  // hidden block at the horizon
};

// Integrates the augmented system chunk by chunk until the policy stops it.
[[nodiscard]] NextEventDensity next_event_density(const ConditionalProcess& process, std::span<const Event> history,
                                                  double t_from, const HorizonPolicy& policy,
                                                  const ivp::SolverConfig& cfg,
                                                  std::optional<Matrix> block0 = std::nullopt,
                                                  bool keep_points = false);

// Divides a density grid by its mass so it integrates to one.
[[nodiscard]] std::vector<double> normalize_density(std::span<const double> f_grid, double F_end);

// Scores `seq` on [window_start, seq.t_end] under any conditional process by
// integrating the compensator interval by interval.
[[nodiscard]] LossBreakdown process_log_likelihood(const ConditionalProcess& process, const Sequence& seq,
                                                   FirstEventPolicy policy, double window_start,
                                                   const ivp::SolverConfig& cfg, double log_floor = -30.0);

}  // namespace decode

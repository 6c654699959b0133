#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decode/likelihood.hpp"

namespace decode {

struct Prediction {
  double t_hat{0.0};
  int k_hat{0};
  double residual_mass{0.0};
  bool mass_overflow{false};
};

struct PredictConfig {
  HorizonPolicy horizon;
  // Augmented pass for E[t].
  ivp::SolverConfig density{ivp::Method::rk4, 16};
  // Block propagation for the mark decision at t_hat.
  ivp::SolverConfig mark{ivp::Method::euler, 16};
};

// Next event after history.back(): t_hat = E[t] of the normalized density,
// k_hat = argmax_k f(k | t_hat). `block` is the hidden block at history.back().t
// when the caller already has it.
[[nodiscard]] Prediction predict_event(const ConditionalProcess& process, std::span<const Event> history,
                                       const PredictConfig& cfg, std::optional<Matrix> block = std::nullopt);

// Predictions for events 1..n-1 of `seq`, each from its true history.
[[nodiscard]] std::vector<Prediction> predict_sequence(const ConditionalProcess& process, const Sequence& seq,
                                                       const PredictConfig& cfg);

// Model defaults: horizon policy from the model config.
[[nodiscard]] PredictConfig predict_config(const DecOdeModel& model);

struct BootstrapStats {
  double mean{0.0};
  double std{0.0};
};

// Mean of `values` over seeded resamples with replacement.
[[nodiscard]] BootstrapStats bootstrap(std::span<const double> values, int resamples, std::uint64_t seed);

struct SequenceScore {
  double logL_lambda{0.0};
  double logL_mark{0.0};
  int scored{0};
  int clamped{0};
  double sq_error{0.0};
  int correct{0};
  int predicted{0};
};

struct Metric {
  double value{0.0};  // on the full set
  double mean{0.0};   // bootstrap
  double std{0.0};
};

struct EvalConfig {
  LikelihoodOptions likelihood;
  FirstEventPolicy first_event{FirstEventPolicy::exclude};
  std::optional<PredictConfig> predict;  // model defaults when empty
  bool with_predictions{true};
  int resamples{1000};
  std::uint64_t seed{0};
  int workers{1};

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static EvalConfig from_json(const nlohmann::json& j);
};

struct EvalReport {
  Metric nll, nll_lambda, nll_mark;  // per scored event
  Metric rmse;                        // dataset time units
  Metric rmse_unscaled;               // original time units
  Metric acc;
  std::size_t sequences{0};
  long scored_events{0};
  long predicted_events{0};
  long clamped_terms{0};
  double time_scale{1.0};
  std::string first_event_policy;
  int resamples{0};
  std::string config_hash;
  std::string checkpoint_hash;

  [[nodiscard]] nlohmann::json to_json() const;
};

// Ratio metrics over sequences, bootstrapped by resampling sequences.
[[nodiscard]] EvalReport summarize(std::span<const SequenceScore> scores, double time_scale, int resamples,
                                   std::uint64_t seed);

[[nodiscard]] EvalReport evaluate(const DecOdeModel& model, const Dataset& ds, const EvalConfig& cfg);

// Any conditional process; the likelihood is integrated with cfg.likelihood.intensity_solver.
// window_start applies to FirstEventPolicy::include.
[[nodiscard]] EvalReport evaluate_process(const ConditionalProcess& process, const Dataset& ds, const EvalConfig& cfg,
                                          double window_start = 0.0);

// Accuracy of always predicting the most frequent mark of `train` on the scored events of `test`.
[[nodiscard]] double marginal_mark_accuracy(const Dataset& train, const Dataset& test);

// 64-bit FNV-1a as 16 hex digits.
[[nodiscard]] std::string fnv1a_hex(std::string_view bytes);

}  // namespace decode

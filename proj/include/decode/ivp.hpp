#pragma once

// Fixed-step explicit IVP solvers over generic states.
//
// A State is anything closed under `State + double * State`: a double, an
// Eigen matrix, an ad::Var, or a small aggregate providing those operators.
// Fields are callables `State(double t, const State& y)`.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>

#include "decode/autodiff.hpp"

namespace decode::ivp {

enum class Method { euler, rk4 };

[[nodiscard]] std::string to_string(Method m);
[[nodiscard]] Method method_from_string(const std::string& s);

struct SolverConfig {
  Method method{Method::euler};
  int steps_per_interval{16};

  void validate() const {
    if (steps_per_interval < 1) throw std::invalid_argument("steps_per_interval must be >= 1");
  }
  friend bool operator==(const SolverConfig&, const SolverConfig&) = default;
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, int step) : std::runtime_error(what), step_(step) {}
  [[nodiscard]] int step() const { return step_; }

 private:
  int step_;
};

inline bool all_finite(double y) { return std::isfinite(y); }
inline bool all_finite(const ad::Matrix& y) { return y.allFinite(); }
inline bool all_finite(const ad::Var& y) { return y.value().allFinite(); }

// Field evaluations per step and the weight each one carries in the update.
// A quantity whose derivative does not feed back into the state integrates as
// sum_j weight[j] * h * g(stage_j), which is what augmenting the state would give.
[[nodiscard]] std::span<const double> stage_weights(Method m);
// Stage times as fractions of the step.
[[nodiscard]] std::span<const double> stage_offsets(Method m);

template <class State, class Field>
State step_euler(const Field& f, const State& y, double t, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  const State k1 = f(t, y);
  if (!all_finite(k1)) throw SolverError("non-finite field value", -1);
  return y + h * k1;
}

template <class State, class Field>
State step_rk4(const Field& f, const State& y, double t, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("step size must be positive");
  const State k1 = f(t, y);
  const State k2 = f(t + 0.5 * h, State(y + (0.5 * h) * k1));
  const State k3 = f(t + 0.5 * h, State(y + (0.5 * h) * k2));
  const State k4 = f(t + h, State(y + h * k3));
  if (!all_finite(k1) || !all_finite(k2) || !all_finite(k3) || !all_finite(k4)) {
    throw SolverError("non-finite field value", -1);
  }
  return y + (h / 6.0) * State(k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class State, class Field>
State step(Method m, const Field& f, const State& y, double t, double h) {
  return m == Method::euler ? step_euler<State>(f, y, t, h) : step_rk4<State>(f, y, t, h);
}

// n steps of size h from t0, without rescaling.
template <class State, class Field>
State integrate_fixed(Method m, const Field& f, State y, double t0, double h, int n) {
  for (int i = 0; i < n; ++i) {
    try {
      y = step<State>(m, f, y, t0 + i * h, h);
    } catch (const SolverError& e) {
      throw SolverError(std::string(e.what()) + " at step " + std::to_string(i), i);
    }
    if (!all_finite(y)) throw SolverError("non-finite state at step " + std::to_string(i), i);
  }
  return y;
}

// Integrates a field already expressed on s in [0, 1] with cfg.steps_per_interval steps.
template <class State, class Field>
State integrate_unit(const Field& g, State y0, const SolverConfig& cfg) {
  cfg.validate();
  const double h = 1.0 / cfg.steps_per_interval;
  return integrate_fixed<State>(cfg.method, g, std::move(y0), 0.0, h, cfg.steps_per_interval);
}

// Solves dy/dt = f(t, y) on [t_start, t_end] through s = (t - t_start) / L,
// dy/ds = L f(t_start + s L, y), so every interval takes the same step count.
template <class State, class Field>
State integrate_interval(const Field& f, State y0, double t_start, double t_end, const SolverConfig& cfg) {
  if (t_end < t_start) throw std::invalid_argument("integrate_interval: t_end precedes t_start");
  if (t_end == t_start) return y0;
  const double len = t_end - t_start;
  auto g = [&](double s, const State& y) -> State { return len * State(f(t_start + s * len, y)); };
  return integrate_unit<State>(g, std::move(y0), cfg);
}

}  // namespace decode::ivp

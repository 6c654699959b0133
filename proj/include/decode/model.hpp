#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "decode/data.hpp"
#include "decode/ivp.hpp"
#include "decode/nn.hpp"

namespace decode {

// How per-event influences combine into the ground intensity:
//   linear:    sum_i softplus(mu_i)   (excitatory only)
//   nonlinear: softplus(sum_i mu_i)   (allows inhibition)
enum class Combinator { linear, nonlinear };

[[nodiscard]] std::string to_string(Combinator c);
[[nodiscard]] Combinator combinator_from_string(const std::string& s);

struct ModelConfig {
  int num_marks{1};
  int hidden_dim{64};
  int width{256};
  // Linear layers per network (dynamics, intensity decoder, mark decoder).
  int depth{3};
  Activation activation{Activation::tanh};
  Combinator combinator{Combinator::linear};
  double embedding_init_scale{0.1};
  std::uint64_t seed{0};

  // Horizon extension past the last event: grow in chunks of `mean_gap` until
  // every influence drops below `horizon_epsilon`, the next-event mass is
  // exhausted, or `horizon_cap_gaps` chunks were used.
  double mean_gap{1.0};
  double horizon_cap_gaps{10.0};
  double horizon_epsilon{1e-4};

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static ModelConfig from_json(const nlohmann::json& j);
};

class DecOdeModel {
 public:
  explicit DecOdeModel(ModelConfig cfg);

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }
  [[nodiscard]] int num_marks() const { return cfg_.num_marks; }
  [[nodiscard]] int hidden_dim() const { return cfg_.hidden_dim; }
  [[nodiscard]] Combinator combinator() const { return cfg_.combinator; }
  void set_combinator(Combinator c) { cfg_.combinator = c; }
  void set_mean_gap(double g) { cfg_.mean_gap = g; }

  [[nodiscard]] ad::ParameterSet& parameters() { return params_; }
  [[nodiscard]] const ad::ParameterSet& parameters() const { return params_; }
  [[nodiscard]] const Embedding& embedding() const { return embedding_; }
  [[nodiscard]] const Mlp& dynamics_net() const { return dynamics_; }
  [[nodiscard]] const Mlp& intensity_net() const { return intensity_; }
  [[nodiscard]] const Mlp& mark_net() const { return mark_; }

  [[nodiscard]] PlainOps plain_ops() const { return PlainOps{&params_}; }

  // h(t_i; e_i) = W_e(k_i), one row per mark.
  template <class Ops>
  typename Ops::Value initial_states(Ops& ops, std::span<const int> marks) const {
    return embedding_.lookup(ops, marks);
  }

  // Row-wise dh/dt. `context` rows are [elapsed time since the event | one-hot mark].
  template <class Ops>
  typename Ops::Value dynamics(Ops& ops, const typename Ops::Value& h, const Matrix& context) const {
    return dynamics_.forward(ops, ops.hcat(h, ops.constant(context)));
  }

  // mu(t; e_i) per row, n x 1.
  template <class Ops>
  typename Ops::Value influence(Ops& ops, const typename Ops::Value& h) const {
    return intensity_.forward(ops, h);
  }

  // fhat(. | t, e_i) per row, n x K.
  template <class Ops>
  typename Ops::Value mark_influence(Ops& ops, const typename Ops::Value& h) const {
    return mark_.forward(ops, h);
  }

  // Builds the constant part of the dynamics input.
  [[nodiscard]] Matrix context(std::span<const double> elapsed, std::span<const int> marks) const;
  void fill_context(Matrix& ctx, std::span<const double> elapsed, std::span<const int> marks) const;

  void save(const std::filesystem::path& path) const;
  [[nodiscard]] static DecOdeModel load(const std::filesystem::path& path);
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static DecOdeModel from_json(const nlohmann::json& doc);

 private:
  ModelConfig cfg_;
  ad::ParameterSet params_;
  Embedding embedding_;
  Mlp dynamics_;
  Mlp intensity_;
  Mlp mark_;
};

// ---- combinators on plain values -------------------------------------------

// Linear: sum softplus(mu_i), 0 on an empty history. Nonlinear: softplus(sum mu_i),
// softplus(0) on an empty history.
[[nodiscard]] double ground_intensity(Combinator c, std::span<const double> mu);
// softmax of the coordinate-wise sum of rows; uniform on an empty history.
[[nodiscard]] Vector mark_probability(const Matrix& fhat, int num_marks);

// ---- propagation ------------------------------------------------------------

struct EventTrajectory {
  int event_index{0};
  int mark{0};
  std::vector<double> times;
  Matrix hidden;  // one row per time
  Vector mu;
  Matrix fhat;    // one row per time, K columns
};

// Propagates every event of `seq` on its own clock through the event grid
// (each gap split into cfg.steps_per_interval steps) and on to `horizon` in
// chunks of the model's mean gap. All rows advance in lockstep as one block.
[[nodiscard]] std::vector<EventTrajectory> propagate(const DecOdeModel& model, const Sequence& seq, double horizon,
                                                     const ivp::SolverConfig& cfg);

// Reference path for propagate: each event solved alone over the same grid.
[[nodiscard]] std::vector<EventTrajectory> propagate_each(const DecOdeModel& model, const Sequence& seq,
                                                          double horizon, const ivp::SolverConfig& cfg);

// Grid shared by propagate(): event times, then horizon chunks.
[[nodiscard]] std::vector<double> propagation_boundaries(const DecOdeModel& model, const Sequence& seq,
                                                         double horizon);

struct InfluenceRow {
  int seq_id{0};
  int event_index{0};
  int mark{0};
  double t{0.0};
  double mu{0.0};
  Vector fhat;
};

// Decoded influence of every event at the grid times t >= t_i (t_i itself included).
[[nodiscard]] std::vector<InfluenceRow> influence_export(const DecOdeModel& model, const Sequence& seq, int seq_id,
                                                         std::span<const double> grid, const ivp::SolverConfig& cfg);

void write_trajectory_csv(std::ostream& out, std::span<const InfluenceRow> rows, int num_marks, bool header = true);

// Share of ground intensity at each event time contributed by each source mark,
// averaged over target events of each mark: result(target, source), rows sum to 1
// (rows of marks never observed as targets are zero). Linear combinator only.
[[nodiscard]] Matrix influence_shares(const DecOdeModel& model, const Dataset& ds, const ivp::SolverConfig& cfg);

}  // namespace decode

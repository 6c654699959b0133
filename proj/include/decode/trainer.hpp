#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "decode/likelihood.hpp"

namespace decode {

enum class PropagationMode { parallel, sequential };

[[nodiscard]] std::string to_string(PropagationMode m);
[[nodiscard]] PropagationMode mode_from_string(const std::string& s);

struct AdamConfig {
  double lr{1e-3};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  // Global gradient-norm clip; <= 0 disables.
  double clip{5.0};
};

struct TrainConfig {
  int epochs{50};
  std::size_t batch_size{32};
  AdamConfig adam;
  ivp::SolverConfig solver{ivp::Method::euler, 16};
  // Solver for the per-epoch validation NLL used by early stopping.
  ivp::SolverConfig valid_solver{ivp::Method::euler, 16};
  std::uint64_t seed{0};
  PropagationMode mode{PropagationMode::parallel};
  Combinator variant{Combinator::linear};
  int patience{10};
  int workers{1};
  double log_floor{-30.0};

  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] static TrainConfig from_json(const nlohmann::json& j);
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Padded mini-batch. Slot (b, i) holds event i of sequence b when
// sequence_mask(b, i) = 1; propagation_mask has one extra column for the
// interval after the last event, live when t_end lies beyond it.
struct Batch {
  Matrix times;
  Eigen::MatrixXi marks;
  Vector t_end;
  std::vector<int> lengths;
  Matrix sequence_mask;
  Matrix propagation_mask;
  std::vector<std::size_t> seq_ids;

  [[nodiscard]] std::size_t size() const { return lengths.size(); }
  [[nodiscard]] int max_length() const { return static_cast<int>(times.cols()); }
};

// Seeded shuffle, then consecutive chunks of batch_size sequences.
[[nodiscard]] std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                              bool shuffle = true);
// The observed part of every row, as sequences; padded slots are never read.
[[nodiscard]] std::vector<Sequence> masked_sequences(const Batch& batch);

class Adam {
 public:
  Adam(const ad::ParameterSet& params, AdamConfig cfg);
  // Clips `g` in place and updates `params`; returns the norm before clipping.
  double step(ad::ParameterSet& params, ad::Gradients& g);
  [[nodiscard]] long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  ad::Gradients m_, v_;
  long t_{0};
};

struct BatchLoss {
  double nll_lambda{0.0};  // summed over the batch
  double nll_mark{0.0};
  int events{0};           // scored events
  ad::Gradients grads;     // of (nll_lambda + nll_mark) / max(1, events)
  [[nodiscard]] double per_event() const { return (nll_lambda + nll_mark) / std::max(1, events); }
};

// Loss and gradients of one batch; shards run on `workers` threads and are
// reduced in shard order, so results do not depend on scheduling.
[[nodiscard]] BatchLoss batch_loss(const DecOdeModel& model, const Batch& batch, const TrainConfig& cfg,
                                   bool with_gradients = true);

struct EpochStats {
  int epoch{0};
  double nll_lambda{0.0};  // per scored event
  double nll_mark{0.0};
  double nll{0.0};
  double wall_seconds{0.0};
  double sec_per_iter{0.0};
  std::size_t iterations{0};
};

[[nodiscard]] EpochStats train_epoch(DecOdeModel& model, const std::vector<Batch>& batches, Adam& opt,
                                     const TrainConfig& cfg);

struct ValidationStats {
  double nll_lambda{0.0};
  double nll_mark{0.0};
  [[nodiscard]] double nll() const { return nll_lambda + nll_mark; }
};

// Per-event NLL with the given solver for both terms.
[[nodiscard]] ValidationStats validation_nll(const DecOdeModel& model, const Dataset& ds,
                                             const ivp::SolverConfig& solver, std::size_t batch_size = 64);

struct TrainResult {
  std::vector<EpochStats> epochs;
  std::vector<ValidationStats> valid;
  int best_epoch{-1};
  bool stopped_early{false};
};

// Runs up to cfg.epochs epochs (fresh seeded batch order each epoch). With a
// validation set, keeps the best parameters and stops after cfg.patience epochs
// without improvement. Writes "epoch,split,nll_lambda,nll_mark,sec_per_iter" rows
// to `log` when given.
TrainResult train(DecOdeModel& model, const Dataset& train_ds, const Dataset* valid_ds, const TrainConfig& cfg,
                  std::ostream* log = nullptr);

struct BenchmarkResult {
  double parallel_sec_per_iter{0.0};
  double sequential_sec_per_iter{0.0};
  double ratio{0.0};  // parallel / sequential
  int iterations{0};
};

// Times forward + backward of the same batches in both modes on one worker.
[[nodiscard]] BenchmarkResult benchmark_modes(const DecOdeModel& model, const Dataset& ds, const TrainConfig& cfg,
                                              int iterations = 20);

}  // namespace decode

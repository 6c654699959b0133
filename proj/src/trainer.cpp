#include "decode/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

namespace decode {

std::string to_string(PropagationMode m) { return m == PropagationMode::parallel ? "parallel" : "sequential"; }

PropagationMode mode_from_string(const std::string& s) {
  if (s == "parallel") return PropagationMode::parallel;
  if (s == "sequential") return PropagationMode::sequential;
  throw std::invalid_argument("unknown propagation mode " + s);
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (workers < 1) throw std::invalid_argument("workers must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (adam.lr < 0.0) throw std::invalid_argument("learning rate must be >= 0");
  solver.validate();
  valid_solver.validate();
}

namespace {

nlohmann::json solver_json(const ivp::SolverConfig& s) {
  return {{"method", ivp::to_string(s.method)}, {"steps", s.steps_per_interval}};
}

ivp::SolverConfig solver_from_json(const nlohmann::json& j, ivp::SolverConfig d) {
  d.method = ivp::method_from_string(j.value("method", ivp::to_string(d.method)));
  d.steps_per_interval = j.value("steps", d.steps_per_interval);
  return d;
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"adam",
           {{"lr", adam.lr}, {"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"clip", adam.clip}}},
          {"solver", solver_json(solver)},
          {"valid_solver", solver_json(valid_solver)},
          {"seed", seed},
          {"mode", decode::to_string(mode)},
          {"variant", decode::to_string(variant)},
          {"patience", patience},
          {"workers", workers},
          {"log_floor", log_floor}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.adam.lr = a.value("lr", c.adam.lr);
    c.adam.beta1 = a.value("beta1", c.adam.beta1);
    c.adam.beta2 = a.value("beta2", c.adam.beta2);
    c.adam.eps = a.value("eps", c.adam.eps);
    c.adam.clip = a.value("clip", c.adam.clip);
  }
  if (j.contains("solver")) c.solver = solver_from_json(j.at("solver"), c.solver);
  if (j.contains("valid_solver")) c.valid_solver = solver_from_json(j.at("valid_solver"), c.valid_solver);
  c.seed = j.value("seed", c.seed);
  c.mode = mode_from_string(j.value("mode", decode::to_string(c.mode)));
  c.variant = combinator_from_string(j.value("variant", decode::to_string(c.variant)));
  c.patience = j.value("patience", c.patience);
  c.workers = j.value("workers", c.workers);
  c.log_floor = j.value("log_floor", c.log_floor);
  c.validate();
  return c;
}

// ---- batching ---------------------------------------------------------------

std::vector<Batch> make_batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, bool shuffle) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    Batch b;
    int L = 0;
    for (std::size_t i = start; i < end; ++i) L = std::max(L, static_cast<int>(ds.sequences[order[i]].size()));
    const auto B = static_cast<Eigen::Index>(end - start);
    b.times = Matrix::Zero(B, L);
    b.marks = Eigen::MatrixXi::Zero(B, L);
    b.t_end = Vector::Zero(B);
    b.sequence_mask = Matrix::Zero(B, L);
    b.propagation_mask = Matrix::Zero(B, L + 1);
    for (Eigen::Index r = 0; r < B; ++r) {
      const std::size_t id = order[start + static_cast<std::size_t>(r)];
      const Sequence& s = ds.sequences[id];
      const int n = static_cast<int>(s.size());
      for (int i = 0; i < n; ++i) {
        b.times(r, i) = s.events[static_cast<std::size_t>(i)].t;
        b.marks(r, i) = s.events[static_cast<std::size_t>(i)].k;
        b.sequence_mask(r, i) = 1.0;
        b.propagation_mask(r, i) = 1.0;
      }
      b.t_end(r) = std::max(s.t_end, s.last_time());
      if (n > 0 && b.t_end(r) > s.last_time()) b.propagation_mask(r, n) = 1.0;
      b.lengths.push_back(n);
      b.seq_ids.push_back(id);
    }
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Sequence> masked_sequences(const Batch& batch) {
  std::vector<Sequence> out(batch.size());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    Sequence& s = out[r];
    for (Eigen::Index i = 0; i < batch.times.cols(); ++i) {
      if (batch.sequence_mask(row, i) == 0.0) break;
      s.events.push_back({batch.times(row, i), batch.marks(row, i)});
    }
    const auto n = static_cast<Eigen::Index>(s.size());
    s.t_end = batch.propagation_mask(row, n) != 0.0 ? batch.t_end(row) : s.last_time();
  }
  return out;
}

// ---- optimizer ----------------------------------------------------------------

Adam::Adam(const ad::ParameterSet& params, AdamConfig cfg)
    : cfg_(cfg), m_(ad::zero_gradients(params)), v_(ad::zero_gradients(params)) {}

double Adam::step(ad::ParameterSet& params, ad::Gradients& g) {
  if (g.size() != params.size()) throw std::invalid_argument("adam: gradient count differs from parameter count");
  const double norm = ad::global_norm(g);
  if (cfg_.clip > 0.0 && norm > cfg_.clip) {
    for (auto& x : g) x *= cfg_.clip / norm;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t s = 0; s < params.size(); ++s) {
    m_[s] = cfg_.beta1 * m_[s] + (1.0 - cfg_.beta1) * g[s];
    v_[s] = cfg_.beta2 * v_[s] + (1.0 - cfg_.beta2) * g[s].cwiseAbs2();
    params[s].value.array() -=
        cfg_.lr * (m_[s].array() / c1) / ((v_[s].array() / c2).sqrt() + cfg_.eps);
  }
  return norm;
}

// ---- loss -----------------------------------------------------------------------

namespace {

template <class Ops>
BatchLikelihood<Ops> run_engine(Ops& ops, const DecOdeModel& model, std::span<const Sequence* const> seqs,
                                const TrainConfig& cfg) {
  if (cfg.mode == PropagationMode::parallel) {
    return parallel_likelihood(ops, model, seqs, cfg.solver, Terms{}, cfg.log_floor);
  }
  std::vector<typename Ops::Value> li, co, mk;
  BatchLikelihood<Ops> out;
  for (const Sequence* s : seqs) {
    auto r = sequential_likelihood(ops, model, *s, cfg.solver, Terms{}, cfg.log_floor);
    li.push_back(r.log_intensity);
    co.push_back(r.compensator);
    mk.push_back(r.mark_log_prob);
    out.clamped_terms += r.clamped_terms;
  }
  out.log_intensity = ops.vcat(li);
  out.compensator = ops.vcat(co);
  out.mark_log_prob = ops.vcat(mk);
  return out;
}

void check_finite(const Matrix& li, const Matrix& co, const Matrix& mk, std::span<const std::size_t> ids) {
  for (Eigen::Index r = 0; r < li.rows(); ++r) {
    const char* term = !std::isfinite(li(r, 0))   ? "log intensity"
                       : !std::isfinite(co(r, 0)) ? "compensator"
                       : !std::isfinite(mk(r, 0)) ? "mark log-probability"
                                                  : nullptr;
    if (term != nullptr) {
      throw TrainingError("non-finite " + std::string(term) + " for sequence " +
                          std::to_string(ids[static_cast<std::size_t>(r)]));
    }
  }
}

struct ShardResult {
  double nll_lambda{0.0};
  double nll_mark{0.0};
  ad::Gradients grads;
};

ShardResult run_shard(const DecOdeModel& model, std::span<const Sequence* const> seqs, std::span<const std::size_t> ids,
                      const TrainConfig& cfg, double norm, bool with_gradients) {
  ShardResult out;
  if (!with_gradients) {
    PlainOps ops = model.plain_ops();
    const auto r = run_engine(ops, model, seqs, cfg);
    check_finite(r.log_intensity, r.compensator, r.mark_log_prob, ids);
    out.nll_lambda = r.compensator.sum() - r.log_intensity.sum();
    out.nll_mark = -r.mark_log_prob.sum();
    return out;
  }
  ad::Tape tape;
  TapeOps ops{&tape, &model.parameters()};
  const auto r = run_engine(ops, model, seqs, cfg);
  check_finite(r.log_intensity.value(), r.compensator.value(), r.mark_log_prob.value(), ids);
  const ad::Var loss =
      ad::scale(ad::sum(r.compensator) - ad::sum(r.log_intensity) - ad::sum(r.mark_log_prob), 1.0 / norm);
  out.nll_lambda = r.compensator.value().sum() - r.log_intensity.value().sum();
  out.nll_mark = -r.mark_log_prob.value().sum();
  tape.backward(loss);
  out.grads = ad::zero_gradients(model.parameters());
  tape.accumulate_parameter_gradients(out.grads);
  return out;
}

}  // namespace

BatchLoss batch_loss(const DecOdeModel& model, const Batch& batch, const TrainConfig& cfg, bool with_gradients) {
  if (model.combinator() != cfg.variant) throw std::invalid_argument("model combinator differs from cfg.variant");
  const auto seqs = masked_sequences(batch);
  for (const auto& s : seqs) {
    for (const auto& e : s.events) {
      if (e.k < 0 || e.k >= model.num_marks()) throw std::out_of_range("batch mark outside the model's mark range");
    }
  }
  std::vector<const Sequence*> ptrs;
  for (const auto& s : seqs) ptrs.push_back(&s);

  BatchLoss out;
  for (const auto& s : seqs) out.events += std::max(0, static_cast<int>(s.size()) - 1);
  const double norm = std::max(1, out.events);

  const std::size_t W = std::min<std::size_t>(static_cast<std::size_t>(cfg.workers), std::max<std::size_t>(1, ptrs.size()));
  std::vector<ShardResult> shards(W);
  auto bounds = [&](std::size_t w) {
    return std::pair{ptrs.size() * w / W, ptrs.size() * (w + 1) / W};
  };
  auto work = [&](std::size_t w) {
    const auto [lo, hi] = bounds(w);
    shards[w] = run_shard(model, std::span<const Sequence* const>(ptrs.data() + lo, hi - lo),
                          std::span<const std::size_t>(batch.seq_ids.data() + lo, hi - lo), cfg, norm, with_gradients);
  };
  if (W == 1) {
    work(0);
  } else {
    std::vector<std::exception_ptr> errors(W);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < W; ++w) {
      threads.emplace_back([&, w] {
        try {
          work(w);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  if (with_gradients) out.grads = ad::zero_gradients(model.parameters());
  for (const auto& s : shards) {
    out.nll_lambda += s.nll_lambda;
    out.nll_mark += s.nll_mark;
    if (with_gradients) ad::add_into(out.grads, s.grads);
  }
  return out;
}

EpochStats train_epoch(DecOdeModel& model, const std::vector<Batch>& batches, Adam& opt, const TrainConfig& cfg) {
  EpochStats st;
  const auto t0 = Clock::now();
  long events = 0;
  for (const auto& b : batches) {
    BatchLoss bl = batch_loss(model, b, cfg, true);
    opt.step(model.parameters(), bl.grads);
    st.nll_lambda += bl.nll_lambda;
    st.nll_mark += bl.nll_mark;
    events += bl.events;
    ++st.iterations;
  }
  st.wall_seconds = seconds_since(t0);
  st.sec_per_iter = st.iterations > 0 ? st.wall_seconds / static_cast<double>(st.iterations) : 0.0;
  const double n = static_cast<double>(std::max(1L, events));
  st.nll_lambda /= n;
  st.nll_mark /= n;
  st.nll = st.nll_lambda + st.nll_mark;
  return st;
}

ValidationStats validation_nll(const DecOdeModel& model, const Dataset& ds, const ivp::SolverConfig& solver,
                               std::size_t batch_size) {
  const LikelihoodOptions opts{solver, solver, -30.0};
  const auto lbs = dataset_log_likelihood(model, ds, opts, batch_size);
  ValidationStats v;
  long events = 0;
  for (const auto& lb : lbs) {
    v.nll_lambda -= lb.logL_lambda;
    v.nll_mark -= lb.logL_mark;
    events += lb.scored_events;
  }
  const double n = static_cast<double>(std::max(1L, events));
  v.nll_lambda /= n;
  v.nll_mark /= n;
  return v;
}

TrainResult train(DecOdeModel& model, const Dataset& train_ds, const Dataset* valid_ds, const TrainConfig& cfg,
                  std::ostream* log) {
  cfg.validate();
  if (model.combinator() != cfg.variant) throw std::invalid_argument("model combinator differs from cfg.variant");
  if (train_ds.num_marks > model.num_marks()) throw std::invalid_argument("dataset has more marks than the model");
  TrainResult res;
  Adam opt(model.parameters(), cfg.adam);
  double best = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;
  if (log != nullptr) *log << "epoch,split,nll_lambda,nll_mark,sec_per_iter\n" << std::setprecision(10);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = make_batches(train_ds, cfg.batch_size, cfg.seed + static_cast<std::uint64_t>(epoch));
    EpochStats st = train_epoch(model, batches, opt, cfg);
    st.epoch = epoch;
    res.epochs.push_back(st);
    if (log != nullptr) {
      *log << epoch << ",train," << st.nll_lambda << ',' << st.nll_mark << ',' << st.sec_per_iter << '\n';
    }
    if (valid_ds == nullptr) continue;
    const auto v = validation_nll(model, *valid_ds, cfg.valid_solver);
    res.valid.push_back(v);
    if (log != nullptr) *log << epoch << ",valid," << v.nll_lambda << ',' << v.nll_mark << ",\n";
    if (v.nll() < best) {
      best = v.nll();
      res.best_epoch = epoch;
      best_params.clear();
      for (const auto& p : model.parameters()) best_params.push_back(p.value);
    } else if (epoch - res.best_epoch >= cfg.patience) {
      res.stopped_early = true;
      break;
    }
  }
  if (!best_params.empty()) {
    for (std::size_t s = 0; s < best_params.size(); ++s) model.parameters()[s].value = best_params[s];
  }
  return res;
}

BenchmarkResult benchmark_modes(const DecOdeModel& model, const Dataset& ds, const TrainConfig& cfg, int iterations) {
  if (iterations < 1) throw std::invalid_argument("benchmark needs at least one iteration");
  const auto batches = make_batches(ds, cfg.batch_size, cfg.seed);
  if (batches.empty()) throw std::invalid_argument("benchmark needs data");
  auto time_mode = [&](PropagationMode mode) {
    TrainConfig c = cfg;
    c.mode = mode;
    c.workers = 1;
    (void)batch_loss(model, batches.front(), c, true);  // warm-up
    const auto t0 = Clock::now();
    for (int it = 0; it < iterations; ++it) {
      (void)batch_loss(model, batches[static_cast<std::size_t>(it) % batches.size()], c, true);
    }
    return seconds_since(t0) / iterations;
  };
  BenchmarkResult r;
  r.iterations = iterations;
  r.parallel_sec_per_iter = time_mode(PropagationMode::parallel);
  r.sequential_sec_per_iter = time_mode(PropagationMode::sequential);
  r.ratio = r.parallel_sec_per_iter / r.sequential_sec_per_iter;
  return r;
}

}  // namespace decode

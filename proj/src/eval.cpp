#include "decode/eval.hpp"

#include <array>
#include <cmath>
#include <exception>
#include <map>
#include <random>
#include <stdexcept>
#include <thread>

namespace decode {

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads; each index writes its own slot.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  const std::size_t W = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), std::max<std::size_t>(1, n));
  if (W == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(W);
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < W; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += W) fn(i);
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

Matrix advance_block(const ConditionalProcess& process, std::span<const Event> history, const Matrix& block,
                     double t0, double t1, const ivp::SolverConfig& cfg) {
  if (block.size() == 0 || t1 <= t0) return block;
  auto f = [&](double t, const Matrix& y) -> Matrix { return process.block_derivative(history, t, y); };
  return ivp::integrate_interval<Matrix>(f, block, t0, t1, cfg);
}

int argmax(const Vector& p) {
  Eigen::Index k = 0;
  p.maxCoeff(&k);
  return static_cast<int>(k);
}

std::string policy_name(FirstEventPolicy p) { return p == FirstEventPolicy::exclude ? "exclude" : "include"; }

nlohmann::json solver_json(const ivp::SolverConfig& s) {
  return {{"method", ivp::to_string(s.method)}, {"steps", s.steps_per_interval}};
}

ivp::SolverConfig solver_from_json(const nlohmann::json& j, ivp::SolverConfig d) {
  if (j.contains("method")) d.method = ivp::method_from_string(j.at("method").get<std::string>());
  if (j.contains("steps")) d.steps_per_interval = j.at("steps").get<int>();
  d.validate();
  return d;
}

nlohmann::json metric_json(const Metric& m) { return {{"value", m.value}, {"mean", m.mean}, {"std", m.std}}; }

}  // namespace

// ---- prediction ---------------------------------------------------------------

Prediction predict_event(const ConditionalProcess& process, std::span<const Event> history, const PredictConfig& cfg,
                         std::optional<Matrix> block) {
  if (history.empty()) throw std::invalid_argument("predict_event needs a non-empty history");
  const double t0 = history.back().t;
  Matrix b0 = block ? std::move(*block) : process.block_at(history, t0);
  const NextEventDensity d = next_event_density(process, history, t0, cfg.horizon, cfg.density, b0);
  Prediction p;
  p.t_hat = d.expected_time;
  p.residual_mass = d.residual_mass;
  p.mass_overflow = d.mass_overflow;
  const Matrix at_hat = advance_block(process, history, b0, t0, p.t_hat, cfg.mark);
  p.k_hat = argmax(process.mark_distribution(history, p.t_hat, at_hat));
  return p;
}

std::vector<Prediction> predict_sequence(const ConditionalProcess& process, const Sequence& seq,
                                         const PredictConfig& cfg) {
  std::vector<Prediction> out;
  if (seq.size() < 2) return out;
  const std::span<const Event> all(seq.events);
  Matrix block = process.extend_block(all.first(1), process.block_at({}, seq.events.front().t));
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const auto hist = all.first(j);
    out.push_back(predict_event(process, hist, cfg, block));
    block = advance_block(process, hist, block, seq.events[j - 1].t, seq.events[j].t, cfg.mark);
    block = process.extend_block(all.first(j + 1), block);
  }
  return out;
}

PredictConfig predict_config(const DecOdeModel& model) {
  PredictConfig c;
  c.horizon = horizon_policy(model);
  return c;
}

// ---- bootstrap ------------------------------------------------------------------

BootstrapStats bootstrap(std::span<const double> values, int resamples, std::uint64_t seed) {
  if (values.empty()) throw std::invalid_argument("bootstrap needs values");
  if (resamples < 1) throw std::invalid_argument("bootstrap needs at least one resample");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[pick(rng)];
    m = s / static_cast<double>(values.size());
  }
  BootstrapStats st;
  for (double m : means) st.mean += m;
  st.mean /= resamples;
  for (double m : means) st.std += (m - st.mean) * (m - st.mean);
  st.std = resamples > 1 ? std::sqrt(st.std / (resamples - 1)) : 0.0;
  return st;
}

// ---- reports --------------------------------------------------------------------

nlohmann::json EvalConfig::to_json() const {
  nlohmann::json j{{"intensity_solver", solver_json(likelihood.intensity_solver)},
                   {"mark_solver", solver_json(likelihood.mark_solver)},
                   {"log_floor", likelihood.log_floor},
                   {"first_event", policy_name(first_event)},
                   {"with_predictions", with_predictions},
                   {"resamples", resamples},
                   {"seed", seed}};
  if (predict) {
    j["predict"] = {{"chunk", predict->horizon.chunk},
                    {"max_chunks", predict->horizon.max_chunks},
                    {"epsilon", predict->horizon.epsilon},
                    {"mass_tolerance", predict->horizon.mass_tolerance},
                    {"max_step_rate", predict->horizon.max_step_rate},
                    {"max_refine", predict->horizon.max_refine},
                    {"density_solver", solver_json(predict->density)},
                    {"mark_solver", solver_json(predict->mark)}};
  }
  return j;
}

EvalConfig EvalConfig::from_json(const nlohmann::json& j) {
  EvalConfig c;
  if (j.contains("intensity_solver")) c.likelihood.intensity_solver = solver_from_json(j["intensity_solver"], c.likelihood.intensity_solver);
  if (j.contains("mark_solver")) c.likelihood.mark_solver = solver_from_json(j["mark_solver"], c.likelihood.mark_solver);
  c.likelihood.log_floor = j.value("log_floor", c.likelihood.log_floor);
  const std::string fe = j.value("first_event", std::string("exclude"));
  if (fe != "exclude" && fe != "include") throw std::invalid_argument("first_event must be exclude or include");
  c.first_event = fe == "exclude" ? FirstEventPolicy::exclude : FirstEventPolicy::include;
  c.with_predictions = j.value("with_predictions", true);
  c.resamples = j.value("resamples", c.resamples);
  c.seed = j.value("seed", c.seed);
  if (c.resamples < 1) throw std::invalid_argument("resamples must be >= 1");
  if (j.contains("predict")) {
    const auto& p = j["predict"];
    PredictConfig pc;
    pc.horizon.chunk = p.value("chunk", pc.horizon.chunk);
    pc.horizon.max_chunks = p.value("max_chunks", pc.horizon.max_chunks);
    pc.horizon.epsilon = p.value("epsilon", pc.horizon.epsilon);
    pc.horizon.mass_tolerance = p.value("mass_tolerance", pc.horizon.mass_tolerance);
    pc.horizon.max_step_rate = p.value("max_step_rate", pc.horizon.max_step_rate);
    pc.horizon.max_refine = p.value("max_refine", pc.horizon.max_refine);
    if (p.contains("density_solver")) pc.density = solver_from_json(p["density_solver"], pc.density);
    if (p.contains("mark_solver")) pc.mark = solver_from_json(p["mark_solver"], pc.mark);
    c.predict = pc;
  }
  return c;
}

nlohmann::json EvalReport::to_json() const {
  return {{"nll", metric_json(nll)},
          {"nll_lambda", metric_json(nll_lambda)},
          {"nll_mark", metric_json(nll_mark)},
          {"nll_normalization", "per_event"},
          {"rmse", metric_json(rmse)},
          {"rmse_unscaled", metric_json(rmse_unscaled)},
          {"acc", metric_json(acc)},
          {"sequences", sequences},
          {"scored_events", scored_events},
          {"predicted_events", predicted_events},
          {"clamped_terms", clamped_terms},
          {"time_scale", time_scale},
          {"first_event_policy", first_event_policy},
          {"resamples", resamples},
          {"config_hash", config_hash},
          {"checkpoint_hash", checkpoint_hash}};
}

EvalReport summarize(std::span<const SequenceScore> scores, double time_scale, int resamples, std::uint64_t seed) {
  if (scores.empty()) throw std::invalid_argument("evaluation needs at least one sequence");
  if (resamples < 1) throw std::invalid_argument("resamples must be >= 1");
  struct Sums {
    double ll_lambda{0}, ll_mark{0}, scored{0}, sq{0}, correct{0}, predicted{0};
    void add(const SequenceScore& s) {
      ll_lambda += s.logL_lambda;
      ll_mark += s.logL_mark;
      scored += s.scored;
      sq += s.sq_error;
      correct += s.correct;
      predicted += s.predicted;
    }
  };
  constexpr int kMetrics = 6;
  auto metrics = [&](const Sums& s) {
    const double ns = std::max(1.0, s.scored), np = std::max(1.0, s.predicted);
    const double rmse = std::sqrt(s.sq / np);
    return std::array<double, kMetrics>{-(s.ll_lambda + s.ll_mark) / ns, -s.ll_lambda / ns, -s.ll_mark / ns,
                                        rmse, rmse * time_scale, s.correct / np};
  };
  Sums all;
  EvalReport r;
  for (const auto& s : scores) {
    all.add(s);
    r.scored_events += s.scored;
    r.predicted_events += s.predicted;
    r.clamped_terms += s.clamped;
  }
  const auto full = metrics(all);

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, scores.size() - 1);
  std::array<double, kMetrics> sum{}, sumsq{};
  std::vector<std::array<double, kMetrics>> draws(static_cast<std::size_t>(resamples));
  for (auto& d : draws) {
    Sums s;
    for (std::size_t i = 0; i < scores.size(); ++i) s.add(scores[pick(rng)]);
    d = metrics(s);
    for (int m = 0; m < kMetrics; ++m) sum[m] += d[m];
  }
  std::array<double, kMetrics> mean{};
  for (int m = 0; m < kMetrics; ++m) mean[m] = sum[m] / resamples;
  for (const auto& d : draws) {
    for (int m = 0; m < kMetrics; ++m) sumsq[m] += (d[m] - mean[m]) * (d[m] - mean[m]);
  }
  Metric* out[kMetrics] = {&r.nll, &r.nll_lambda, &r.nll_mark, &r.rmse, &r.rmse_unscaled, &r.acc};
  for (int m = 0; m < kMetrics; ++m) {
    out[m]->value = full[m];
    out[m]->mean = mean[m];
    out[m]->std = resamples > 1 ? std::sqrt(sumsq[m] / (resamples - 1)) : 0.0;
  }
  r.sequences = scores.size();
  r.time_scale = time_scale;
  r.resamples = resamples;
  return r;
}

namespace {

void add_predictions(SequenceScore& sc, const ConditionalProcess& process, const Sequence& seq,
                     const PredictConfig& pc) {
  const auto preds = predict_sequence(process, seq, pc);
  for (std::size_t j = 1; j < seq.size(); ++j) {
    const Prediction& p = preds[j - 1];
    const double err = p.t_hat - seq.events[j].t;
    sc.sq_error += err * err;
    sc.correct += p.k_hat == seq.events[j].k ? 1 : 0;
    ++sc.predicted;
  }
}

}  // namespace

EvalReport evaluate(const DecOdeModel& model, const Dataset& ds, const EvalConfig& cfg) {
  if (ds.sequences.empty()) throw std::invalid_argument("evaluation needs at least one sequence");
  if (ds.num_marks > model.num_marks()) throw std::invalid_argument("dataset has more marks than the model");
  std::vector<SequenceScore> scores(ds.sequences.size());
  if (cfg.first_event == FirstEventPolicy::exclude) {
    const auto lbs = dataset_log_likelihood(model, ds, cfg.likelihood);
    for (std::size_t i = 0; i < lbs.size(); ++i) {
      scores[i].logL_lambda = lbs[i].logL_lambda;
      scores[i].logL_mark = lbs[i].logL_mark;
      scores[i].scored = lbs[i].scored_events;
      scores[i].clamped = lbs[i].clamped_terms;
    }
  }
  const PredictConfig pc = cfg.predict.value_or(predict_config(model));
  const DecOdeProcess process(model, cfg.likelihood.intensity_solver);
  const DecOdeProcess marks(model, pc.mark);
  parallel_for(ds.sequences.size(), cfg.workers, [&](std::size_t i) {
    const Sequence& seq = ds.sequences[i];
    if (cfg.first_event == FirstEventPolicy::include && !seq.empty()) {
      const auto lb = process_log_likelihood(process, seq, cfg.first_event, 0.0, cfg.likelihood.intensity_solver,
                                             cfg.likelihood.log_floor);
      scores[i].logL_lambda = lb.logL_lambda;
      scores[i].logL_mark = lb.logL_mark;
      scores[i].scored = lb.scored_events;
      scores[i].clamped = lb.clamped_terms;
    }
    if (cfg.with_predictions) add_predictions(scores[i], marks, seq, pc);
  });
  EvalReport r = summarize(scores, ds.time_scale, cfg.resamples, cfg.seed);
  r.first_event_policy = policy_name(cfg.first_event);
  r.config_hash = fnv1a_hex(cfg.to_json().dump());
  r.checkpoint_hash = fnv1a_hex(model.to_json().dump());
  return r;
}

EvalReport evaluate_process(const ConditionalProcess& process, const Dataset& ds, const EvalConfig& cfg,
                            double window_start) {
  if (ds.sequences.empty()) throw std::invalid_argument("evaluation needs at least one sequence");
  const PredictConfig pc = cfg.predict.value_or(PredictConfig{});
  std::vector<SequenceScore> scores(ds.sequences.size());
  parallel_for(ds.sequences.size(), cfg.workers, [&](std::size_t i) {
    const Sequence& seq = ds.sequences[i];
    if (seq.empty()) return;
    const auto lb = process_log_likelihood(process, seq, cfg.first_event, window_start,
                                           cfg.likelihood.intensity_solver, cfg.likelihood.log_floor);
    scores[i].logL_lambda = lb.logL_lambda;
    scores[i].logL_mark = lb.logL_mark;
    scores[i].scored = lb.scored_events;
    scores[i].clamped = lb.clamped_terms;
    if (cfg.with_predictions) add_predictions(scores[i], process, seq, pc);
  });
  EvalReport r = summarize(scores, ds.time_scale, cfg.resamples, cfg.seed);
  r.first_event_policy = policy_name(cfg.first_event);
  r.config_hash = fnv1a_hex(cfg.to_json().dump());
  return r;
}

double marginal_mark_accuracy(const Dataset& train, const Dataset& test) {
  std::map<int, long> counts;
  for (const auto& s : train.sequences) {
    for (std::size_t j = 1; j < s.size(); ++j) ++counts[s.events[j].k];
  }
  if (counts.empty()) throw std::invalid_argument("training set has no scored events");
  int best = counts.begin()->first;
  for (const auto& [k, c] : counts) {
    if (c > counts[best]) best = k;
  }
  long hit = 0, total = 0;
  for (const auto& s : test.sequences) {
    for (std::size_t j = 1; j < s.size(); ++j) {
      hit += s.events[j].k == best ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw std::invalid_argument("test set has no scored events");
  return static_cast<double>(hit) / static_cast<double>(total);
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

}  // namespace decode

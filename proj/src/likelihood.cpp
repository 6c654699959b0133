#include "decode/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace decode {

namespace {

using std::size_t;

bool has_tail(const Sequence& seq) {
  return !seq.empty() && seq.t_end > seq.last_time() + 1e-12 * std::max(1.0, std::abs(seq.t_end));
}

// Event times, then t_end when it lies past the last event.
std::vector<double> likelihood_boundaries(const Sequence& seq) {
  std::vector<double> b;
  b.reserve(seq.size() + 1);
  for (const auto& e : seq.events) b.push_back(e.t);
  if (has_tail(seq)) b.push_back(seq.t_end);
  return b;
}

int count_clamped(const Matrix& lambda, double floor) {
  int c = 0;
  for (Eigen::Index r = 0; r < lambda.size(); ++r) {
    if (!(std::log(lambda(r)) > floor)) ++c;
  }
  return c;
}

// Row bookkeeping for the lag-staged batch.
struct Layout {
  int batch{0};
  std::vector<std::vector<double>> bounds;
  // Rows sorted by remaining interval count, so active rows form a prefix.
  std::vector<int> row_seq, row_event, row_remaining;
  std::vector<int> target_base;  // target (s, j) has id target_base[s] + j - 1
  int targets{0};
  std::vector<int> target_seq, target_mark;
  std::vector<int> interval_base;
  int intervals{0};
  int stages{0};
};

Layout make_layout(std::span<const Sequence* const> batch) {
  Layout L;
  L.batch = static_cast<int>(batch.size());
  struct Row {
    int seq, event, remaining;
  };
  std::vector<Row> rows;
  for (int s = 0; s < L.batch; ++s) {
    const Sequence& seq = *batch[static_cast<size_t>(s)];
    L.bounds.push_back(likelihood_boundaries(seq));
    const int n = static_cast<int>(seq.size());
    const int J = std::max(0, static_cast<int>(L.bounds.back().size()) - 1);
    L.target_base.push_back(L.targets);
    for (int j = 1; j < n; ++j) {
      L.target_seq.push_back(s);
      L.target_mark.push_back(seq.events[static_cast<size_t>(j)].k);
    }
    L.targets += std::max(0, n - 1);
    L.interval_base.push_back(L.intervals);
    L.intervals += J;
    for (int i = 0; i < n; ++i) {
      if (J - i >= 1) rows.push_back({s, i, J - i});
    }
    L.stages = std::max(L.stages, J);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.remaining > b.remaining; });
  for (const auto& r : rows) {
    L.row_seq.push_back(r.seq);
    L.row_event.push_back(r.event);
    L.row_remaining.push_back(r.remaining);
  }
  return L;
}

template <class V>
struct BlockState {
  V block;
  V lam;
};

template <class V>
BlockState<V> operator+(const BlockState<V>& a, const BlockState<V>& b) {
  return {V(a.block + b.block), V(a.lam + b.lam)};
}

template <class V>
BlockState<V> operator*(double c, const BlockState<V>& a) {
  return {V(c * a.block), V(c * a.lam)};
}

template <class V>
bool all_finite(const BlockState<V>& y) {
  return ivp::all_finite(y.block) && ivp::all_finite(y.lam);
}

// Hidden block plus the three scalar accumulators of the next-event density.
struct DensityState {
  Matrix block;
  double Lambda{0.0};
  double F{0.0};
  double E{0.0};
};

DensityState operator+(const DensityState& a, const DensityState& b) {
  return {a.block + b.block, a.Lambda + b.Lambda, a.F + b.F, a.E + b.E};
}

DensityState operator*(double c, const DensityState& a) { return {c * a.block, c * a.Lambda, c * a.F, c * a.E}; }

bool all_finite(const DensityState& y) {
  return y.block.allFinite() && std::isfinite(y.Lambda) && std::isfinite(y.F) && std::isfinite(y.E);
}

DensityState advance_density(const ConditionalProcess& process, std::span<const Event> history, double t0,
                             double t1, const ivp::SolverConfig& cfg, DensityState y,
                             std::vector<AugmentedPoint>* points, double* peak_rate = nullptr) {
  cfg.validate();
  if (t1 < t0) throw std::invalid_argument("integrate_augmented: t_to precedes t_from");
  auto record = [&](double t, const DensityState& s) {
    if (points == nullptr) return;
    points->push_back({t, s.Lambda, s.F, s.E, process.ground_intensity(history, t, s.block)});
  };
  if (points != nullptr && points->empty()) record(t0, y);
  if (t1 == t0) return y;
  const double len = t1 - t0;
  auto g = [&](double s, const DensityState& st) -> DensityState {
    const double t = t0 + s * len;
    const double rate = process.ground_intensity(history, t, st.block);
    if (peak_rate != nullptr) *peak_rate = std::max(*peak_rate, rate);
    const double dens = rate * std::exp(-st.Lambda);
    DensityState d;
    d.block = len * process.block_derivative(history, t, st.block);
    d.Lambda = len * rate;
    d.F = len * dens;
    d.E = len * t * dens;
    return d;
  };
  const int steps = cfg.steps_per_interval;
  const double h = 1.0 / steps;
  for (int q = 0; q < steps; ++q) {
    y = ivp::step<DensityState>(cfg.method, g, y, q * h, h);
    if (!all_finite(y)) throw ivp::SolverError("non-finite augmented state at step " + std::to_string(q), q);
    record(q + 1 == steps ? t1 : t0 + (q + 1) * h * len, y);
  }
  return y;
}

}  // namespace

// ---- batched engines ---------------------------------------------------------

template <class Ops>
BatchLikelihood<Ops> parallel_likelihood(Ops& ops, const DecOdeModel& model, std::span<const Sequence* const> batch,
                                         const ivp::SolverConfig& cfg, Terms terms, double log_floor) {
  using V = typename Ops::Value;
  cfg.validate();
  const Layout L = make_layout(batch);
  const int B = L.batch;
  const int steps = cfg.steps_per_interval;
  const auto weights = ivp::stage_weights(cfg.method);
  const int nst = static_cast<int>(weights.size());
  const bool linear = model.combinator() == Combinator::linear;

  BatchLikelihood<Ops> out;
  out.log_intensity = ops.constant(Matrix::Zero(B, 1));
  out.compensator = ops.constant(Matrix::Zero(B, 1));
  out.mark_log_prob = ops.constant(Matrix::Zero(B, 1));
  const int R = static_cast<int>(L.row_seq.size());
  if (R == 0) return out;

  auto event_of = [&](int r) -> const Event& {
    return batch[static_cast<size_t>(L.row_seq[static_cast<size_t>(r)])]
        ->events[static_cast<size_t>(L.row_event[static_cast<size_t>(r)])];
  };

  std::vector<int> marks(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r) marks[static_cast<size_t>(r)] = event_of(r).k;
  V h = model.initial_states(ops, marks);

  // Compensator pieces: linear keeps weighted softplus(mu) per row; nonlinear
  // keeps raw mu keyed by absolute grid point.
  std::vector<V> comp_pieces;
  std::vector<int> comp_index;
  std::vector<double> key_weight;
  std::vector<int> key_seq;
  if (!linear && terms.intensity) {
    const int nkeys = L.intervals * steps * nst;
    key_weight.assign(static_cast<size_t>(nkeys), 0.0);
    key_seq.assign(static_cast<size_t>(nkeys), 0);
  }
  std::vector<V> mu_end, fhat_end;
  std::vector<int> end_target;

  Matrix ctx;
  std::vector<double> elapsed, delta, offset;
  std::vector<int> interval;
  int active = R;
  for (int l = 1; l <= L.stages; ++l) {
    while (active > 0 && L.row_remaining[static_cast<size_t>(active - 1)] < l) --active;
    if (active == 0) break;
    if (ops.value(h).rows() != active) h = ops.top_rows(h, active);
    std::span<const int> active_marks(marks.data(), static_cast<size_t>(active));
    delta.assign(static_cast<size_t>(active), 0.0);
    offset.assign(static_cast<size_t>(active), 0.0);
    interval.assign(static_cast<size_t>(active), 0);
    for (int r = 0; r < active; ++r) {
      const int s = L.row_seq[static_cast<size_t>(r)];
      const int j = L.row_event[static_cast<size_t>(r)] + l - 1;
      const auto& b = L.bounds[static_cast<size_t>(s)];
      delta[static_cast<size_t>(r)] = b[static_cast<size_t>(j + 1)] - b[static_cast<size_t>(j)];
      offset[static_cast<size_t>(r)] = b[static_cast<size_t>(j)] - event_of(r).t;
      interval[static_cast<size_t>(r)] = L.interval_base[static_cast<size_t>(s)] + j;
    }
    const Vector dvec = Eigen::Map<const Vector>(delta.data(), active);
    int q = 0;
    int call = 0;
    auto field = [&](double s, const V& y) -> V {
      elapsed.resize(static_cast<size_t>(active));
      for (int r = 0; r < active; ++r) {
        elapsed[static_cast<size_t>(r)] = offset[static_cast<size_t>(r)] + s * delta[static_cast<size_t>(r)];
      }
      model.fill_context(ctx, elapsed, active_marks);
      if (terms.intensity) {
        const int c = call++;
        const double w = weights[static_cast<size_t>(c)] / steps;
        V mu = model.influence(ops, y);
        if (linear) {
          comp_pieces.push_back(ops.scale_rows(ops.softplus(mu), w * dvec));
          for (int r = 0; r < active; ++r) comp_index.push_back(L.row_seq[static_cast<size_t>(r)]);
        } else {
          comp_pieces.push_back(mu);
          for (int r = 0; r < active; ++r) {
            const int key = (interval[static_cast<size_t>(r)] * steps + q) * nst + c;
            comp_index.push_back(key);
            key_weight[static_cast<size_t>(key)] = w * delta[static_cast<size_t>(r)];
            key_seq[static_cast<size_t>(key)] = L.row_seq[static_cast<size_t>(r)];
          }
        }
      }
      return ops.scale_rows(model.dynamics(ops, y, ctx), dvec);
    };
    const double hs = 1.0 / steps;
    for (q = 0; q < steps; ++q) {
      call = 0;
      h = ivp::step<V>(cfg.method, field, h, q * hs, hs);
      if (!ops.value(h).allFinite()) {
        throw ivp::SolverError("non-finite hidden state at stage " + std::to_string(l) + ", step " + std::to_string(q),
                               q);
      }
    }
    // Event terms at the right end of each row's interval.
    bool any_target = false;
    const size_t first = end_target.size();
    for (int r = 0; r < active; ++r) {
      const int s = L.row_seq[static_cast<size_t>(r)];
      const int j1 = L.row_event[static_cast<size_t>(r)] + l;
      const int n = static_cast<int>(batch[static_cast<size_t>(s)]->size());
      if (j1 <= n - 1) {
        end_target.push_back(L.target_base[static_cast<size_t>(s)] + j1 - 1);
        any_target = true;
      } else {
        end_target.push_back(L.targets);
      }
    }
    if (!any_target) {
      end_target.resize(first);
      continue;
    }
    if (terms.intensity) mu_end.push_back(model.influence(ops, h));
    if (terms.marks) fhat_end.push_back(model.mark_influence(ops, h));
  }

  const int T = L.targets;
  if (terms.intensity) {
    if (linear) {
      out.compensator = ops.scatter_add_rows(ops.vcat(comp_pieces), comp_index, B);
    } else {
      const V grid_mu = ops.scatter_add_rows(ops.vcat(comp_pieces), comp_index,
                                             static_cast<Eigen::Index>(key_weight.size()));
      const Vector kw = Eigen::Map<const Vector>(key_weight.data(), static_cast<Eigen::Index>(key_weight.size()));
      out.compensator = ops.scatter_add_rows(ops.scale_rows(ops.softplus(grid_mu), kw), key_seq, B);
    }
    if (T > 0) {
      const V mu = ops.vcat(mu_end);
      V lam = linear ? ops.top_rows(ops.scatter_add_rows(ops.softplus(mu), end_target, T + 1), T)
                     : ops.softplus(ops.top_rows(ops.scatter_add_rows(mu, end_target, T + 1), T));
      out.clamped_terms = count_clamped(ops.value(lam), log_floor);
      out.log_intensity = ops.scatter_add_rows(ops.log_clamped(lam, log_floor), L.target_seq, B);
    }
  }
  if (terms.marks && T > 0) {
    const V fh = ops.top_rows(ops.scatter_add_rows(ops.vcat(fhat_end), end_target, T + 1), T);
    out.mark_log_prob = ops.scatter_add_rows(ops.pick(ops.log_softmax_rows(fh), L.target_mark), L.target_seq, B);
  }
  return out;
}

template <class Ops>
BatchLikelihood<Ops> sequential_likelihood(Ops& ops, const DecOdeModel& model, const Sequence& seq,
                                           const ivp::SolverConfig& cfg, Terms terms, double log_floor) {
  using V = typename Ops::Value;
  using State = BlockState<V>;
  cfg.validate();
  const bool linear = model.combinator() == Combinator::linear;
  const auto bounds = likelihood_boundaries(seq);
  const int n = static_cast<int>(seq.size());
  const int J = std::max(0, static_cast<int>(bounds.size()) - 1);

  BatchLikelihood<Ops> out;
  const V zero = ops.constant(Matrix::Zero(1, 1));
  out.log_intensity = zero;
  out.compensator = zero;
  out.mark_log_prob = zero;
  if (J == 0) return out;

  std::vector<int> marks(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) marks[static_cast<size_t>(i)] = seq.events[static_cast<size_t>(i)].k;

  State y{model.initial_states(ops, std::span<const int>(marks.data(), 1)), zero};
  Matrix ctx;
  std::vector<double> elapsed;
  std::vector<V> lam_terms, mark_terms;
  for (int j = 0; j < J; ++j) {
    if (j > 0 && j < n) {
      const V parts[2] = {y.block, model.initial_states(ops, std::span<const int>(marks.data() + j, 1))};
      y.block = ops.vcat(parts);
    }
    const int rows = std::min(j + 1, n);
    std::span<const int> row_marks(marks.data(), static_cast<size_t>(rows));
    const double a = bounds[static_cast<size_t>(j)];
    const double len = bounds[static_cast<size_t>(j + 1)] - a;
    auto field = [&](double s, const State& st) -> State {
      elapsed.resize(static_cast<size_t>(rows));
      for (int i = 0; i < rows; ++i) elapsed[static_cast<size_t>(i)] = (a - seq.events[static_cast<size_t>(i)].t) + s * len;
      model.fill_context(ctx, elapsed, row_marks);
      State d;
      d.block = ops.scale(model.dynamics(ops, st.block, ctx), len);
      if (terms.intensity) {
        const V mu = model.influence(ops, st.block);
        d.lam = ops.scale(linear ? ops.sum(ops.softplus(mu)) : ops.softplus(ops.sum(mu)), len);
      } else {
        d.lam = zero;
      }
      return d;
    };
    y = ivp::integrate_unit<State>(field, y, cfg);
    if (j + 1 <= n - 1) {
      if (terms.intensity) {
        const V mu = model.influence(ops, y.block);
        const V lam = linear ? ops.sum(ops.softplus(mu)) : ops.softplus(ops.sum(mu));
        out.clamped_terms += count_clamped(ops.value(lam), log_floor);
        lam_terms.push_back(ops.log_clamped(lam, log_floor));
      }
      if (terms.marks) {
        const V colsum = ops.matmul(ops.constant(Matrix::Ones(1, rows)), model.mark_influence(ops, y.block));
        const int k[1] = {marks[static_cast<size_t>(j + 1)]};
        mark_terms.push_back(ops.pick(ops.log_softmax_rows(colsum), k));
      }
    }
  }
  out.compensator = y.lam;
  if (!lam_terms.empty()) out.log_intensity = ops.sum(ops.vcat(lam_terms));
  if (!mark_terms.empty()) out.mark_log_prob = ops.sum(ops.vcat(mark_terms));
  return out;
}

template BatchLikelihood<PlainOps> parallel_likelihood(PlainOps&, const DecOdeModel&, std::span<const Sequence* const>,
                                                       const ivp::SolverConfig&, Terms, double);
template BatchLikelihood<TapeOps> parallel_likelihood(TapeOps&, const DecOdeModel&, std::span<const Sequence* const>,
                                                      const ivp::SolverConfig&, Terms, double);
template BatchLikelihood<PlainOps> sequential_likelihood(PlainOps&, const DecOdeModel&, const Sequence&,
                                                         const ivp::SolverConfig&, Terms, double);
template BatchLikelihood<TapeOps> sequential_likelihood(TapeOps&, const DecOdeModel&, const Sequence&,
                                                        const ivp::SolverConfig&, Terms, double);

// ---- plain evaluation --------------------------------------------------------

std::vector<LossBreakdown> dataset_log_likelihood(const DecOdeModel& model, const Dataset& ds,
                                                  const LikelihoodOptions& opts, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  std::vector<LossBreakdown> out(ds.sequences.size());
  PlainOps ops = model.plain_ops();
  const bool shared = opts.intensity_solver == opts.mark_solver;
  for (size_t start = 0; start < ds.sequences.size(); start += batch_size) {
    const size_t end = std::min(ds.sequences.size(), start + batch_size);
    std::vector<const Sequence*> batch;
    for (size_t s = start; s < end; ++s) batch.push_back(&ds.sequences[s]);
    const auto a = parallel_likelihood(ops, model, batch, opts.intensity_solver, Terms{true, shared}, opts.log_floor);
    Matrix marks = a.mark_log_prob;
    if (!shared) {
      marks = parallel_likelihood(ops, model, batch, opts.mark_solver, Terms{false, true}, opts.log_floor).mark_log_prob;
    }
    // Clamp counts are per batch; attribute them by recounting per sequence only when nonzero.
    for (size_t s = start; s < end; ++s) {
      auto& lb = out[s];
      const auto r = static_cast<Eigen::Index>(s - start);
      lb.logL_lambda = a.log_intensity(r, 0) - a.compensator(r, 0);
      lb.logL_mark = marks(r, 0);
      lb.scored_events = std::max(0, static_cast<int>(ds.sequences[s].size()) - 1);
    }
    if (a.clamped_terms > 0) {
      for (size_t s = start; s < end; ++s) {
        const Sequence* one[1] = {&ds.sequences[s]};
        out[s].clamped_terms =
            parallel_likelihood(ops, model, one, opts.intensity_solver, Terms{true, false}, opts.log_floor)
                .clamped_terms;
      }
    }
  }
  return out;
}

LossBreakdown sequence_log_likelihood(const DecOdeModel& model, const Sequence& seq, const LikelihoodOptions& opts) {
  Dataset ds;
  ds.num_marks = model.num_marks();
  ds.sequences.push_back(seq);
  return dataset_log_likelihood(model, ds, opts, 1).front();
}

double compensator_parallel(const DecOdeModel& model, const Sequence& seq, double t, const ivp::SolverConfig& cfg) {
  if (model.combinator() != Combinator::linear) {
    throw std::invalid_argument("compensator_parallel: per-event integrals only decompose for the linear combinator");
  }
  Sequence cut;
  for (const auto& e : seq.events) {
    if (e.t < t) cut.events.push_back(e);
  }
  if (cut.empty()) return 0.0;
  cut.t_end = t;
  PlainOps ops = model.plain_ops();
  const Sequence* one[1] = {&cut};
  return parallel_likelihood(ops, model, one, cfg, Terms{true, false}, -30.0).compensator(0, 0);
}

// ---- generic conditional processes -------------------------------------------

Matrix ConditionalProcess::block_at(std::span<const Event>, double) const { return Matrix(0, 0); }

Matrix ConditionalProcess::block_derivative(std::span<const Event>, double, const Matrix& block) const {
  return Matrix::Zero(block.rows(), block.cols());
}

Matrix ConditionalProcess::extend_block(std::span<const Event> history, const Matrix&) const {
  return block_at(history, history.empty() ? 0.0 : history.back().t);
}

double ConditionalProcess::max_influence(std::span<const Event> history, double t, const Matrix& block) const {
  return ground_intensity(history, t, block);
}

Matrix DecOdeProcess::block_at(std::span<const Event> history, double t) const {
  if (history.empty()) return Matrix(0, model_->hidden_dim());
  if (t < history.back().t) throw std::invalid_argument("block_at: t precedes the last history event");
  Matrix block(0, model_->hidden_dim());
  for (size_t j = 0; j < history.size(); ++j) {
    block = extend_block(history.first(j + 1), block);
    const double next = j + 1 < history.size() ? history[j + 1].t : t;
    auto f = [&](double tt, const Matrix& y) -> Matrix { return block_derivative(history, tt, y); };
    block = ivp::integrate_interval<Matrix>(f, block, history[j].t, next, propagation_);
  }
  return block;
}

Matrix DecOdeProcess::block_derivative(std::span<const Event> history, double t, const Matrix& block) const {
  const auto rows = static_cast<size_t>(block.rows());
  if (rows == 0) return Matrix(0, block.cols());
  std::vector<double> elapsed(rows);
  std::vector<int> marks(rows);
  for (size_t i = 0; i < rows; ++i) {
    elapsed[i] = t - history[i].t;
    marks[i] = history[i].k;
  }
  PlainOps ops = model_->plain_ops();
  return model_->dynamics(ops, block, model_->context(elapsed, marks));
}

Matrix DecOdeProcess::extend_block(std::span<const Event> history, const Matrix& block) const {
  PlainOps ops = model_->plain_ops();
  const int k[1] = {history.back().k};
  const Matrix row = model_->initial_states(ops, k);
  Matrix out(block.rows() + 1, row.cols());
  if (block.rows() > 0) out.topRows(block.rows()) = block;
  out.bottomRows(1) = row;
  return out;
}

double DecOdeProcess::ground_intensity(std::span<const Event>, double, const Matrix& block) const {
  if (block.rows() == 0) return decode::ground_intensity(model_->combinator(), {});
  PlainOps ops = model_->plain_ops();
  const Matrix mu = model_->influence(ops, block);
  return decode::ground_intensity(model_->combinator(), std::span<const double>(mu.data(), static_cast<size_t>(mu.rows())));
}

Vector DecOdeProcess::mark_distribution(std::span<const Event>, double, const Matrix& block) const {
  if (block.rows() == 0) return mark_probability(Matrix(0, model_->num_marks()), model_->num_marks());
  PlainOps ops = model_->plain_ops();
  return mark_probability(model_->mark_influence(ops, block), model_->num_marks());
}

double DecOdeProcess::max_influence(std::span<const Event>, double, const Matrix& block) const {
  if (block.rows() == 0) return 0.0;
  PlainOps ops = model_->plain_ops();
  const Matrix mu = model_->influence(ops, block);
  if (model_->combinator() == Combinator::linear) return ad::softplus(mu).maxCoeff();
  return mu.cwiseAbs().maxCoeff();
}

AugmentedTrajectory integrate_augmented(const ConditionalProcess& process, std::span<const Event> history,
                                        double t_from, double t_to, const ivp::SolverConfig& cfg,
                                        std::optional<Matrix> block0) {
  AugmentedTrajectory out;
  DensityState y;
  y.block = block0 ? std::move(*block0) : process.block_at(history, t_from);
  y = advance_density(process, history, t_from, t_to, cfg, std::move(y), &out.points);
  out.block = std::move(y.block);
  for (const auto& p : out.points) {
    if (p.F > 1.0 + 1e-3) out.mass_overflow = true;
  }
  return out;
}

AugmentedTrajectory integrate_augmented(const DecOdeModel& model, const Sequence& seq, std::size_t history_cut,
                                        double t_from, double t_to, const ivp::SolverConfig& cfg) {
  if (history_cut > seq.size()) throw std::out_of_range("history_cut exceeds the sequence length");
  const DecOdeProcess process(model, cfg);
  return integrate_augmented(process, std::span<const Event>(seq.events.data(), history_cut), t_from, t_to, cfg);
}

HorizonPolicy horizon_policy(const DecOdeModel& model) {
  HorizonPolicy p;
  p.chunk = model.config().mean_gap;
  p.max_chunks = std::max(1, static_cast<int>(std::ceil(model.config().horizon_cap_gaps)));
  p.epsilon = model.config().horizon_epsilon;
  return p;
}

NextEventDensity next_event_density(const ConditionalProcess& process, std::span<const Event> history, double t_from,
                                    const HorizonPolicy& policy, const ivp::SolverConfig& cfg,
                                    std::optional<Matrix> block0, bool keep_points) {
  if (!(policy.chunk > 0.0)) throw std::invalid_argument("horizon chunk must be positive");
  NextEventDensity out;
  out.t_from = t_from;
  DensityState y;
  y.block = block0 ? std::move(*block0) : process.block_at(history, t_from);
  std::vector<AugmentedPoint> points;
  double t = t_from;
  ivp::SolverConfig chunk_cfg = cfg;
  const int max_steps = cfg.steps_per_interval * std::max(1, policy.max_refine);
  for (int c = 0; c < policy.max_chunks; ++c) {
    // Fast decay within a step makes the F and E quadrature overshoot.
    std::vector<AugmentedPoint> chunk_points;
    DensityState next;
    while (true) {
      double peak = 0.0;
      chunk_points.clear();
      next = advance_density(process, history, t, t + policy.chunk, chunk_cfg, y, keep_points ? &chunk_points : nullptr,
                             &peak);
      const double needed = std::ceil(peak * policy.chunk / policy.max_step_rate);
      if (needed <= chunk_cfg.steps_per_interval || chunk_cfg.steps_per_interval >= max_steps) break;
      chunk_cfg.steps_per_interval = static_cast<int>(std::min<double>(needed, max_steps));
    }
    y = std::move(next);
    if (keep_points) points.insert(points.end(), chunk_points.begin() + (points.empty() ? 0 : 1), chunk_points.end());
    t += policy.chunk;
    if (y.F > 1.0 + 1e-3) out.mass_overflow = true;
    if (y.F >= 1.0 - policy.mass_tolerance) break;
    if (process.max_influence(history, t, y.block) < policy.epsilon) break;
  }
  out.horizon = t;
  out.steps_per_chunk = chunk_cfg.steps_per_interval;
  out.F_end = y.F;
  out.E_raw = y.E;
  out.residual_mass = 1.0 - y.F;
  if (!(y.F > 1e-8)) throw std::runtime_error("next-event density carries no mass up to the horizon");
  out.expected_time = y.E / y.F;
  out.points = std::move(points);
  out.block = std::move(y.block);
  return out;
}

std::vector<double> normalize_density(std::span<const double> f_grid, double F_end) {
  if (!(F_end > 1e-8)) throw std::invalid_argument("normalize_density: total mass must exceed 1e-8");
  std::vector<double> out(f_grid.begin(), f_grid.end());
  for (double& v : out) v /= F_end;
  return out;
}

LossBreakdown process_log_likelihood(const ConditionalProcess& process, const Sequence& seq, FirstEventPolicy policy,
                                     double window_start, const ivp::SolverConfig& cfg, double log_floor) {
  LossBreakdown lb;
  if (seq.empty()) return lb;
  const std::span<const Event> all(seq.events);
  auto score = [&](std::span<const Event> hist, const Event& e, const Matrix& block) {
    const double lam = process.ground_intensity(hist, e.t, block);
    const double ll = std::log(lam);
    if (!(ll > log_floor)) ++lb.clamped_terms;
    lb.logL_lambda += std::max(ll, log_floor);
    const Vector p = process.mark_distribution(hist, e.t, block);
    lb.logL_mark += std::max(std::log(p(e.k)), log_floor);
    ++lb.scored_events;
  };
  if (policy == FirstEventPolicy::include) {
    if (seq.events.front().t < window_start) throw std::invalid_argument("first event precedes the window start");
    const std::span<const Event> none;
    const auto tr = integrate_augmented(process, none, window_start, seq.events.front().t, cfg);
    lb.logL_lambda -= tr.points.back().Lambda;
    score(none, seq.events.front(), tr.block);
  }
  Matrix block = process.extend_block(all.first(1), process.block_at({}, seq.events.front().t));
  for (size_t j = 0; j < seq.size(); ++j) {
    const auto hist = all.first(j + 1);
    const double next = j + 1 < seq.size() ? seq.events[j + 1].t : std::max(seq.t_end, seq.events[j].t);
    const auto tr = integrate_augmented(process, hist, seq.events[j].t, next, cfg, block);
    lb.logL_lambda -= tr.points.back().Lambda;
    if (j + 1 < seq.size()) {
      score(hist, seq.events[j + 1], tr.block);
      block = process.extend_block(all.first(j + 2), tr.block);
    }
  }
  return lb;
}

}  // namespace decode

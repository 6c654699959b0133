#include "decode/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>

namespace decode {

std::string to_string(Combinator c) { return c == Combinator::linear ? "linear" : "nonlinear"; }

Combinator combinator_from_string(const std::string& s) {
  if (s == "linear") return Combinator::linear;
  if (s == "nonlinear") return Combinator::nonlinear;
  throw std::invalid_argument("unknown combinator " + s);
}

void ModelConfig::validate() const {
  if (num_marks < 1) throw std::invalid_argument("num_marks must be >= 1");
  if (hidden_dim < 1 || width < 1) throw std::invalid_argument("hidden_dim and width must be >= 1");
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  if (!(mean_gap > 0.0)) throw std::invalid_argument("mean_gap must be positive");
  if (!(horizon_cap_gaps > 0.0)) throw std::invalid_argument("horizon_cap_gaps must be positive");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"num_marks", num_marks},
          {"hidden_dim", hidden_dim},
          {"width", width},
          {"depth", depth},
          {"activation", decode::to_string(activation)},
          {"combinator", decode::to_string(combinator)},
          {"embedding_init_scale", embedding_init_scale},
          {"seed", seed},
          {"mean_gap", mean_gap},
          {"horizon_cap_gaps", horizon_cap_gaps},
          {"horizon_epsilon", horizon_epsilon}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_marks = j.value("num_marks", c.num_marks);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.width = j.value("width", c.width);
  c.depth = j.value("depth", c.depth);
  c.activation = activation_from_string(j.value("activation", std::string("tanh")));
  c.combinator = combinator_from_string(j.value("combinator", std::string("linear")));
  c.embedding_init_scale = j.value("embedding_init_scale", c.embedding_init_scale);
  c.seed = j.value("seed", c.seed);
  c.mean_gap = j.value("mean_gap", c.mean_gap);
  c.horizon_cap_gaps = j.value("horizon_cap_gaps", c.horizon_cap_gaps);
  c.horizon_epsilon = j.value("horizon_epsilon", c.horizon_epsilon);
  return c;
}

namespace {

std::vector<int> layer_widths(int in, int width, int depth, int out) {
  std::vector<int> w{in};
  for (int l = 0; l + 1 < depth; ++l) w.push_back(width);
  w.push_back(out);
  return w;
}

}  // namespace

DecOdeModel::DecOdeModel(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const int d = cfg_.hidden_dim;
  const int k = cfg_.num_marks;
  embedding_ = Embedding(params_, "embedding", k, d, cfg_.embedding_init_scale, rng);
  dynamics_ = Mlp(params_, "dynamics", layer_widths(d + 1 + k, cfg_.width, cfg_.depth, d), cfg_.activation, rng);
  intensity_ = Mlp(params_, "intensity", layer_widths(d, cfg_.width, cfg_.depth, 1), cfg_.activation, rng);
  mark_ = Mlp(params_, "mark", layer_widths(d, cfg_.width, cfg_.depth, k), cfg_.activation, rng);
}

Matrix DecOdeModel::context(std::span<const double> elapsed, std::span<const int> marks) const {
  Matrix ctx;
  fill_context(ctx, elapsed, marks);
  return ctx;
}

void DecOdeModel::fill_context(Matrix& ctx, std::span<const double> elapsed, std::span<const int> marks) const {
  const auto n = static_cast<Eigen::Index>(elapsed.size());
  if (marks.size() != elapsed.size()) throw std::invalid_argument("context: elapsed and marks differ in length");
  ctx.setZero(n, 1 + cfg_.num_marks);
  for (Eigen::Index r = 0; r < n; ++r) {
    const int k = marks[static_cast<std::size_t>(r)];
    if (k < 0 || k >= cfg_.num_marks) throw std::out_of_range("mark out of range in context");
    ctx(r, 0) = elapsed[static_cast<std::size_t>(r)];
    ctx(r, 1 + k) = 1.0;
  }
}

nlohmann::json DecOdeModel::to_json() const {
  return {{"format", "dec-ode-checkpoint"}, {"version", 1}, {"config", cfg_.to_json()},
          {"parameters", parameters_to_json(params_)}};
}

DecOdeModel DecOdeModel::from_json(const nlohmann::json& doc) {
  if (doc.value("version", 0) != 1) throw std::runtime_error("unsupported checkpoint version");
  DecOdeModel m(ModelConfig::from_json(doc.at("config")));
  parameters_from_json(doc.at("parameters"), m.params_);
  return m;
}

void DecOdeModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17) << to_json().dump() << '\n';
}

DecOdeModel DecOdeModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json doc;
  in >> doc;
  return from_json(doc);
}

double ground_intensity(Combinator c, std::span<const double> mu) {
  if (c == Combinator::linear) {
    double s = 0.0;
    for (double m : mu) s += ad::softplus(m);
    return s;
  }
  double s = 0.0;
  for (double m : mu) s += m;
  return ad::softplus(s);
}

Vector mark_probability(const Matrix& fhat, int num_marks) {
  if (fhat.rows() == 0) return Vector::Constant(num_marks, 1.0 / num_marks);
  if (fhat.cols() != num_marks) throw std::invalid_argument("mark_probability: column count differs from K");
  const Eigen::RowVectorXd s = fhat.colwise().sum();
  const double m = s.maxCoeff();
  Vector p = (s.array() - m).exp().transpose();
  return p / p.sum();
}

std::vector<double> propagation_boundaries(const DecOdeModel& model, const Sequence& seq, double horizon) {
  if (seq.empty()) return {};
  if (horizon < seq.last_time()) throw std::invalid_argument("propagate: horizon precedes the last event");
  std::vector<double> b;
  b.reserve(seq.size() + 4);
  for (const auto& e : seq.events) b.push_back(e.t);
  const double gap = model.config().mean_gap;
  double t = seq.last_time();
  while (horizon - t > 1e-12 * std::max(1.0, std::abs(horizon))) {
    t = std::min(horizon, t + gap);
    b.push_back(t);
  }
  return b;
}

std::vector<EventTrajectory> propagate(const DecOdeModel& model, const Sequence& seq, double horizon,
                                       const ivp::SolverConfig& cfg) {
  cfg.validate();
  const auto bounds = propagation_boundaries(model, seq, horizon);
  const int n = static_cast<int>(seq.size());
  const int nb = static_cast<int>(bounds.size());
  const int steps = cfg.steps_per_interval;
  PlainOps ops = model.plain_ops();

  std::vector<int> marks(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) marks[static_cast<std::size_t>(i)] = seq.events[static_cast<std::size_t>(i)].k;

  std::vector<EventTrajectory> out(static_cast<std::size_t>(n));
  Matrix h = model.initial_states(ops, marks);
  // Rows are gathered per event and assembled once at the end.
  std::vector<std::vector<Eigen::RowVectorXd>> hid(static_cast<std::size_t>(n)), fh_rows(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> mu_vals(static_cast<std::size_t>(n));
  auto record = [&](int rows, const Matrix& state, std::span<const double> times) {
    const Matrix mu = model.influence(ops, state);
    const Matrix fh = model.mark_influence(ops, state);
    for (int r = 0; r < rows; ++r) {
      const auto u = static_cast<std::size_t>(r);
      out[u].times.push_back(times[u]);
      hid[u].push_back(state.row(r));
      mu_vals[u].push_back(mu(r, 0));
      fh_rows[u].push_back(fh.row(r));
    }
  };
  for (int i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)].event_index = i;
    out[static_cast<std::size_t>(i)].mark = marks[static_cast<std::size_t>(i)];
  }
  {
    std::vector<double> t0(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t0[static_cast<std::size_t>(i)] = seq.events[static_cast<std::size_t>(i)].t;
    record(n, h, t0);
  }

  // Stage l advances row i over its l-th interval [b_{i+l-1}, b_{i+l}]; rows
  // with i + l < nb are active and form a prefix.
  Matrix ctx;
  std::vector<double> elapsed, delta, offset, times;
  for (int l = 1; l < nb; ++l) {
    const int active = std::min(n, nb - l);
    h.conservativeResize(active, h.cols());
    std::span<const int> active_marks(marks.data(), static_cast<std::size_t>(active));
    delta.assign(static_cast<std::size_t>(active), 0.0);
    offset.assign(static_cast<std::size_t>(active), 0.0);
    for (int i = 0; i < active; ++i) {
      const double a = bounds[static_cast<std::size_t>(i + l - 1)];
      delta[static_cast<std::size_t>(i)] = bounds[static_cast<std::size_t>(i + l)] - a;
      offset[static_cast<std::size_t>(i)] = a - seq.events[static_cast<std::size_t>(i)].t;
    }
    const Vector dvec = Eigen::Map<const Vector>(delta.data(), active);
    auto field = [&](double s, const Matrix& y) -> Matrix {
      elapsed.resize(static_cast<std::size_t>(active));
      for (int i = 0; i < active; ++i) {
        elapsed[static_cast<std::size_t>(i)] = offset[static_cast<std::size_t>(i)] + s * delta[static_cast<std::size_t>(i)];
      }
      model.fill_context(ctx, elapsed, active_marks);
      return dvec.asDiagonal() * model.dynamics(ops, y, ctx);
    };
    const double hs = 1.0 / steps;
    for (int q = 0; q < steps; ++q) {
      h = ivp::step<Matrix>(cfg.method, field, h, q * hs, hs);
      if (!h.allFinite()) {
        throw ivp::SolverError("non-finite hidden state at stage " + std::to_string(l) + ", step " + std::to_string(q),
                               q);
      }
      times.resize(static_cast<std::size_t>(active));
      for (int i = 0; i < active; ++i) {
        times[static_cast<std::size_t>(i)] = q + 1 == steps
                                                 ? bounds[static_cast<std::size_t>(i + l)]
                                                 : bounds[static_cast<std::size_t>(i + l - 1)] +
                                                       (q + 1) * hs * delta[static_cast<std::size_t>(i)];
      }
      record(active, h, times);
    }
  }
  for (int i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    auto& tr = out[u];
    const auto len = static_cast<Eigen::Index>(tr.times.size());
    tr.hidden.resize(len, model.hidden_dim());
    tr.fhat.resize(len, model.num_marks());
    tr.mu = Eigen::Map<const Vector>(mu_vals[u].data(), len);
    for (Eigen::Index p = 0; p < len; ++p) {
      tr.hidden.row(p) = hid[u][static_cast<std::size_t>(p)];
      tr.fhat.row(p) = fh_rows[u][static_cast<std::size_t>(p)];
    }
  }
  return out;
}

std::vector<EventTrajectory> propagate_each(const DecOdeModel& model, const Sequence& seq, double horizon,
                                            const ivp::SolverConfig& cfg) {
  cfg.validate();
  const auto bounds = propagation_boundaries(model, seq, horizon);
  const int n = static_cast<int>(seq.size());
  const int steps = cfg.steps_per_interval;
  PlainOps ops = model.plain_ops();
  std::vector<EventTrajectory> out;
  for (int i = 0; i < n; ++i) {
    const Event e = seq.events[static_cast<std::size_t>(i)];
    const int mk[1] = {e.k};
    EventTrajectory tr;
    tr.event_index = i;
    tr.mark = e.k;
    Matrix y = model.initial_states(ops, mk);
    std::vector<Matrix> states{y};
    tr.times.push_back(e.t);
    Matrix ctx;
    auto f = [&](double t, const Matrix& state) -> Matrix {
      const double el[1] = {t - e.t};
      model.fill_context(ctx, el, mk);
      return model.dynamics(ops, state, ctx);
    };
    const ivp::SolverConfig one{cfg.method, 1};
    for (std::size_t j = static_cast<std::size_t>(i); j + 1 < bounds.size(); ++j) {
      const double a = bounds[j];
      const double len = bounds[j + 1] - a;
      for (int q = 0; q < steps; ++q) {
        const double lo = a + q * (len / steps);
        const double hi = q + 1 == steps ? bounds[j + 1] : a + (q + 1) * (len / steps);
        y = ivp::integrate_interval<Matrix>(f, y, lo, hi, one);
        states.push_back(y);
        tr.times.push_back(hi);
      }
    }
    tr.hidden.resize(static_cast<Eigen::Index>(states.size()), model.hidden_dim());
    for (std::size_t r = 0; r < states.size(); ++r) tr.hidden.row(static_cast<Eigen::Index>(r)) = states[r].row(0);
    tr.mu = model.influence(ops, tr.hidden).col(0);
    tr.fhat = model.mark_influence(ops, tr.hidden);
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<InfluenceRow> influence_export(const DecOdeModel& model, const Sequence& seq, int seq_id,
                                           std::span<const double> grid, const ivp::SolverConfig& cfg) {
  cfg.validate();
  std::vector<double> g(grid.begin(), grid.end());
  std::sort(g.begin(), g.end());
  PlainOps ops = model.plain_ops();
  std::vector<InfluenceRow> rows;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Event e = seq.events[i];
    const int mk[1] = {e.k};
    Matrix y = model.initial_states(ops, mk);
    double t = e.t;
    Matrix ctx;
    auto f = [&](double tt, const Matrix& state) -> Matrix {
      const double el[1] = {tt - e.t};
      model.fill_context(ctx, el, mk);
      return model.dynamics(ops, state, ctx);
    };
    for (double gt : g) {
      if (gt < e.t) continue;
      if (gt > t) {
        y = ivp::integrate_interval<Matrix>(f, y, t, gt, cfg);
        t = gt;
      }
      InfluenceRow row;
      row.seq_id = seq_id;
      row.event_index = static_cast<int>(i);
      row.mark = e.k;
      row.t = gt;
      row.mu = model.influence(ops, y)(0, 0);
      row.fhat = model.mark_influence(ops, y).row(0).transpose();
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void write_trajectory_csv(std::ostream& out, std::span<const InfluenceRow> rows, int num_marks, bool header) {
  if (header) {
    out << "seq_id,event_idx,mark,t,mu";
    for (int k = 0; k < num_marks; ++k) out << ",fhat_" << k;
    out << '\n';
  }
  out << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.seq_id << ',' << r.event_index << ',' << r.mark << ',' << r.t << ',' << r.mu;
    for (Eigen::Index k = 0; k < r.fhat.size(); ++k) out << ',' << r.fhat(k);
    out << '\n';
  }
}

Matrix influence_shares(const DecOdeModel& model, const Dataset& ds, const ivp::SolverConfig& cfg) {
  if (model.combinator() != Combinator::linear) {
    throw std::invalid_argument("influence shares need the linear combinator");
  }
  const int k = model.num_marks();
  Matrix share_sum = Matrix::Zero(k, k);
  Vector count = Vector::Zero(k);
  const int steps = cfg.steps_per_interval;
  for (const auto& seq : ds.sequences) {
    if (seq.size() < 2) continue;
    const auto traj = propagate(model, seq, seq.last_time(), cfg);
    for (std::size_t j = 1; j < seq.size(); ++j) {
      Vector by_source = Vector::Zero(k);
      for (std::size_t i = 0; i < j; ++i) {
        const auto idx = static_cast<Eigen::Index>((j - i) * static_cast<std::size_t>(steps));
        by_source(seq.events[i].k) += ad::softplus(traj[i].mu(idx));
      }
      const double total = by_source.sum();
      if (!(total > 0.0)) continue;
      share_sum.row(seq.events[j].k) += (by_source / total).transpose();
      count(seq.events[j].k) += 1.0;
    }
  }
  for (int r = 0; r < k; ++r) {
    if (count(r) > 0) share_sum.row(r) /= count(r);
  }
  return share_sum;
}

}  // namespace decode

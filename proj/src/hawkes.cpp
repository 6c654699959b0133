#include "decode/hawkes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include <Eigen/Eigenvalues>

namespace decode {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

nlohmann::json matrix_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, int K, const char* name) {
  if (!j.is_array() || static_cast<int>(j.size()) != K) {
    throw std::invalid_argument(std::string("hawkes spec: ") + name + " must be " + std::to_string(K) + " x " +
                                std::to_string(K));
  }
  Matrix m(K, K);
  for (int r = 0; r < K; ++r) {
    if (static_cast<int>(j[static_cast<std::size_t>(r)].size()) != K) {
      throw std::invalid_argument(std::string("hawkes spec: ragged ") + name);
    }
    for (int c = 0; c < K; ++c) m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

// Kernel values sum_{i} alpha beta exp(-beta (t - t_i)) split by (target, source),
// advanced event by event.
class Excitation {
 public:
  explicit Excitation(const HawkesSpec& spec) : spec_(&spec), ex_(Matrix::Zero(spec.num_marks(), spec.num_marks())) {}

  void advance_to(double t) {
    if (t > t_) ex_.array() *= (-spec_->beta.array() * (t - t_)).exp();
    t_ = t;
  }
  void add(int k) { ex_.col(k) += spec_->alpha.col(k).cwiseProduct(spec_->beta.col(k)); }

  [[nodiscard]] Vector rates() const {
    Vector r = spec_->v + ex_ * spec_->sign;
    return r.cwiseMax(0.0);
  }
  // Largest attainable total between now and the next event (inhibition ignored).
  [[nodiscard]] double upper_bound() const {
    double s = spec_->v.sum();
    for (int j = 0; j < ex_.cols(); ++j) {
      if (spec_->sign(j) > 0) s += ex_.col(j).sum();
    }
    return s;
  }
  // Integral of the (unclipped) excitatory total from now to now + dt.
  [[nodiscard]] double integral(double dt) const {
    const Matrix decay = (1.0 - (-spec_->beta.array() * dt).exp()) / spec_->beta.array();
    return spec_->v.sum() * dt + (ex_.array() * decay.array()).sum();
  }

 private:
  const HawkesSpec* spec_;
  Matrix ex_;
  double t_{0.0};
};

void require_excitatory(const HawkesSpec& spec, const char* what) {
  if (spec.inhibitory()) throw std::invalid_argument(std::string(what) + " needs an excitatory spec; use numeric_nll");
}

}  // namespace

bool HawkesSpec::inhibitory() const { return (sign.array() < 0).any(); }

void HawkesSpec::validate() const {
  const auto K = v.size();
  if (K < 1) throw std::invalid_argument("hawkes spec: no marks");
  if (alpha.rows() != K || alpha.cols() != K || beta.rows() != K || beta.cols() != K || sign.size() != K) {
    throw std::invalid_argument("hawkes spec: shape mismatch");
  }
  if (!v.allFinite() || !alpha.allFinite() || !beta.allFinite()) throw std::invalid_argument("hawkes spec: non-finite");
  if ((v.array() < 0).any() || (alpha.array() < 0).any()) throw std::invalid_argument("hawkes spec: negative rate");
  if ((beta.array() <= 0).any()) throw std::invalid_argument("hawkes spec: decay must be positive");
  for (Eigen::Index j = 0; j < K; ++j) {
    if (sign(j) != 1.0 && sign(j) != -1.0) throw std::invalid_argument("hawkes spec: sign must be +1 or -1");
  }
}

double HawkesSpec::spectral_radius() const {
  Eigen::EigenSolver<Matrix> es(alpha, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Vector HawkesSpec::stationary_rate() const {
  require_excitatory(*this, "stationary_rate");
  if (spectral_radius() >= 1.0) throw std::invalid_argument("stationary_rate: spectral radius >= 1");
  const auto K = v.size();
  return (Matrix::Identity(K, K) - alpha).lu().solve(v);
}

nlohmann::json HawkesSpec::to_json() const {
  std::vector<double> vv(v.data(), v.data() + v.size());
  std::vector<double> ss(sign.data(), sign.data() + sign.size());
  return {{"K", num_marks()}, {"v", vv}, {"alpha", matrix_json(alpha)}, {"beta", matrix_json(beta)}, {"sign", ss}};
}

HawkesSpec HawkesSpec::from_json(const nlohmann::json& j) {
  HawkesSpec s;
  const auto vv = j.at("v").get<std::vector<double>>();
  const int K = static_cast<int>(vv.size());
  s.v = Eigen::Map<const Vector>(vv.data(), K);
  s.alpha = matrix_from_json(j.at("alpha"), K, "alpha");
  s.beta = matrix_from_json(j.at("beta"), K, "beta");
  if (j.contains("sign")) {
    const auto ss = j.at("sign").get<std::vector<double>>();
    if (static_cast<int>(ss.size()) != K) throw std::invalid_argument("hawkes spec: sign length");
    s.sign = Eigen::Map<const Vector>(ss.data(), K);
  } else {
    s.sign = Vector::Ones(K);
  }
  s.validate();
  return s;
}

void HawkesSpec::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17) << to_json().dump(2) << '\n';
}

HawkesSpec HawkesSpec::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  in >> j;
  return from_json(j);
}

HawkesSpec HawkesSpec::poisson(const Vector& v) {
  const auto K = v.size();
  return {v, Matrix::Zero(K, K), Matrix::Ones(K, K), Vector::Ones(K)};
}

HawkesSpec rescale_time(const HawkesSpec& spec, double scale) {
  if (!(scale > 0.0)) throw std::invalid_argument("rescale_time: scale must be positive");
  HawkesSpec s = spec;
  s.v *= scale;
  s.beta *= scale;
  return s;
}

namespace {

// Sum over events with e.t < t, or e.t <= t when `inclusive`.
Vector intensities_impl(const HawkesSpec& spec, std::span<const Event> history, double t, bool inclusive) {
  Vector lam = spec.v;
  for (const auto& e : history) {
    if (inclusive ? e.t > t : !(e.t < t)) break;
    const auto j = e.k;
    lam += spec.sign(j) * (spec.alpha.col(j).array() * spec.beta.col(j).array() *
                           (-spec.beta.col(j).array() * (t - e.t)).exp())
                              .matrix();
  }
  return lam.cwiseMax(0.0);
}

}  // namespace

Vector intensities(const HawkesSpec& spec, std::span<const Event> history, double t) {
  return intensities_impl(spec, history, t, false);
}

double intensity(const HawkesSpec& spec, std::span<const Event> history, double t, int k) {
  if (k < 0 || k >= spec.num_marks()) throw std::out_of_range("intensity: mark out of range");
  return intensities(spec, history, t)(k);
}

double compensator(const HawkesSpec& spec, std::span<const Event> history, double t0, double t1) {
  require_excitatory(spec, "compensator");
  if (t1 < t0) throw std::invalid_argument("compensator: t1 precedes t0");
  double c = spec.v.sum() * (t1 - t0);
  for (const auto& e : history) {
    if (!(e.t < t1)) break;
    const double from = std::max(t0, e.t);
    for (int k = 0; k < spec.num_marks(); ++k) {
      const double b = spec.beta(k, e.k);
      c += spec.alpha(k, e.k) * (std::exp(-b * (from - e.t)) - std::exp(-b * (t1 - e.t)));
    }
  }
  return c;
}

namespace {

// -sum ln lambda_{k_i}(t_i) over events first..n-1 plus the compensator on [start, T].
double closed_form_nll(const HawkesSpec& spec, const Sequence& seq, std::size_t first, double start, double T) {
  Excitation ex(spec);
  double nll = 0.0;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const Event e = seq.events[i];
    ex.advance_to(e.t);
    if (i >= first) {
      const double lam = ex.rates()(e.k);
      if (!(lam > 0.0)) return std::numeric_limits<double>::infinity();
      nll -= std::log(lam);
    }
    ex.add(e.k);
  }
  double comp = spec.v.sum() * (T - start);
  for (const auto& e : seq.events) {
    for (int k = 0; k < spec.num_marks(); ++k) {
      comp += spec.alpha(k, e.k) * (1.0 - std::exp(-spec.beta(k, e.k) * (T - e.t)));
    }
  }
  return nll + comp;
}

}  // namespace

double analytic_nll(const HawkesSpec& spec, const Sequence& seq, double T) {
  require_excitatory(spec, "analytic_nll");
  if (!seq.empty() && (seq.events.front().t < 0.0 || seq.last_time() > T)) {
    throw std::invalid_argument("analytic_nll: events outside [0, T]");
  }
  return closed_form_nll(spec, seq, 0, 0.0, T);
}

double conditional_nll(const HawkesSpec& spec, const Sequence& seq) {
  require_excitatory(spec, "conditional_nll");
  if (seq.empty()) return 0.0;
  return closed_form_nll(spec, seq, 1, seq.events.front().t, std::max(seq.t_end, seq.last_time()));
}

double numeric_nll(const HawkesSpec& spec, const Sequence& seq, FirstEventPolicy policy, const ivp::SolverConfig& cfg) {
  const HawkesProcess proc(spec);
  const auto lb =
      process_log_likelihood(proc, seq, policy, 0.0, cfg, -std::numeric_limits<double>::infinity());
  return -lb.total();
}

SimResult simulate(const HawkesSpec& spec, const SimConfig& cfg) {
  spec.validate();
  if (!(cfg.horizon > 0.0)) throw std::invalid_argument("simulate: horizon must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  SimResult out;
  out.seq.t_end = cfg.horizon;
  Excitation ex(spec);
  double t = 0.0;
  while (true) {
    const double bound = ex.upper_bound();
    if (!(bound > 0.0)) break;
    t += std::exponential_distribution<double>(bound)(rng);
    if (t > cfg.horizon) break;
    ex.advance_to(t);
    const Vector lam = ex.rates();
    const double total = lam.sum();
    if (unif(rng) * bound > total) continue;
    double u = unif(rng) * total;
    int k = 0;
    while (k + 1 < spec.num_marks() && u >= lam(k)) u -= lam(k++);
    if (out.seq.size() >= cfg.max_events) {
      out.truncated = true;
      break;
    }
    out.seq.events.push_back({t, k});
    ex.add(k);
  }
  return out;
}

Dataset simulate_dataset(const HawkesSpec& spec, std::size_t n, const SimConfig& cfg) {
  Dataset ds;
  ds.num_marks = spec.num_marks();
  ds.sequences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    SimConfig c = cfg;
    c.seed = stream(cfg.seed, i)();
    ds.sequences.push_back(simulate(spec, c).seq);
  }
  return ds;
}

HawkesSpec sample_spec(int K, const SpecRanges& r, std::mt19937_64& rng) {
  if (K < 1) throw std::invalid_argument("sample_spec: K must be >= 1");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  for (int attempt = 0; attempt < 100000; ++attempt) {
    HawkesSpec s;
    s.v.resize(K);
    s.alpha.resize(K, K);
    s.beta.resize(K, K);
    s.sign = Vector::Ones(K);
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < K; ++j) s.alpha(k, j) = draw(r.alpha_lo, r.alpha_hi) / K;
    }
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < K; ++j) s.beta(k, j) = draw(r.beta_lo, r.beta_hi);
    }
    for (int k = 0; k < K; ++k) s.v(k) = draw(r.v_lo, r.v_hi);
    if (r.dominant_cross) {
      std::vector<int> perm(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k) perm[static_cast<std::size_t>(k)] = k;
      std::shuffle(perm.begin(), perm.end(), rng);
      for (int j = 0; j < K; ++j) s.alpha(perm[static_cast<std::size_t>(j)], j) += draw(r.cross_lo, r.cross_hi);
    }
    if (s.spectral_radius() < r.max_radius) return s;
  }
  throw std::runtime_error("sample_spec: no stationary spec found");
}

double tune_horizon(const HawkesSpec& spec, double target_events, std::uint64_t seed, std::size_t probes) {
  if (!(target_events > 0.0)) throw std::invalid_argument("tune_horizon: target must be positive");
  // Common random numbers: for a fixed seed the sequence on [0, T] is a prefix
  // of the one on [0, T'] for T' > T, so the mean count is monotone in T.
  auto mean_count = [&](double T) {
    SimConfig c{T, 1000000, seed};
    const auto ds = simulate_dataset(spec, probes, c);
    return static_cast<double>(ds.num_events()) / static_cast<double>(probes);
  };
  double lo = 0.0, hi = 1.0;
  while (mean_count(hi) < target_events) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e9) throw std::runtime_error("tune_horizon: target unreachable");
  }
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_count(mid) < target_events ? lo : hi) = mid;
  }
  return hi;
}

// The caller decides the history, so an event at exactly t counts (it is the
// left end of the interval being integrated).
double HawkesProcess::ground_intensity(std::span<const Event> history, double t, const Matrix&) const {
  return intensities_impl(spec_, history, t, true).sum();
}

Vector HawkesProcess::mark_distribution(std::span<const Event> history, double t, const Matrix&) const {
  const Vector lam = intensities_impl(spec_, history, t, true);
  const double s = lam.sum();
  if (!(s > 0.0)) return Vector::Constant(spec_.num_marks(), 1.0 / spec_.num_marks());
  return lam / s;
}

double HawkesProcess::max_influence(std::span<const Event> history, double t, const Matrix&) const {
  double m = 0.0;
  for (const auto& e : history) {
    if (e.t > t) break;
    const auto decay = (spec_.alpha.col(e.k).array() * spec_.beta.col(e.k).array() *
                        (-spec_.beta.col(e.k).array() * (t - e.t)).exp());
    m = std::max(m, decay.maxCoeff());
  }
  return m;
}

ThinningSample sample_next_event(const ConditionalProcess& process, std::span<const Event> history, double t_from,
                                 const ThinningConfig& cfg, std::mt19937_64& rng, std::optional<Matrix> block0) {
  if (!(cfg.c > 0.0) || cfg.m < 1 || !(cfg.window > 0.0)) throw std::invalid_argument("thinning: bad config");
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ThinningSample out;
  Matrix block = block0 ? std::move(*block0) : process.block_at(history, t_from);
  auto advance = [&](const Matrix& y, double a, double b) -> Matrix {
    if (y.size() == 0 || !(b > a)) return y;
    auto f = [&](double tt, const Matrix& s) -> Matrix { return process.block_derivative(history, tt, s); };
    return ivp::integrate_interval<Matrix>(f, y, a, b, cfg.propagation);
  };
  int m = cfg.m;
  long rejections = 0;
  double t = t_from;
  std::vector<double> probes;
  while (t < cfg.horizon) {
    const double w_end = std::min(t + cfg.window, cfg.horizon);
    probes.resize(static_cast<std::size_t>(m));
    for (double& p : probes) p = t + (w_end - t) * unif(rng);
    std::sort(probes.begin(), probes.end());
    double peak = process.ground_intensity(history, t, block);
    {
      Matrix y = block;
      double at = t;
      for (double p : probes) {
        y = advance(y, at, p);
        at = p;
        peak = std::max(peak, process.ground_intensity(history, p, y));
      }
    }
    const double bound = cfg.c * peak;
    bool reprobe = false;
    while (!reprobe) {
      const double next = bound > 0.0 ? t + std::exponential_distribution<double>(bound)(rng)
                                      : std::numeric_limits<double>::infinity();
      if (next > w_end) {
        block = advance(block, t, w_end);
        t = w_end;
        break;
      }
      block = advance(block, t, next);
      t = next;
      ++out.proposals;
      const double lam = process.ground_intensity(history, t, block);
      if (lam > bound) {
        // The probes missed the peak: accept (the test below always passes) but
        // probe more densely from now on.
        out.bound_violated = true;
        m = std::min(m * 10, 100000);
        reprobe = true;
      }
      if (unif(rng) * bound <= lam) {
        const Vector p = process.mark_distribution(history, t, block);
        double u = unif(rng);
        int k = 0;
        while (k + 1 < p.size() && u >= p(k)) u -= p(k++);
        out.event = Event{t, k};
        return out;
      }
      if (++rejections >= cfg.max_rejections) throw std::runtime_error("thinning: upper bound misconfigured");
    }
  }
  return out;
}

std::vector<double> rescaled_gaps(const HawkesSpec& spec, const Sequence& seq) {
  require_excitatory(spec, "rescaled_gaps");
  std::vector<double> out;
  Excitation ex(spec);
  double prev = 0.0;
  for (const auto& e : seq.events) {
    const double g = ex.integral(e.t - prev);
    ex.advance_to(e.t);
    if (&e != &seq.events.front()) out.push_back(g);
    ex.add(e.k);
    prev = e.t;
  }
  return out;
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  if (samples.empty()) throw std::invalid_argument("ks_statistic: no samples");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max({d, (static_cast<double>(i) + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_value(std::size_t n, double alpha) {
  return std::sqrt(-std::log(alpha / 2.0) / 2.0) / std::sqrt(static_cast<double>(n));
}

}  // namespace decode

// decode: command-line driver for simulation, training, evaluation and export.
#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>

#include "decode/eval.hpp"
#include "decode/hawkes.hpp"
#include "decode/trainer.hpp"

namespace fs = std::filesystem;
using namespace decode;
using nlohmann::json;

namespace {

struct Common {
  std::uint64_t seed{0};
  std::string config;
  std::string out;
};

void add_common(CLI::App* sub, Common& c, bool out_required = true) {
  sub->add_option("--seed", c.seed, "Random seed");
  sub->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  auto* o = sub->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

json read_json(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

json section(const json& cfg, const char* key) { return cfg.contains(key) ? cfg.at(key) : json::object(); }

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

fs::path header_path(const fs::path& data) { return fs::path(data.string() + ".header.json"); }

// Corpus plus its header sidecar when present.
Dataset load_corpus(const std::string& path) {
  const fs::path hp = header_path(path);
  if (fs::exists(hp)) {
    const auto h = load_header(hp);
    Dataset ds = load_jsonl(path, h.num_marks);
    ds.time_scale = h.time_scale;
    ds.scale_rule = h.scale_rule;
    return ds;
  }
  return load_jsonl(path);
}

void save_corpus(const Dataset& ds, const fs::path& path) {
  save_jsonl(ds, path);
  save_header(ds, header_path(path));
}

double mean_gap(const Dataset& ds) {
  const auto gaps = pooled_gaps(ds);
  if (gaps.empty()) return 1.0;
  double s = 0.0;
  for (double g : gaps) s += g;
  return s / static_cast<double>(gaps.size());
}

SpecRanges ranges_from_json(const json& j) {
  SpecRanges r;
  r.v_lo = j.value("v_lo", r.v_lo);
  r.v_hi = j.value("v_hi", r.v_hi);
  r.alpha_lo = j.value("alpha_lo", r.alpha_lo);
  r.alpha_hi = j.value("alpha_hi", r.alpha_hi);
  r.beta_lo = j.value("beta_lo", r.beta_lo);
  r.beta_hi = j.value("beta_hi", r.beta_hi);
  r.max_radius = j.value("max_radius", r.max_radius);
  r.dominant_cross = j.value("dominant_cross", r.dominant_cross);
  r.cross_lo = j.value("cross_lo", r.cross_lo);
  r.cross_hi = j.value("cross_hi", r.cross_hi);
  return r;
}

// ---- subcommands ----------------------------------------------------------------

struct SimulateArgs {
  Common c;
  std::string spec;
  int marks{0};
  std::size_t n{100};
  double horizon{0.0};
  double target_events{0.0};
};

int run_simulate(const SimulateArgs& a) {
  const json cfg = read_json(a.c.config);
  HawkesSpec spec;
  if (!a.spec.empty()) {
    spec = HawkesSpec::load(a.spec);
  } else {
    if (a.marks < 1) throw CLI::ValidationError("simulate: give --spec or --marks");
    std::mt19937_64 rng(a.c.seed);
    spec = sample_spec(a.marks, ranges_from_json(section(cfg, "ranges")), rng);
    spec.save(a.c.out + ".spec.json");
  }
  double horizon = a.horizon;
  if (a.target_events > 0.0) horizon = tune_horizon(spec, a.target_events, a.c.seed);
  if (!(horizon > 0.0)) throw CLI::ValidationError("simulate: give --horizon or --target-events");
  Dataset ds = simulate_dataset(spec, a.n, {horizon, 100000, a.c.seed});
  save_corpus(ds, a.c.out);
  std::cerr << "simulated " << ds.sequences.size() << " sequences, " << ds.num_events() << " events, horizon "
            << horizon << '\n';
  return 0;
}

struct PreprocessArgs {
  Common c;
  std::string in;
  std::vector<double> split;
  double scale{0.0};
};

int run_preprocess(const PreprocessArgs& a) {
  const Dataset raw = load_corpus(a.in);
  if (a.split.empty()) {
    const Dataset ds = a.scale > 0.0 ? preprocess(raw, a.scale) : preprocess(raw);
    save_corpus(ds, a.c.out);
    std::cerr << "time scale " << ds.time_scale << '\n';
    return 0;
  }
  if (a.split.size() != 2) throw CLI::ValidationError("--split takes train and valid fractions");
  const Split parts = split_dataset(raw, a.split[0], a.split[1], a.c.seed);
  // The scale comes from the training part only.
  const double scale = a.scale > 0.0 ? a.scale : resolve_time_scale(preprocess(parts.train, 1.0));
  save_corpus(preprocess(parts.train, scale), a.c.out + ".train.jsonl");
  save_corpus(preprocess(parts.valid, scale), a.c.out + ".valid.jsonl");
  save_corpus(preprocess(parts.test, scale), a.c.out + ".test.jsonl");
  std::cerr << "time scale " << scale << '\n';
  return 0;
}

struct TrainArgs {
  Common c;
  std::string train, valid, log, mode, variant;
  int epochs{-1};
  int workers{0};
};

int run_train(const TrainArgs& a) {
  const json cfg = read_json(a.c.config);
  const Dataset train_ds = load_corpus(a.train);
  std::optional<Dataset> valid_ds;
  if (!a.valid.empty()) valid_ds = load_corpus(a.valid);

  json mj = section(cfg, "model");
  if (!mj.contains("num_marks")) mj["num_marks"] = train_ds.num_marks;
  if (!mj.contains("mean_gap")) mj["mean_gap"] = mean_gap(train_ds);
  if (!mj.contains("seed")) mj["seed"] = a.c.seed;
  ModelConfig mc = ModelConfig::from_json(mj);
  json tj = section(cfg, "train");
  if (!tj.contains("seed")) tj["seed"] = a.c.seed;
  TrainConfig tc = TrainConfig::from_json(tj);
  if (a.epochs >= 0) tc.epochs = a.epochs;
  if (a.workers > 0) tc.workers = a.workers;
  if (!a.mode.empty()) tc.mode = mode_from_string(a.mode);
  if (!a.variant.empty()) tc.variant = combinator_from_string(a.variant);
  mc.combinator = tc.variant;

  DecOdeModel model(mc);
  std::ofstream log(a.log.empty() ? a.c.out + ".log.csv" : a.log);
  const auto res = train(model, train_ds, valid_ds ? &*valid_ds : nullptr, tc, &log);
  model.save(a.c.out);
  write_json({{"model", mc.to_json()},
              {"train", tc.to_json()},
              {"best_epoch", res.best_epoch},
              {"epochs_run", res.epochs.size()},
              {"stopped_early", res.stopped_early},
              {"checkpoint_hash", fnv1a_hex(model.to_json().dump())}},
             a.c.out + ".meta.json");
  if (!res.epochs.empty()) {
    std::cerr << "final train nll " << res.epochs.back().nll << " (" << res.epochs.size() << " epochs)\n";
  }
  return 0;
}

struct EvaluateArgs {
  Common c;
  std::string model, data, spec, baseline_train;
  int workers{1};
  int resamples{0};
};

int run_evaluate(const EvaluateArgs& a) {
  const json cfg = read_json(a.c.config);
  EvalConfig ec = EvalConfig::from_json(section(cfg, "eval"));
  ec.seed = a.c.seed;
  ec.workers = a.workers;
  if (a.resamples > 0) ec.resamples = a.resamples;
  const Dataset ds = load_corpus(a.data);
  EvalReport r;
  if (!a.model.empty()) {
    r = evaluate(DecOdeModel::load(a.model), ds, ec);
  } else if (!a.spec.empty()) {
    // The spec lives in raw time units; bring it to the corpus units.
    r = evaluate_process(HawkesProcess(rescale_time(HawkesSpec::load(a.spec), ds.time_scale)), ds, ec);
  } else {
    throw CLI::ValidationError("evaluate: give --model or --spec");
  }
  json j = r.to_json();
  j["config"] = ec.to_json();
  if (!a.baseline_train.empty()) j["marginal_mark_accuracy"] = marginal_mark_accuracy(load_corpus(a.baseline_train), ds);
  write_json(j, a.c.out);
  std::cerr << "nll " << r.nll.value << " rmse " << r.rmse.value << " acc " << r.acc.value << '\n';
  return 0;
}

struct SampleArgs {
  Common c;
  std::string model, spec, data;
  std::size_t n{0};
  int prefix{1};
  double horizon{0.0};
  std::size_t max_events{1000};
};

int run_sample(const SampleArgs& a) {
  const Dataset seeds = load_corpus(a.data);
  std::unique_ptr<DecOdeModel> model;
  std::unique_ptr<ConditionalProcess> proc;
  if (!a.model.empty()) {
    model = std::make_unique<DecOdeModel>(DecOdeModel::load(a.model));
    proc = std::make_unique<DecOdeProcess>(*model, ivp::SolverConfig{ivp::Method::rk4, 16});
  } else if (!a.spec.empty()) {
    proc = std::make_unique<HawkesProcess>(rescale_time(HawkesSpec::load(a.spec), seeds.time_scale));
  } else {
    throw CLI::ValidationError("sample: give --model or --spec");
  }
  if (a.prefix < 1) throw CLI::ValidationError("--prefix must be >= 1");
  std::mt19937_64 rng(a.c.seed);
  Dataset out;
  out.num_marks = seeds.num_marks;
  out.time_scale = seeds.time_scale;
  const std::size_t n = a.n > 0 ? std::min(a.n, seeds.sequences.size()) : seeds.sequences.size();
  long violations = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Sequence& src = seeds.sequences[i];
    if (src.empty()) continue;
    Sequence s;
    const auto keep = std::min<std::size_t>(static_cast<std::size_t>(a.prefix), src.size());
    s.events.assign(src.events.begin(), src.events.begin() + static_cast<long>(keep));
    s.t_end = a.horizon > 0.0 ? s.events.front().t + a.horizon : src.t_end;
    ThinningConfig tc;
    tc.horizon = s.t_end;
    tc.window = mean_gap(seeds);
    // Carry the hidden block from event to event instead of rebuilding it.
    Matrix block = proc->block_at(s.events, s.events.back().t);
    while (s.size() < a.max_events) {
      const double t0 = s.events.back().t;
      const auto smp = sample_next_event(*proc, s.events, t0, tc, rng, block);
      violations += smp.bound_violated ? 1 : 0;
      if (!smp.event) break;
      if (block.size() > 0) {
        auto f = [&](double t, const Matrix& y) -> Matrix { return proc->block_derivative(s.events, t, y); };
        block = ivp::integrate_interval<Matrix>(f, block, t0, smp.event->t, tc.propagation);
      }
      s.events.push_back(*smp.event);
      block = proc->extend_block(s.events, block);
    }
    if (s.size() >= a.max_events) std::cerr << "warning: sequence " << i << " stopped at --max-events\n";
    out.sequences.push_back(std::move(s));
  }
  save_corpus(out, a.c.out);
  if (violations > 0) std::cerr << "warning: thinning bound exceeded in " << violations << " draws\n";
  return 0;
}

struct ExportArgs {
  Common c;
  std::string model, data;
  double step{0.1};
  std::size_t n{0};
};

int run_export(const ExportArgs& a) {
  const DecOdeModel model = DecOdeModel::load(a.model);
  const Dataset ds = load_corpus(a.data);
  if (!(a.step > 0.0)) throw CLI::ValidationError("--grid-step must be positive");
  std::ofstream out(a.c.out);
  if (!out) throw std::runtime_error("cannot write " + a.c.out);
  const std::size_t n = a.n > 0 ? std::min(a.n, ds.sequences.size()) : ds.sequences.size();
  bool header = true;
  for (std::size_t i = 0; i < n; ++i) {
    const Sequence& s = ds.sequences[i];
    if (s.empty()) continue;
    std::vector<double> grid;
    for (double t = s.events.front().t; t <= s.t_end + 1e-12; t += a.step) grid.push_back(t);
    const auto rows = influence_export(model, s, static_cast<int>(i), grid, {ivp::Method::rk4, 16});
    write_trajectory_csv(out, rows, model.num_marks(), header);
    header = false;
  }
  return 0;
}

struct BenchmarkArgs {
  Common c;
  std::string model, data, modes{"parallel,sequential"}, name;
  int iterations{20};
};

int run_benchmark(const BenchmarkArgs& a) {
  const json cfg = read_json(a.c.config);
  const Dataset ds = load_corpus(a.data);
  std::optional<DecOdeModel> model;
  if (!a.model.empty()) {
    model.emplace(DecOdeModel::load(a.model));
  } else {
    json mj = section(cfg, "model");
    if (!mj.contains("num_marks")) mj["num_marks"] = ds.num_marks;
    if (!mj.contains("seed")) mj["seed"] = a.c.seed;
    model.emplace(ModelConfig::from_json(mj));
  }
  json tj = section(cfg, "train");
  if (!tj.contains("seed")) tj["seed"] = a.c.seed;
  TrainConfig tc = TrainConfig::from_json(tj);
  tc.variant = model->combinator();
  bool want_par = false, want_seq = false;
  std::stringstream ms(a.modes);
  for (std::string m; std::getline(ms, m, ',');) {
    const auto mode = mode_from_string(m);
    (mode == PropagationMode::parallel ? want_par : want_seq) = true;
  }
  const auto b = benchmark_modes(*model, ds, tc, a.iterations);
  std::ofstream out(a.c.out);
  if (!out) throw std::runtime_error("cannot write " + a.c.out);
  const std::string name = a.name.empty() ? fs::path(a.data).stem().string() : a.name;
  out << "dataset,mode,sec_per_iter,ratio\n" << std::setprecision(6);
  if (want_par) out << name << ",parallel," << b.parallel_sec_per_iter << ',' << b.ratio << '\n';
  if (want_seq) out << name << ",sequential," << b.sequential_sec_per_iter << ",1\n";
  std::cerr << "parallel " << b.parallel_sec_per_iter << " s/iter, sequential " << b.sequential_sec_per_iter
            << " s/iter, ratio " << b.ratio << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled ODE marked point process toolkit"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s_sim = app.add_subcommand("simulate", "Simulate a Hawkes corpus (JSONL)");
  add_common(s_sim, sim.c);
  s_sim->add_option("--spec", sim.spec, "HawkesSpec JSON")->check(CLI::ExistingFile);
  s_sim->add_option("--marks", sim.marks, "Sample a spec with this many marks instead");
  s_sim->add_option("--n", sim.n, "Number of sequences");
  s_sim->add_option("--horizon", sim.horizon, "Observation window length");
  s_sim->add_option("--target-events", sim.target_events, "Tune the horizon to this mean length");

  PreprocessArgs pre;
  auto* s_pre = app.add_subcommand("preprocess", "Sort, deduplicate and rescale a corpus");
  add_common(s_pre, pre.c);
  s_pre->add_option("--in", pre.in, "Raw corpus")->required()->check(CLI::ExistingFile);
  s_pre->add_option("--split", pre.split, "Train and valid fractions; writes <out>.{train,valid,test}.jsonl")
      ->delimiter(',');
  s_pre->add_option("--scale", pre.scale, "Fixed time divisor");

  TrainArgs tr;
  auto* s_tr = app.add_subcommand("train", "Train a model; writes a checkpoint");
  add_common(s_tr, tr.c);
  s_tr->add_option("--train", tr.train, "Training corpus")->required()->check(CLI::ExistingFile);
  s_tr->add_option("--valid", tr.valid, "Validation corpus")->check(CLI::ExistingFile);
  s_tr->add_option("--log", tr.log, "Training log CSV");
  s_tr->add_option("--epochs", tr.epochs, "Override epochs");
  s_tr->add_option("--workers", tr.workers, "Gradient worker threads");
  s_tr->add_option("--mode", tr.mode, "parallel or sequential");
  s_tr->add_option("--variant", tr.variant, "linear or nonlinear");

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "NLL, RMSE and ACC with bootstrap spread");
  add_common(s_ev, ev.c);
  s_ev->add_option("--model", ev.model, "Checkpoint")->check(CLI::ExistingFile);
  s_ev->add_option("--spec", ev.spec, "Evaluate a Hawkes spec instead")->check(CLI::ExistingFile);
  s_ev->add_option("--data", ev.data, "Test corpus")->required()->check(CLI::ExistingFile);
  s_ev->add_option("--baseline-train", ev.baseline_train, "Corpus for the marginal-mark baseline")
      ->check(CLI::ExistingFile);
  s_ev->add_option("--workers", ev.workers, "Threads over sequences");
  s_ev->add_option("--resamples", ev.resamples, "Bootstrap resamples");

  SampleArgs sa;
  auto* s_sa = app.add_subcommand("sample", "Continue sequences by thinning");
  add_common(s_sa, sa.c);
  s_sa->add_option("--model", sa.model, "Checkpoint")->check(CLI::ExistingFile);
  s_sa->add_option("--spec", sa.spec, "Sample a Hawkes spec instead")->check(CLI::ExistingFile);
  s_sa->add_option("--data", sa.data, "Corpus whose prefixes seed the samples")->required()->check(CLI::ExistingFile);
  s_sa->add_option("--n", sa.n, "Number of sequences (default all)");
  s_sa->add_option("--prefix", sa.prefix, "Observed events kept from each seed sequence");
  s_sa->add_option("--horizon", sa.horizon, "Window after the first event (default: seed t_end)");
  s_sa->add_option("--max-events", sa.max_events, "Cap on events per sampled sequence");

  ExportArgs ex;
  auto* s_ex = app.add_subcommand("export-trajectories", "Decoded influence trajectories as CSV");
  add_common(s_ex, ex.c);
  s_ex->add_option("--model", ex.model, "Checkpoint")->required()->check(CLI::ExistingFile);
  s_ex->add_option("--data", ex.data, "Corpus")->required()->check(CLI::ExistingFile);
  s_ex->add_option("--grid-step", ex.step, "Grid spacing");
  s_ex->add_option("--n", ex.n, "Number of sequences (default all)");

  BenchmarkArgs be;
  auto* s_be = app.add_subcommand("benchmark", "Parallel vs sequential seconds per iteration");
  add_common(s_be, be.c);
  s_be->add_option("--model", be.model, "Checkpoint (default: fresh model from --config)")->check(CLI::ExistingFile);
  s_be->add_option("--data", be.data, "Corpus")->required()->check(CLI::ExistingFile);
  s_be->add_option("--modes", be.modes, "Comma-separated modes");
  s_be->add_option("--iterations", be.iterations, "Timed iterations per mode");
  s_be->add_option("--name", be.name, "Dataset label in the CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*s_sim) return run_simulate(sim);
    if (*s_pre) return run_preprocess(pre);
    if (*s_tr) return run_train(tr);
    if (*s_ev) return run_evaluate(ev);
    if (*s_sa) return run_sample(sa);
    if (*s_ex) return run_export(ex);
    if (*s_be) return run_benchmark(be);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

#include "decode/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace decode {

using nlohmann::json;

bool Sequence::strictly_increasing() const {
  for (std::size_t i = 1; i < events.size(); ++i) {
    if (!(events[i - 1].t < events[i].t)) return false;
  }
  return true;
}

std::size_t Dataset::num_events() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.size();
  return n;
}

namespace {

Sequence parse_sequence_line(const std::string& line, std::size_t line_no) {
  auto fail = [&](const std::string& what) {
    throw DataError("line " + std::to_string(line_no) + ": " + what);
  };
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(std::string("parse error: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("seq") || !doc["seq"].is_array()) {
    fail("expected an object with a \"seq\" array");
  }
  Sequence seq;
  seq.events.reserve(doc["seq"].size());
  for (const auto& item : doc["seq"]) {
    if (!item.is_object() || !item.contains("t") || !item.contains("k")) fail("event needs \"t\" and \"k\"");
    if (!item["t"].is_number()) fail("event time must be a number");
    if (!item["k"].is_number_integer()) fail("mark must be an integer");
    Event e{item["t"].get<double>(), item["k"].get<int>()};
    if (!std::isfinite(e.t) || e.t < 0.0) fail("event time must be finite and non-negative");
    if (e.k < 0) fail("negative mark " + std::to_string(e.k));
    seq.events.push_back(e);
  }
  seq.t_end = seq.last_time();
  for (const auto& e : seq.events) seq.t_end = std::max(seq.t_end, e.t);
  if (doc.contains("t_end") && !doc["t_end"].is_null()) {
    if (!doc["t_end"].is_number()) fail("t_end must be a number");
    const double t_end = doc["t_end"].get<double>();
    if (t_end < seq.t_end) fail("t_end precedes the last event");
    seq.t_end = t_end;
  }
  return seq;
}

}  // namespace

Dataset parse_jsonl(const std::string& text, std::optional<int> num_marks, LoadReport* report) {
  Dataset ds;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::size_t> line_of_sequence;
  int max_mark = -1;
  LoadReport local;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Sequence seq = parse_sequence_line(line, line_no);
    for (const auto& e : seq.events) {
      if (num_marks && e.k >= *num_marks) {
        throw DataError("line " + std::to_string(line_no) + ": mark " + std::to_string(e.k) +
                        " out of range [0, " + std::to_string(*num_marks) + ")");
      }
      max_mark = std::max(max_mark, e.k);
    }
    bool monotone = true;
    for (std::size_t i = 1; i < seq.events.size(); ++i) {
      if (seq.events[i].t < seq.events[i - 1].t) monotone = false;
      if (seq.events[i].t == seq.events[i - 1].t) ++local.tied_events;
    }
    if (!monotone) {
      ++local.non_monotone_sequences;
      local.warnings.push_back("line " + std::to_string(line_no) + ": non-monotone event times");
    }
    ds.sequences.push_back(std::move(seq));
  }
  if (ds.sequences.empty()) throw DataError("no sequences");
  ds.num_marks = num_marks ? *num_marks : max_mark + 1;
  if (ds.num_marks <= 0) throw DataError("dataset has no events, cannot infer num_marks");
  if (report) *report = std::move(local);
  return ds;
}

Dataset load_jsonl(const std::filesystem::path& path, std::optional<int> num_marks, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str(), num_marks, report);
}

void save_jsonl(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& seq : ds.sequences) {
    json line;
    line["seq"] = json::array();
    for (const auto& e : seq.events) line["seq"].push_back({{"t", e.t}, {"k", e.k}});
    line["t_end"] = seq.t_end;
    out << line.dump() << '\n';
  }
}

DatasetHeader load_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  DatasetHeader h;
  h.num_marks = doc.at("num_marks").get<int>();
  h.time_scale = doc.value("time_scale", 1.0);
  h.scale_rule = doc.value("scale_rule", std::string("population_std"));
  if (h.num_marks <= 0) throw DataError("num_marks must be positive");
  if (!(h.time_scale > 0.0)) throw DataError("time_scale must be positive");
  return h;
}

void save_header(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  json doc{{"num_marks", ds.num_marks}, {"time_scale", ds.time_scale}, {"scale_rule", ds.scale_rule}};
  out << doc.dump(2) << '\n';
}

Sequence deduplicate(const Sequence& seq) {
  Sequence out;
  out.t_end = seq.t_end;
  out.events.reserve(seq.events.size());
  for (const auto& e : seq.events) {
    if (!out.events.empty() && e.t <= out.events.back().t) continue;
    out.events.push_back(e);
  }
  return out;
}

std::vector<double> pooled_gaps(const Dataset& ds) {
  std::vector<double> gaps;
  for (const auto& s : ds.sequences) {
    for (std::size_t i = 1; i < s.events.size(); ++i) gaps.push_back(s.events[i].t - s.events[i - 1].t);
  }
  return gaps;
}

double compute_time_scale(const Dataset& train) {
  const auto gaps = pooled_gaps(train);
  if (gaps.empty()) throw DataError("no inter-event gaps available for time scaling");
  const double n = static_cast<double>(gaps.size());
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / n;
  double var = 0.0;
  for (double g : gaps) var += (g - mean) * (g - mean);
  var /= n;
  const double sd = std::sqrt(var);
  if (!(sd > 0.0)) throw DataError("degenerate gaps: zero variance");
  return sd;
}

double resolve_time_scale(const Dataset& train) {
  try {
    return compute_time_scale(train);
  } catch (const DataError&) {
    const auto gaps = pooled_gaps(train);
    if (gaps.empty()) throw;
    const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
    return mean > 0.0 ? mean : 1.0;
  }
}

Dataset apply_scale(const Dataset& ds, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw DataError("time scale must be positive and finite");
  Dataset out = ds;
  for (auto& s : out.sequences) {
    for (auto& e : s.events) e.t /= scale;
    s.t_end /= scale;
  }
  out.time_scale = ds.time_scale * scale;
  return out;
}

Dataset preprocess(const Dataset& raw, std::optional<double> scale) {
  Dataset clean;
  clean.num_marks = raw.num_marks;
  clean.time_scale = raw.time_scale;
  clean.scale_rule = raw.scale_rule;
  for (const auto& s : raw.sequences) {
    Sequence sorted = s;
    std::stable_sort(sorted.events.begin(), sorted.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
    Sequence d = deduplicate(sorted);
    if (d.empty()) continue;
    d.t_end = std::max(d.t_end, d.last_time());
    clean.sequences.push_back(std::move(d));
  }
  if (clean.sequences.empty()) throw DataError("no sequences");
  const double s = scale ? *scale : resolve_time_scale(clean);
  return apply_scale(clean, s);
}

Split split_dataset(const Dataset& ds, double train_fraction, double valid_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || valid_fraction < 0.0 || train_fraction + valid_fraction > 1.0) {
    throw DataError("split fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::size_t> order(ds.sequences.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * n));
  const auto n_valid = static_cast<std::size_t>(std::floor(valid_fraction * n));
  Split out;
  for (Dataset* d : {&out.train, &out.valid, &out.test}) {
    d->num_marks = ds.num_marks;
    d->time_scale = ds.time_scale;
    d->scale_rule = ds.scale_rule;
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    Dataset& dst = i < n_train ? out.train : (i < n_train + n_valid ? out.valid : out.test);
    dst.sequences.push_back(ds.sequences[order[i]]);
  }
  return out;
}

}  // namespace decode

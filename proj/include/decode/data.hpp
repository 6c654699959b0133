#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace decode {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Event {
  double t{0.0};
  int k{0};

  friend bool operator==(const Event&, const Event&) = default;
};

struct Sequence {
  std::vector<Event> events;
  double t_end{0.0};

  [[nodiscard]] std::size_t size() const { return events.size(); }
  [[nodiscard]] bool empty() const { return events.empty(); }
  [[nodiscard]] double last_time() const { return events.empty() ? 0.0 : events.back().t; }
  [[nodiscard]] bool strictly_increasing() const;
};

struct Dataset {
  std::vector<Sequence> sequences;
  int num_marks{0};
  // Divisor already applied to every raw time; 1 for raw data.
  double time_scale{1.0};
  // Population (divide-by-n) standard deviation of gaps is the scaling rule.
  std::string scale_rule{"population_std"};

  [[nodiscard]] std::size_t num_events() const;
};

struct LoadReport {
  std::size_t non_monotone_sequences{0};
  std::size_t tied_events{0};
  std::vector<std::string> warnings;
};

struct DatasetHeader {
  int num_marks{0};
  double time_scale{1.0};
  std::string scale_rule{"population_std"};
};

// One sequence per line: {"seq": [{"t": 0.5, "k": 1}, ...], "t_end": 3.0}.
// When num_marks is absent it is inferred as max mark + 1.
[[nodiscard]] Dataset load_jsonl(const std::filesystem::path& path,
                                 std::optional<int> num_marks = std::nullopt,
                                 LoadReport* report = nullptr);
[[nodiscard]] Dataset parse_jsonl(const std::string& text, std::optional<int> num_marks = std::nullopt,
                                  LoadReport* report = nullptr);
void save_jsonl(const Dataset& ds, const std::filesystem::path& path);

[[nodiscard]] DatasetHeader load_header(const std::filesystem::path& path);
void save_header(const Dataset& ds, const std::filesystem::path& path);

// Tie-breaking keeps the earlier-listed event. Input times must be non-decreasing.
[[nodiscard]] Sequence deduplicate(const Sequence& seq);

// Population standard deviation of all pooled inter-event gaps.
// Throws DataError when no gap exists or the gaps have zero variance.
[[nodiscard]] double compute_time_scale(const Dataset& train);

// compute_time_scale with the zero-variance fallback: mean gap, then 1.
[[nodiscard]] double resolve_time_scale(const Dataset& train);

[[nodiscard]] Dataset apply_scale(const Dataset& ds, double scale);

// Stable-sorts each sequence by time, deduplicates, drops empty sequences and
// divides by `scale` (resolved from the data itself when absent).
[[nodiscard]] Dataset preprocess(const Dataset& raw, std::optional<double> scale = std::nullopt);

struct Split {
  Dataset train;
  Dataset valid;
  Dataset test;
};

// Seeded permutation of sequences, then contiguous train/valid/test blocks.
[[nodiscard]] Split split_dataset(const Dataset& ds, double train_fraction, double valid_fraction,
                                  std::uint64_t seed);

[[nodiscard]] std::vector<double> pooled_gaps(const Dataset& ds);

}  // namespace decode

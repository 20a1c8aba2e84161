#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace suq {

class ResultParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One JSONL line: {run_id, metric, split, value, step, wall_clock_ms}. A
// metric that is undefined for its input is stored with a null value.
struct ResultRow {
  std::string run_id;
  std::string metric;
  std::string split;
  std::optional<double> value;
  std::int64_t step = 0;
  std::int64_t wall_clock_ms = 0;

  // Equality ignoring wall_clock_ms; values compare bitwise.
  bool same_result(const ResultRow& other) const;
};

std::string to_json_line(const ResultRow& row);
ResultRow parse_json_line(const std::string& line);

// Parses a whole JSONL document; errors name the 1-based line.
std::vector<ResultRow> parse_jsonl(const std::string& text, const std::string& source = "<jsonl>");
std::vector<ResultRow> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<ResultRow>& rows);

bool same_results(const std::vector<ResultRow>& a, const std::vector<ResultRow>& b);

// Collects rows for one run, stamping each with the run id and the elapsed
// time since construction.
class ResultLog {
 public:
  explicit ResultLog(std::string run_id);

  void add(const std::string& metric, const std::string& split, std::optional<double> value,
           std::int64_t step = 0);
  const std::vector<ResultRow>& rows() const { return rows_; }
  const std::string& run_id() const { return run_id_; }
  // Appends the rows to `path` (created if missing).
  void append_to(const std::filesystem::path& path) const;
  // First row with this metric and split, if any.
  std::optional<double> find(const std::string& metric, const std::string& split) const;

 private:
  std::string run_id_;
  std::chrono::steady_clock::time_point start_;
  std::vector<ResultRow> rows_;
};

}  // namespace suq

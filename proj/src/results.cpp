#include "suq/results.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace suq {

namespace {

const char* kKeys[] = {"run_id", "metric", "split", "value", "step", "wall_clock_ms"};

}  // namespace

bool ResultRow::same_result(const ResultRow& o) const {
  if (run_id != o.run_id || metric != o.metric || split != o.split || step != o.step) return false;
  if (value.has_value() != o.value.has_value()) return false;
  if (!value) return true;
  return std::memcmp(&*value, &*o.value, sizeof(double)) == 0;
}

std::string to_json_line(const ResultRow& row) {
  nlohmann::ordered_json j;
  j["run_id"] = row.run_id;
  j["metric"] = row.metric;
  j["split"] = row.split;
  if (row.value && std::isfinite(*row.value)) {
    j["value"] = *row.value;
  } else {
    j["value"] = nullptr;
  }
  j["step"] = row.step;
  j["wall_clock_ms"] = row.wall_clock_ms;
  return j.dump();
}

ResultRow parse_json_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ResultParseError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ResultParseError("expected a JSON object");
  if (j.size() != std::size(kKeys)) throw ResultParseError("expected exactly the keys run_id, metric, split, value, step, wall_clock_ms");
  for (const char* k : kKeys)
    if (!j.contains(k)) throw ResultParseError(std::string("missing key '") + k + "'");
  ResultRow r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.metric = j.at("metric").get<std::string>();
    r.split = j.at("split").get<std::string>();
    const auto& v = j.at("value");
    if (!v.is_null()) {
      if (!v.is_number()) throw ResultParseError("value must be a number or null");
      r.value = v.get<double>();
    }
    if (!j.at("step").is_number_integer() || !j.at("wall_clock_ms").is_number_integer())
      throw ResultParseError("step and wall_clock_ms must be integers");
    r.step = j.at("step").get<std::int64_t>();
    r.wall_clock_ms = j.at("wall_clock_ms").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ResultParseError(std::string("bad field type: ") + e.what());
  }
  return r;
}

std::vector<ResultRow> parse_jsonl(const std::string& text, const std::string& source) {
  std::vector<ResultRow> rows;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(parse_json_line(line));
    } catch (const ResultParseError& e) {
      throw ResultParseError(source + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return rows;
}

std::vector<ResultRow> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_jsonl(ss.str(), path.string());
}

void write_jsonl(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) out << to_json_line(r) << '\n';
}

bool same_results(const std::vector<ResultRow>& a, const std::vector<ResultRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i].same_result(b[i])) return false;
  return true;
}

ResultLog::ResultLog(std::string run_id) : run_id_(std::move(run_id)), start_(std::chrono::steady_clock::now()) {}

void ResultLog::add(const std::string& metric, const std::string& split, std::optional<double> value,
                    std::int64_t step) {
  ResultRow r;
  r.run_id = run_id_;
  r.metric = metric;
  r.split = split;
  r.value = value;
  r.step = step;
  r.wall_clock_ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start_).count();
  rows_.push_back(std::move(r));
}

void ResultLog::append_to(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows_) out << to_json_line(r) << '\n';
}

std::optional<double> ResultLog::find(const std::string& metric, const std::string& split) const {
  for (const auto& r : rows_)
    if (r.metric == metric && r.split == split) return r.value;
  return std::nullopt;
}

}  // namespace suq

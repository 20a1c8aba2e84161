#include "suq/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace suq {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty list element in '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("malformed number '" + s + "'");
  return v;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

bool parse_bool(const std::string& s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field int_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) { a(c) = parse_number<int>(v); },
          [a](const RunConfig& c) { return std::to_string(a(const_cast<RunConfig&>(c))); }};
}
template <typename Access>
Field double_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) { a(c) = parse_number<double>(v); },
          [a](const RunConfig& c) { return format_double(a(const_cast<RunConfig&>(c))); }};
}
template <typename Access>
Field bool_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) { a(c) = parse_bool(v); },
          [a](const RunConfig& c) { return std::string(a(const_cast<RunConfig&>(c)) ? "true" : "false"); }};
}
template <typename Access>
Field string_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) { a(c) = v; },
          [a](const RunConfig& c) { return a(const_cast<RunConfig&>(c)); }};
}
template <typename Access>
Field int_list_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) {
            std::vector<int> out;
            for (const auto& item : split_list(v)) out.push_back(parse_number<int>(item));
            a(c) = out;
          },
          [a](const RunConfig& c) {
            std::string s;
            for (int x : a(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + std::to_string(x);
            return s;
          }};
}
template <typename Access>
Field double_list_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) {
            std::vector<double> out;
            for (const auto& item : split_list(v)) out.push_back(parse_number<double>(item));
            a(c) = out;
          },
          [a](const RunConfig& c) {
            std::string s;
            for (double x : a(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + format_double(x);
            return s;
          }};
}
template <typename Access>
Field string_list_field(Access a) {
  return {[a](RunConfig& c, const std::string& v) { a(c) = split_list(v); },
          [a](const RunConfig& c) {
            std::string s;
            for (const auto& x : a(const_cast<RunConfig&>(c))) s += (s.empty() ? "" : ",") + x;
            return s;
          }};
}

#define SUQ_FIELD(kind, key, member) \
  {key, kind([](RunConfig& c) -> auto& { return c.member; })}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = {
      {"experiment", string_field([](RunConfig& c) -> auto& { return c.experiment; })},
      {"seed",
       {[](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>(v); },
        [](const RunConfig& c) { return c.seed ? std::to_string(*c.seed) : std::string(); }}},
      SUQ_FIELD(string_field, "out_dir", out_dir),
      SUQ_FIELD(int_field, "generator.latent_dim", generator.latent_dim),
      SUQ_FIELD(int_field, "generator.obs_dim", generator.obs_dim),
      SUQ_FIELD(int_field, "generator.depth", generator.depth),
      SUQ_FIELD(double_field, "generator.alpha", generator.alpha),
      SUQ_FIELD(double_field, "generator.beta", generator.beta),
      SUQ_FIELD(double_field, "generator.kappa_min", generator.kappa_min),
      SUQ_FIELD(double_field, "generator.kappa_max", generator.kappa_max),
      SUQ_FIELD(int_field, "data.instances", data.instances),
      SUQ_FIELD(int_field, "data.views", data.views),
      SUQ_FIELD(int_field, "data.test_instances", data.test_instances),
      SUQ_FIELD(int_field, "data.test_views", data.test_views),
      SUQ_FIELD(int_field, "data.classes", data.classes),
      SUQ_FIELD(int_field, "data.instances_per_class", data.instances_per_class),
      SUQ_FIELD(double_field, "data.class_kappa", data.class_kappa),
      SUQ_FIELD(double_field, "data.class_max_cosine", data.class_max_cosine),
      SUQ_FIELD(int_list_field, "encoder.hidden", encoder.hidden),
      SUQ_FIELD(string_field, "encoder.kappa_source", encoder.kappa_source),
      SUQ_FIELD(string_field, "encoder.kappa_link", encoder.kappa_link),
      SUQ_FIELD(int_field, "encoder.kappa_hidden", encoder.kappa_hidden),
      SUQ_FIELD(double_field, "encoder.kappa_min", encoder.kappa_min),
      SUQ_FIELD(double_field, "encoder.kappa_scale", encoder.kappa_scale),
      SUQ_FIELD(double_field, "encoder.kappa_init", encoder.kappa_init),
      SUQ_FIELD(int_field, "encoder.loss_head_hidden", encoder.loss_head_hidden),
      SUQ_FIELD(string_field, "loss.name", loss.name),
      SUQ_FIELD(double_field, "loss.temperature", loss.temperature),
      SUQ_FIELD(double_field, "loss.kappa_pos", loss.kappa_pos),
      SUQ_FIELD(int_field, "loss.k", loss.k),
      SUQ_FIELD(bool_field, "loss.product_pairing", loss.product_pairing),
      SUQ_FIELD(int_field, "loss.samples", loss.samples),
      SUQ_FIELD(int_field, "loss.normalizer_samples", loss.normalizer_samples),
      SUQ_FIELD(double_field, "loss.lambda_init", loss.lambda_init),
      SUQ_FIELD(string_field, "loss.target_transform", loss.target_transform),
      SUQ_FIELD(bool_field, "loss.ranking", loss.ranking),
      SUQ_FIELD(bool_field, "loss.stop_gradient", loss.stop_gradient),
      SUQ_FIELD(int_field, "train.epochs", train.epochs),
      SUQ_FIELD(int_field, "train.batch_size", train.batch_size),
      SUQ_FIELD(double_field, "train.lr", train.lr),
      SUQ_FIELD(double_field, "train.beta1", train.beta1),
      SUQ_FIELD(double_field, "train.beta2", train.beta2),
      SUQ_FIELD(double_field, "train.eps", train.eps),
      SUQ_FIELD(double_field, "identify.dirac_kappa", identify.dirac_kappa),
      SUQ_FIELD(double_field, "identify.dirac_ratio", identify.dirac_ratio),
      SUQ_FIELD(bool_field, "identify.dirac_control", identify.dirac_control),
      SUQ_FIELD(int_field, "identify.negative_control_seeds", identify.negative_control_seeds),
      SUQ_FIELD(int_field, "identify.classes", identify.classes),
      SUQ_FIELD(double_field, "identify.class_max_cosine", identify.class_max_cosine),
      SUQ_FIELD(string_list_field, "url.losses", url.losses),
      SUQ_FIELD(int_field, "url.splits", url.splits),
      SUQ_FIELD(int_field, "url.classes_per_split", url.classes_per_split),
      SUQ_FIELD(int_field, "url.random_seeds", url.random_seeds),
      SUQ_FIELD(double_field, "url.split_max_cosine", url.split_max_cosine),
      SUQ_FIELD(double_list_field, "url.grid_lr", url.grid_lr),
      SUQ_FIELD(int_field, "dml.seeds", dml.seeds),
      SUQ_FIELD(bool_field, "dml.shuffle_control", dml.shuffle_control),
      SUQ_FIELD(int_field, "annotator.annotators", annotator.annotators),
      SUQ_FIELD(int_field, "annotator.classes", annotator.classes),
      SUQ_FIELD(double_list_field, "annotator.strengths", annotator.strengths),
      SUQ_FIELD(double_field, "annotator.drift", annotator.drift),
      SUQ_FIELD(int_field, "cache.pretrain_epochs", cache.pretrain_epochs),
      SUQ_FIELD(int_field, "cache.head_epochs", cache.head_epochs),
      SUQ_FIELD(double_field, "cache.jitter", cache.jitter),
  };
  return fields;
}

#undef SUQ_FIELD

const std::vector<std::string> kExperiments = {"gen-data",        "identify",        "url-bench",
                                               "dml-ablation",    "pretrain-cached", "annotator-check",
                                               "retrieve",        "plot"};
const std::vector<std::string> kLosses = {"mc_info_nce", "info_nce", "proxy_nca_pp", "nivmf_loss",
                                          "loss_prediction"};

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : registry()) keys.push_back(k);
  return keys;
}

std::uint64_t RunConfig::require_seed() const {
  if (!seed) throw ConfigError("missing mandatory key 'seed'");
  return *seed;
}

GeneratorSpec RunConfig::generator_spec(std::uint64_t s) const {
  GeneratorSpec g;
  g.latent_dim = generator.latent_dim;
  g.obs_dim = generator.obs_dim;
  g.depth = generator.depth;
  g.alpha = generator.alpha;
  g.beta = generator.beta;
  g.kappa_min_gt = generator.kappa_min;
  g.kappa_max_gt = generator.kappa_max;
  g.seed = s;
  return g;
}

EncoderSpec RunConfig::encoder_spec(int input_dim) const {
  EncoderSpec e;
  e.input_dim = input_dim;
  e.hidden = encoder.hidden;
  e.output_dim = generator.latent_dim;
  e.kappa_source = parse_kappa_source(encoder.kappa_source);
  e.kappa_link = parse_kappa_link(encoder.kappa_link);
  e.kappa_hidden = encoder.kappa_hidden;
  e.kappa_min = encoder.kappa_min;
  e.kappa_scale = encoder.kappa_scale;
  e.kappa_init = encoder.kappa_init;
  e.loss_head_hidden = encoder.loss_head_hidden;
  return e;
}

AdamConfig RunConfig::adam() const { return {train.lr, train.beta1, train.beta2, train.eps}; }

McInfoNceConfig RunConfig::mc_info_nce() const {
  McInfoNceConfig c;
  c.k = loss.k;
  c.kappa_pos = loss.kappa_pos;
  c.product_pairing = loss.product_pairing;
  return c;
}

LossPredictionConfig RunConfig::loss_prediction() const {
  LossPredictionConfig c;
  c.target_transform = parse_target_transform(loss.target_transform);
  c.ranking = loss.ranking;
  return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw ConfigError("unknown key '" + key + "'");
  try {
    it->second.set(*this, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, f] : registry()) out += k + " = " + f.get(*this) + "\n";
  return out;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!experiment.empty() && std::find(kExperiments.begin(), kExperiments.end(), experiment) == kExperiments.end())
    fail("unknown experiment '" + experiment + "'");
  if (std::find(kLosses.begin(), kLosses.end(), loss.name) == kLosses.end()) fail("unknown loss.name '" + loss.name + "'");
  for (const auto& l : url.losses)
    if (std::find(kLosses.begin(), kLosses.end(), l) == kLosses.end()) fail("unknown loss in url.losses '" + l + "'");
  if (generator.latent_dim < 2) fail("generator.latent_dim must be at least 2");
  if (generator.obs_dim < generator.latent_dim) fail("generator.obs_dim must be at least generator.latent_dim");
  if (!(generator.kappa_min > 0.0) || generator.kappa_max < generator.kappa_min)
    fail("generator kappa range must satisfy 0 < kappa_min <= kappa_max");
  if (data.instances < 1 || data.views < 2 || data.test_instances < 1 || data.test_views < 1)
    fail("data sizes must be positive (views >= 2 for contrastive pairs)");
  if (data.classes < 1 || data.instances_per_class < 1) fail("data.classes and data.instances_per_class must be positive");
  if (train.epochs < 0 || train.batch_size < 2) fail("train.epochs >= 0 and train.batch_size >= 2 required");
  if (!(train.lr > 0.0)) fail("train.lr must be positive");
  if (loss.k < 1) fail("loss.k must be at least 1");
  if (!(loss.temperature > 0.0)) fail("loss.temperature must be positive");
  if (!(loss.kappa_pos >= 0.0)) fail("loss.kappa_pos must be non-negative");
  try {
    parse_kappa_source(encoder.kappa_source);
    parse_kappa_link(encoder.kappa_link);
    parse_target_transform(loss.target_transform);
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  if (url.split_max_cosine > 0.99) fail("url.split_max_cosine above 0.99 lets class centers of different splits overlap");
  if (url.grid_lr.empty()) fail("url.grid_lr must not be empty");
  for (double lr : url.grid_lr)
    if (!(lr > 0.0)) fail("url.grid_lr entries must be positive");
  for (double s : annotator.strengths)
    if (s < 0.0 || s > 1.0) fail("annotator.strengths must lie in [0, 1]");
  for (std::size_t i = 1; i < annotator.strengths.size(); ++i)
    if (annotator.strengths[i] <= annotator.strengths[i - 1]) fail("annotator.strengths must be strictly increasing");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig c;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (seen.count(key)) {
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(seen[key]) + ")");
    }
    seen[key] = number;
    try {
      c.set(key, value);
    } catch (const std::exception& e) {
      throw ConfigError(where + e.what());
    }
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.canonical()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace suq

// suq: command-line front end for the experiment harness.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "suq/config.hpp"
#include "suq/experiments.hpp"
#include "suq/metrics.hpp"
#include "suq/parallel.hpp"
#include "suq/plots.hpp"
#include "suq/tensor_file.hpp"

namespace fs = std::filesystem;
using namespace suq;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
  std::vector<std::string> overrides;
};

RunConfig make_config(const Globals& g, const std::string& experiment) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.experiment.empty()) c.experiment = experiment;
  if (c.experiment != experiment)
    throw ConfigError("config is for experiment '" + c.experiment + "', not '" + experiment + "'");
  if (g.seed) c.seed = g.seed;
  if (!g.out.empty()) c.out_dir = g.out;
  c.validate();
  c.require_seed();
  return c;
}

std::string show(const std::optional<double>& v) {
  if (!v) return "null";
  std::ostringstream s;
  s << *v;
  return s.str();
}

void print_rows(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows)
    if (r.metric != "train_loss") std::printf("%-34s %-28s %8lld  %s\n", r.metric.c_str(), r.split.c_str(),
                                              static_cast<long long>(r.step), show(r.value).c_str());
}

Eigen::VectorXd parse_vector(const std::string& text) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    v.push_back(std::stod(item, &used));
    if (used != item.size()) throw std::invalid_argument("bad number '" + item + "' in --query");
  }
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic-embedding experiments on synthetic data with a known posterior"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (flat key = value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory (overrides out_dir)");
  app.add_option("--threads", g.threads, "Worker threads for evaluation (results do not depend on it)")
      ->check(CLI::PositiveNumber);
  app.add_option("--set", g.overrides, "Override one config key: key=value (repeatable)");

  auto* gen = app.add_subcommand("gen-data", "Write the identify train/test data as tensor files");
  auto* ident = app.add_subcommand("identify", "Train on data with a known posterior and score kappa recovery");
  auto* url = app.add_subcommand("url-bench", "Upstream training, zero-shot Recall@1 and R-AUROC on disjoint splits");
  auto* dml = app.add_subcommand("dml-ablation", "Recall@1 of proxy_nca_pp vs nivmf_loss over seeds");
  auto* cached = app.add_subcommand("pretrain-cached", "StopGrad checks and cached loss-head training");
  std::string stage = "all";
  cached->add_option("--stage", stage, "all, pretrain, cache or head");
  auto* annot = app.add_subcommand("annotator-check", "Simulated annotator entropy and intervention consistency");

  auto* retrieve = app.add_subcommand("retrieve", "Credible set of a vMF query over saved embeddings");
  std::string emb_path;
  std::string query_text;
  int query_index = -1;
  double kappa = 10.0, coverage = 0.95;
  int samples = 1024;
  retrieve->add_option("--embeddings", emb_path, "Tensor file of unit rows (default <out>/embeddings/means.suq)");
  auto* qi = retrieve->add_option("--query-index", query_index, "Use this database row as the query mean");
  auto* qv = retrieve->add_option("--query", query_text, "Query mean as comma-separated numbers");
  qi->excludes(qv);
  retrieve->add_option("--kappa", kappa, "Query concentration")->check(CLI::PositiveNumber);
  retrieve->add_option("--coverage", coverage, "Highest-density coverage")->check(CLI::Range(0.0, 1.0));
  retrieve->add_option("--samples", samples, "Query samples")->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("plot", "Render CSV and SVG charts from result files");
  std::vector<std::string> plot_files, plot_metrics;
  bool list_metrics = false;
  plot->add_option("--results", plot_files, "JSONL result files (default <out>/results.jsonl)");
  plot->add_option("--metric", plot_metrics, "Metric to chart (repeatable)");
  plot->add_flag("--list", list_metrics, "List the metrics present and exit");

  CLI11_PARSE(app, argc, argv);
  set_num_threads(g.threads);

  try {
    if (gen->parsed()) {
      const RunConfig c = make_config(g, "gen-data");
      const auto rows = run_gen_data(c);
      persist_rows(c, rows);
      print_rows(rows);
    } else if (ident->parsed()) {
      const RunConfig c = make_config(g, "identify");
      const auto rep = run_identify(c);
      persist_rows(c, rep.rows);
      print_rows(rep.rows);
    } else if (url->parsed()) {
      const RunConfig c = make_config(g, "url-bench");
      const auto rep = run_url_desk(c);
      persist_rows(c, rep.rows);
      std::cout << rep.table_csv;
    } else if (dml->parsed()) {
      const RunConfig c = make_config(g, "dml-ablation");
      const auto rep = run_dml_ablation(c);
      persist_rows(c, rep.rows);
      print_rows(rep.rows);
    } else if (cached->parsed()) {
      const RunConfig c = make_config(g, "pretrain-cached");
      const auto rep = run_pretrain_cached(c, parse_cache_stage(stage));
      persist_rows(c, rep.rows);
      print_rows(rep.rows);
    } else if (annot->parsed()) {
      const RunConfig c = make_config(g, "annotator-check");
      const auto rep = run_annotator_check(c);
      persist_rows(c, rep.rows);
      print_rows(rep.rows);
    } else if (retrieve->parsed()) {
      const RunConfig c = make_config(g, "retrieve");
      const fs::path path = emb_path.empty() ? fs::path(c.out_dir) / "embeddings" / "means.suq" : fs::path(emb_path);
      const Eigen::MatrixXd db = read_tensor(path).to_matrix();
      Eigen::VectorXd mean;
      if (query_index >= 0) {
        if (query_index >= db.rows()) throw std::out_of_range("--query-index beyond the database");
        mean = db.row(query_index).transpose();
      } else if (!query_text.empty()) {
        mean = parse_vector(query_text);
      } else {
        throw std::invalid_argument("retrieve needs --query-index or --query");
      }
      if (mean.size() != db.cols()) throw std::invalid_argument("query dimension does not match the database");
      const auto set = credible_set(VonMisesFisher(UnitVector::normalized(mean), kappa), db, coverage, samples,
                                    derive_seed(c.require_seed(), "retrieve"));
      nlohmann::json j;
      j["size"] = set.size();
      j["indices"] = set;
      std::cout << j.dump() << '\n';
    } else if (plot->parsed()) {
      std::vector<fs::path> files(plot_files.begin(), plot_files.end());
      const std::string out = g.out.empty() ? "out" : g.out;
      if (files.empty()) files.push_back(fs::path(out) / "results.jsonl");
      if (list_metrics) {
        std::vector<ResultRow> rows;
        for (const auto& f : files) {
          auto part = read_jsonl(f);
          rows.insert(rows.end(), part.begin(), part.end());
        }
        for (const auto& m : available_metrics(rows)) std::cout << m << '\n';
      } else {
        for (const auto& f : emit_plots(files, plot_metrics, fs::path(out) / "plots"))
          std::cout << f.csv.string() << '\n' << f.svg.string() << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

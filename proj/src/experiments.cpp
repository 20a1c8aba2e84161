#include "suq/experiments.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "suq/losses.hpp"
#include "suq/optim.hpp"
#include "suq/parallel.hpp"
#include "suq/rng.hpp"
#include "suq/tensor_file.hpp"

namespace suq {

namespace fs = std::filesystem;
using ad::Var;

namespace {

constexpr Eigen::Index kEmbedChunk = 256;

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::optional<double> try_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  try {
    return spearman(a, b);
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

std::optional<double> try_r_auroc(const std::vector<EvalRecord>& records) {
  try {
    return r_auroc(records);
  } catch (const UndefinedMetric&) {
    return std::nullopt;
  }
}

std::vector<double> reciprocal(const Eigen::VectorXd& v) {
  std::vector<double> out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = 1.0 / v(i);
  return out;
}

void check_finite_loss(double value, long step, ResultLog* log, const std::string& split) {
  if (std::isfinite(value)) return;
  if (log) log->add("diverged", split, static_cast<double>(step), step);
  throw TrainingDiverged("training diverged (non-finite loss) at step " + std::to_string(step), step);
}

int nearest_center(const std::vector<UnitVector>& centers, const Eigen::VectorXd& z) {
  int best = 0;
  double best_dot = -2.0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const double dot = centers[c].values().dot(z);
    if (dot > best_dot) {
      best_dot = dot;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<EvalRecord> make_records(const Eigen::MatrixXd& means, const std::vector<double>& u,
                                     const std::vector<int>& labels) {
  std::vector<EvalRecord> records(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    records[i].embedding = means.row(i).transpose();
    records[i].uncertainty = u[i];
    records[i].label = labels[i];
  }
  return records;
}

// ---- supervised (proxy) training ------------------------------------------------

struct ProxyModel {
  EncoderNet net;
  ad::Parameter proxies;      // C x d, normalized inside the losses
  ad::Parameter log_lambdas;  // C x d, nivMF proxy scales

  ProxyModel(const EncoderSpec& spec, int classes, double lambda_init, std::uint64_t seed)
      : net(spec, seed) {
    Rng rng = Rng(seed).split("proxies");
    proxies.name = "proxies";
    proxies.value.resize(classes, spec.output_dim);
    for (int c = 0; c < classes; ++c) proxies.value.row(c) = rng.uniform_on_sphere(spec.output_dim).transpose();
    log_lambdas.name = "proxy_log_lambdas";
    log_lambdas.value = Eigen::MatrixXd::Constant(classes, spec.output_dim, std::log(lambda_init));
  }

  std::vector<ad::Parameter*> trainable(bool nivmf) {
    std::vector<ad::Parameter*> p = net.parameter_ptrs();
    p.push_back(&proxies);
    if (nivmf) p.push_back(&log_lambdas);
    return p;
  }
};

struct SupervisedOptions {
  std::string loss = "proxy_nca_pp";  // or nivmf_loss
  bool head = false;
  bool stop_gradient = true;
  int epochs = 0;
  double lr = 1e-3;
};

Var task_loss_per_sample(ad::Tape& tape, const ProxyModel& m, const EncoderOutput& out,
                         const std::vector<int>& labels, const RunConfig& config,
                         const std::string& loss, std::uint64_t draw_seed) {
  Var proxies = ad::normalize_rows(tape.parameter(m.proxies));
  if (loss == "nivmf_loss") {
    NivmfLossConfig nc;
    nc.temperature = config.loss.temperature;
    nc.samples = config.loss.samples;
    nc.normalizer_samples = config.loss.normalizer_samples;
    nc.seed = draw_seed;
    return nivmf_loss_per_sample(out.means, out.kappas, labels, proxies,
                                 ad::exp(tape.parameter(m.log_lambdas)), nc);
  }
  return proxy_nca_pp_per_sample(out.means, labels, proxies, config.loss.temperature);
}

std::vector<int> gather(const std::vector<int>& v, const std::vector<int>& idx, std::size_t b, std::size_t n) {
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = v[idx[b + i]];
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& x, const std::vector<int>& idx, std::size_t b, std::size_t n) {
  Eigen::MatrixXd out(n, x.cols());
  for (std::size_t i = 0; i < n; ++i) out.row(i) = x.row(idx[b + i]);
  return out;
}

// Batches cover every index once per epoch; the last one may be short.
void train_supervised(const RunConfig& config, const SupervisedOptions& opt, ProxyModel& m,
                      const Eigen::MatrixXd& x, const std::vector<int>& labels, std::uint64_t seed,
                      ResultLog* log, const std::string& split) {
  const bool nivmf = opt.loss == "nivmf_loss";
  AdamConfig ac = config.adam();
  ac.lr = opt.lr;
  Adam adam(ac);
  auto params = m.trainable(nivmf);
  const Rng rng = Rng(seed).split("supervised");
  const LossPredictionConfig lp = config.loss_prediction();
  const std::size_t n = labels.size();
  const std::size_t bs = static_cast<std::size_t>(config.train.batch_size);
  long step = 0;
  for (int e = 0; e < opt.epochs; ++e) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng er = rng.split("epoch").stream(e);
    er.shuffle(order);
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < n; b += bs, ++step) {
      const std::size_t len = std::min(bs, n - b);
      ad::Tape tape;
      const EncoderOutput out = m.net.forward(tape, gather_rows(x, order, b, len));
      const std::vector<int> y = gather(labels, order, b, len);
      Var per = task_loss_per_sample(tape, m, out, y, config, opt.loss,
                                     rng.split("draws").stream(step).next_u64());
      Var loss = ad::mean(per);
      if (opt.head) {
        const Eigen::VectorXd targets = per.value().col(0);
        loss = ad::add(loss, loss_prediction_objective(targets, m.net.predict_loss(tape, out.trunk, opt.stop_gradient), lp));
      }
      check_finite_loss(loss.scalar(), step, log, split);
      total += loss.scalar();
      ++batches;
      adam.step(params, tape.backward(loss));
    }
    if (log && batches) log->add("train_loss", split, total / batches, e);
  }
}

double recall_of(const Eigen::MatrixXd& means, const std::vector<int>& labels) {
  return recall_at_1(make_records(means, std::vector<double>(labels.size(), 0.0), labels)).rate;
}

// ---- checkpoints --------------------------------------------------------------------

void write_manifest(const fs::path& dir, const std::string& hash, const std::vector<std::string>& extra) {
  std::ofstream out(dir / "manifest.txt", std::ios::binary | std::ios::trunc);
  out << "hash " << hash << '\n';
  for (const auto& line : extra) out << line << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.txt").string());
}

std::vector<std::string> read_manifest(const fs::path& dir, const std::string& hash, const std::string& what) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw std::runtime_error("missing " + what + ": " + (dir / "manifest.txt").string() + " not found");
  std::string line;
  std::getline(in, line);
  if (line != "hash " + hash)
    throw std::runtime_error(what + "/config hash mismatch in " + dir.string() + " (found '" + line +
                             "', expected 'hash " + hash + "')");
  std::vector<std::string> rest;
  while (std::getline(in, line)) rest.push_back(line);
  return rest;
}

void save_checkpoint(const fs::path& dir, const std::string& hash, const ProxyModel& m) {
  fs::create_directories(dir);
  std::vector<std::string> names;
  for (const auto& p : m.net.parameters()) {
    write_tensor(dir / (p.name + ".suq"), Tensor::from_matrix(p.value));
    names.push_back("param " + p.name);
  }
  write_tensor(dir / "proxies.suq", Tensor::from_matrix(m.proxies.value));
  names.push_back("param proxies");
  write_manifest(dir, hash, names);
}

// Loads every checkpointed parameter present in `m` (a loss head, if any,
// keeps its initialisation).
void load_checkpoint(const fs::path& dir, const std::string& hash, ProxyModel& m) {
  const auto lines = read_manifest(dir, hash, "checkpoint");
  for (const auto& line : lines) {
    if (line.rfind("param ", 0) != 0) continue;
    const std::string name = line.substr(6);
    const Eigen::MatrixXd v = read_tensor(dir / (name + ".suq")).to_matrix();
    ad::Parameter& p = name == "proxies" ? m.proxies : m.net.param(name);
    if (p.value.rows() != v.rows() || p.value.cols() != v.cols())
      throw std::runtime_error("checkpoint parameter " + name + " has the wrong shape");
    p.value = v;
  }
}

bool bitwise_equal(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

bool params_equal(const EncoderNet& a, const EncoderNet& b, const std::string& prefix) {
  bool any = false;
  for (const auto& p : a.parameters()) {
    if (p.name.compare(0, prefix.size(), prefix) != 0) continue;
    any = true;
    if (!bitwise_equal(p.value, b.param(p.name).value)) return false;
  }
  return any;
}

// Views re-drawn around every instance center for epoch `epoch`.
Eigen::MatrixXd rejittered_views(const GeneratorSpec& spec, const Generator& g, const Dataset& data,
                                 double jitter, std::uint64_t seed) {
  const std::size_t n = data.observations.size();
  Eigen::MatrixXd x(n, g.obs_dim());
  const Rng base = Rng(seed).split("rejitter");
  parallel_for(static_cast<long>(n), [&](long i) {
    const Observation& o = data.observations[i];
    const Instance& inst = data.instances[o.instance_id];
    Rng rng = base.stream(static_cast<std::uint64_t>(i));
    const RadialDraw r = draw_vmf_radial(spec.latent_dim, inst.kappa_true, rng);
    const Eigen::VectorXd xi = rng.normal_vector(spec.latent_dim);
    Eigen::VectorXd v = g(tangent_normal_point(inst.center.values(), r, xi));
    if (jitter > 0.0) v += jitter * rng.normal_vector(g.obs_dim());
    x.row(i) = v.transpose();
  });
  return x;
}

std::vector<int> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(seed).split("head_order").stream(epoch);
  rng.shuffle(order);
  return order;
}

}  // namespace

// ---- shared ----------------------------------------------------------------------------

std::uint64_t derive_seed(std::uint64_t seed, const std::string& label, std::uint64_t index) {
  return Rng(seed).split(label).stream(index).next_u64();
}

std::string run_hash(const RunConfig& config) {
  RunConfig c = config;
  c.out_dir.clear();
  return config_hash(c);
}

std::string run_id(const RunConfig& config) {
  return (config.experiment.empty() ? std::string("run") : config.experiment) + "-" + run_hash(config);
}

void persist_rows(const RunConfig& config, const std::vector<ResultRow>& rows) {
  if (config.out_dir.empty()) return;
  fs::create_directories(config.out_dir);
  std::ofstream out(fs::path(config.out_dir) / "results.jsonl", std::ios::binary | std::ios::app);
  if (!out) throw std::runtime_error("cannot write results.jsonl in " + config.out_dir);
  for (const auto& r : rows) out << to_json_line(r) << '\n';
}

Embedding embed(const EncoderNet& net, const Eigen::MatrixXd& inputs) {
  const Eigen::Index n = inputs.rows();
  Embedding e;
  e.means.resize(n, net.spec().output_dim);
  e.kappas.resize(n);
  if (net.spec().loss_head) e.predicted_loss.resize(n);
  const long chunks = static_cast<long>((n + kEmbedChunk - 1) / kEmbedChunk);
  parallel_for(chunks, [&](long c) {
    const Eigen::Index b = c * kEmbedChunk;
    const Eigen::Index len = std::min(kEmbedChunk, n - b);
    ad::Tape tape;
    const EncoderOutput out = net.forward(tape, inputs.middleRows(b, len));
    e.means.middleRows(b, len) = out.means.value();
    e.kappas.segment(b, len) = out.kappas.value().col(0);
    if (net.spec().loss_head) e.predicted_loss.segment(b, len) = net.predict_loss(tape, out.trunk).value().col(0);
  });
  return e;
}

void train_contrastive(const RunConfig& config, EncoderNet& net, const Dataset& data, std::uint64_t seed,
                       ResultLog* log, const std::string& split) {
  const bool mc = config.loss.name == "mc_info_nce";
  if (!mc && config.loss.name != "info_nce")
    throw ConfigError("contrastive training needs loss.name mc_info_nce or info_nce, got '" + config.loss.name + "'");
  const int views = data.views;
  if (views < 2) throw ConfigError("contrastive training needs at least 2 views per instance");
  const int n = static_cast<int>(data.instances.size());
  const Eigen::MatrixXd x = data.inputs();
  const McInfoNceConfig mcfg = config.mc_info_nce();
  Adam adam(config.adam());
  auto params = net.parameter_ptrs();
  const Rng rng = Rng(seed).split("contrastive");
  const std::size_t bs = static_cast<std::size_t>(config.train.batch_size);
  long step = 0;
  for (int e = 0; e < config.train.epochs; ++e) {
    Rng er = rng.split("epoch").stream(e);
    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n) * (views / 2));
    std::vector<int> v(views);
    for (int i = 0; i < n; ++i) {
      std::iota(v.begin(), v.end(), i * views);
      er.shuffle(v);
      for (int j = 0; j + 1 < views; j += 2) pairs.emplace_back(v[j], v[j + 1]);
    }
    er.shuffle(pairs);
    const std::size_t batch = std::min(bs, pairs.size());
    double total = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b + batch <= pairs.size(); b += batch, ++step) {
      ContrastiveBatch cb;
      cb.anchors.resize(batch, x.cols());
      cb.positives.resize(batch, x.cols());
      for (std::size_t i = 0; i < batch; ++i) {
        cb.anchors.row(i) = x.row(pairs[b + i].first);
        cb.positives.row(i) = x.row(pairs[b + i].second);
      }
      ad::Tape tape;
      Var loss;
      if (mc) {
        loss = mc_info_nce(tape, net, cb, mcfg, rng.split("draws").stream(step).next_u64());
      } else {
        const EncoderOutput a = net.forward(tape, cb.anchors);
        const EncoderOutput p = net.forward(tape, cb.positives);
        loss = ad::mean(info_nce_in_batch(a.means, p.means, config.loss.kappa_pos));
      }
      check_finite_loss(loss.scalar(), step, log, split);
      total += loss.scalar();
      ++batches;
      adam.step(params, tape.backward(loss));
    }
    if (log && batches) log->add("train_loss", split, total / batches, e);
  }
}

// ---- identify ---------------------------------------------------------------------------

IdentifyReport run_identify(const RunConfig& config) {
  if (config.loss.name != "mc_info_nce")
    throw ConfigError("identify requires loss.name = mc_info_nce, got '" + config.loss.name + "'");
  const std::uint64_t seed = config.require_seed();
  ResultLog log(run_id(config));
  IdentifyReport rep;

  const GeneratorSpec gs = config.generator_spec(seed);
  const Dataset train = sample_dataset(gs, config.data.instances, config.data.views, derive_seed(seed, "train_data"));
  const Dataset test =
      sample_dataset(gs, config.data.test_instances, config.data.test_views, derive_seed(seed, "test_data"));
  const EncoderSpec es = config.encoder_spec(gs.obs_dim);
  const Eigen::MatrixXd test_x = test.inputs();
  const Eigen::MatrixXd test_z = test.latents();
  const std::vector<double> kappa_true = to_std(test.kappa_true());

  EncoderNet net(es, derive_seed(seed, "init"));
  train_contrastive(config, net, train, derive_seed(seed, "train"), &log, "ambiguous");
  const Embedding emb = embed(net, test_x);
  const std::vector<double> khat = to_std(emb.kappas);

  std::vector<double> field_drawn(test.observations.size());
  for (std::size_t i = 0; i < field_drawn.size(); ++i)
    field_drawn[i] = kappa_field(gs, test.observations[i].drawn_latent);
  const auto sp = try_spearman(khat, kappa_true);
  const auto sp_drawn = try_spearman(khat, field_drawn);
  rep.spearman = sp.value_or(0.0);
  rep.spearman_drawn_field = sp_drawn.value_or(0.0);
  log.add("spearman_kappa", "test", sp);
  log.add("spearman_kappa_drawn_field", "test", sp_drawn);
  // Best attainable from x: any monotone function of the field at the drawn latent.
  rep.spearman_ceiling = try_spearman(field_drawn, kappa_true).value_or(0.0);
  log.add("spearman_kappa_ceiling", "test", rep.spearman_ceiling);

  const Alignment al = align_rotation(emb.means, test_z);
  const Eigen::MatrixXd aligned = emb.means * al.rotation;
  const Eigen::VectorXd cosines = (aligned.array() * test_z.array()).rowwise().sum();
  rep.direction_cosine = cosines.mean();
  log.add("direction_cosine", "test", rep.direction_cosine);
  log.add("direction_angle_deg", "test",
          cosines.unaryExpr([](double c) { return std::acos(std::clamp(c, -1.0, 1.0)); }).mean() * 180.0 / M_PI);
  rep.median_kappa = median(khat);
  log.add("median_kappa", "ambiguous", rep.median_kappa);

  if (config.identify.dirac_control) {
    GeneratorSpec dirac = gs;
    dirac.kappa_min_gt = dirac.kappa_max_gt = config.identify.dirac_kappa;
    const Dataset dtrain =
        sample_dataset(dirac, config.data.instances, config.data.views, derive_seed(seed, "train_data"));
    const Dataset dtest =
        sample_dataset(dirac, config.data.test_instances, config.data.test_views, derive_seed(seed, "test_data"));
    EncoderNet dnet(es, derive_seed(seed, "init"));
    train_contrastive(config, dnet, dtrain, derive_seed(seed, "train"), &log, "dirac");
    rep.dirac_median_kappa = median(to_std(embed(dnet, dtest.inputs()).kappas));
    rep.dirac_ratio = *rep.dirac_median_kappa / rep.median_kappa;
    log.add("median_kappa", "dirac", rep.dirac_median_kappa);
    log.add("dirac_ratio", "test", rep.dirac_ratio);
    log.add("dirac_ratio_pass", "test", *rep.dirac_ratio >= config.identify.dirac_ratio ? 1.0 : 0.0);
  }

  double sum = 0.0;
  int defined = 0;
  for (int s = 0; s < config.identify.negative_control_seeds; ++s) {
    const EncoderNet untrained(es, derive_seed(seed, "negative_control", s));
    const auto v = try_spearman(to_std(embed(untrained, test_x).kappas), kappa_true);
    rep.negative_control.push_back(v);
    log.add("spearman_kappa", "untrained", v, s);
    if (v) {
      sum += *v;
      ++defined;
    }
  }
  if (defined) {
    rep.negative_control_mean = sum / defined;
    log.add("spearman_kappa_mean", "untrained", rep.negative_control_mean);
  }

  // Selective prediction: class of the instance center vs class of the
  // aligned predicted mean.
  const auto centers = sample_class_centers(gs.latent_dim, config.identify.classes, config.identify.class_max_cosine,
                                            derive_seed(seed, "classes"));
  const std::size_t n = test.observations.size();
  std::vector<bool> correct(n);
  std::vector<double> oracle_u(n);
  int errors = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = nearest_center(centers, test.instances[test.observations[i].instance_id].center.values());
    correct[i] = nearest_center(centers, aligned.row(i).transpose()) == label;
    oracle_u[i] = correct[i] ? 0.0 : 1.0;
    errors += correct[i] ? 0 : 1;
  }
  rep.error_rate = static_cast<double>(errors) / static_cast<double>(n);
  log.add("error_rate", "test", rep.error_rate);
  std::vector<double> fractions;
  for (int k = 0; k < 10; ++k) fractions.push_back(k / 10.0);
  fractions.push_back(rep.error_rate);
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());
  rep.selective_model = selective_prediction_curve(reciprocal(emb.kappas), correct, fractions);
  rep.selective_oracle = selective_prediction_curve(oracle_u, correct, fractions);
  for (std::size_t k = 0; k < rep.selective_model.x.size(); ++k)
    log.add("selective_accuracy", "model", rep.selective_model.y[k], std::llround(rep.selective_model.x[k] * 1000));
  for (std::size_t k = 0; k < rep.selective_oracle.x.size(); ++k)
    log.add("selective_accuracy", "oracle", rep.selective_oracle.y[k], std::llround(rep.selective_oracle.x[k] * 1000));

  // Credible sets around the first 100 predicted means.
  const int queries = static_cast<int>(std::min<std::size_t>(100, n));
  rep.credible_kappas = {100.0, 10.0, 1.0};
  for (std::size_t q = 0; q <= rep.credible_kappas.size(); ++q) {
    const double kq = q < rep.credible_kappas.size() ? rep.credible_kappas[q] : 1e6;
    std::vector<double> sizes(queries);
    parallel_for(queries, [&](long i) {
      const VonMisesFisher query(UnitVector::normalized(emb.means.row(i).transpose()), kq);
      sizes[i] = static_cast<double>(
          credible_set(query, emb.means, 0.95, 1024, derive_seed(seed, "credible", q * 100000 + i)).size());
    });
    if (q < rep.credible_kappas.size()) {
      const double mean = std::accumulate(sizes.begin(), sizes.end(), 0.0) / queries;
      rep.credible_mean_size.push_back(mean);
      log.add("credible_set_mean_size", "kappa=" + fmt(kq), mean);
    } else {
      const auto singletons = std::count(sizes.begin(), sizes.end(), 1.0);
      rep.dirac_query_singletons = static_cast<double>(singletons) / queries;
      log.add("credible_set_singleton_fraction", "kappa=" + fmt(kq), rep.dirac_query_singletons);
    }
  }

  if (!config.out_dir.empty()) {
    const fs::path dir = fs::path(config.out_dir) / "embeddings";
    fs::create_directories(dir);
    write_tensor(dir / "means.suq", Tensor::from_matrix(emb.means));
    write_tensor(dir / "kappas.suq", Tensor::from_matrix(emb.kappas));
    write_tensor(dir / "latents.suq", Tensor::from_matrix(test_z));
    write_tensor(dir / "kappa_true.suq", Tensor::from_matrix(test.kappa_true()));
  }
  rep.rows = log.rows();
  return rep;
}

// ---- url-bench -------------------------------------------------------------------------------

namespace {

struct UrlModel {
  std::optional<EncoderNet> contrastive;
  std::optional<ProxyModel> proxy;

  Eigen::MatrixXd means;
  std::vector<double> uncertainty;

  void evaluate(const Eigen::MatrixXd& x) {
    const Embedding e = embed(contrastive ? *contrastive : proxy->net, x);
    means = e.means;
    uncertainty = proxy && proxy->net.spec().loss_head ? to_std(e.predicted_loss) : reciprocal(e.kappas);
  }
};

UrlModel train_url_model(const RunConfig& config, const std::string& loss, double lr, const Dataset& up,
                         int classes, std::uint64_t seed, ResultLog& log, const std::string& split) {
  RunConfig c = config;
  c.train.lr = lr;
  UrlModel m;
  const int obs_dim = static_cast<int>(up.observations.front().x.size());
  if (loss == "mc_info_nce") {
    c.loss.name = "mc_info_nce";
    m.contrastive.emplace(c.encoder_spec(obs_dim), derive_seed(seed, "init"));
    train_contrastive(c, *m.contrastive, up, derive_seed(seed, "train"), &log, split);
  } else {
    EncoderSpec es = c.encoder_spec(obs_dim);
    es.loss_head = loss == "loss_prediction";
    m.proxy.emplace(es, classes, c.loss.lambda_init, derive_seed(seed, "init"));
    SupervisedOptions opt;
    opt.loss = loss == "nivmf_loss" ? "nivmf_loss" : "proxy_nca_pp";
    opt.head = es.loss_head;
    opt.stop_gradient = c.loss.stop_gradient;
    opt.epochs = c.train.epochs;
    opt.lr = lr;
    train_supervised(c, opt, *m.proxy, up.inputs(), up.labels(), derive_seed(seed, "train"), &log, split);
  }
  return m;
}

}  // namespace

UrlReport run_url_desk(const RunConfig& config) {
  const std::uint64_t seed = config.require_seed();
  for (const auto& l : config.url.losses)
    if (l != "mc_info_nce" && l != "nivmf_loss" && l != "loss_prediction")
      throw ConfigError("url.losses entry '" + l + "' has no uncertainty output (use mc_info_nce, nivmf_loss or loss_prediction)");
  ResultLog log(run_id(config));
  UrlReport rep;
  const GeneratorSpec gs = config.generator_spec(seed);
  const int d = gs.latent_dim;

  const auto upstream = sample_class_centers(d, config.data.classes, config.data.class_max_cosine,
                                             derive_seed(seed, "url_upstream_centers"));
  std::vector<UnitVector> used = upstream;
  std::vector<std::vector<UnitVector>> splits;
  for (int s = 0; s < config.url.splits; ++s) {
    auto centers = sample_class_centers(d, config.url.classes_per_split, config.data.class_max_cosine,
                                        derive_seed(seed, "url_split_centers", s), used, config.url.split_max_cosine);
    for (const auto& c : centers)
      for (const auto& o : used)
        if (c.values().dot(o.values()) > 0.99)
          throw ConfigError("url: class centers of different splits overlap (cosine above 0.99)");
    used.insert(used.end(), centers.begin(), centers.end());
    splits.push_back(std::move(centers));
  }

  const Dataset up = sample_class_dataset(gs, upstream, config.data.instances_per_class, config.data.views,
                                          config.data.class_kappa, derive_seed(seed, "url_upstream_data"));
  const Dataset val = sample_class_dataset(gs, upstream, config.data.instances_per_class, config.data.test_views,
                                           config.data.class_kappa, derive_seed(seed, "url_validation_data"));
  std::vector<Dataset> down;
  for (int s = 0; s < config.url.splits; ++s)
    down.push_back(sample_class_dataset(gs, splits[s], config.data.instances_per_class, config.data.test_views,
                                        config.data.class_kappa, derive_seed(seed, "url_split_data", s)));

  std::ostringstream csv;
  csv << "loss,split,recall_at_1,r_auroc,r_auroc_oracle,r_auroc_random\n";
  auto cell = [](const std::optional<double>& v) { return v ? fmt(*v) : std::string(); };
  for (const auto& loss : config.url.losses) {
    // Fixed learning-rate grid scored on upstream validation data.
    std::optional<UrlModel> best;
    double best_score = -1.0;
    double best_lr = config.url.grid_lr.front();
    for (std::size_t g = 0; g < config.url.grid_lr.size(); ++g) {
      const double lr = config.url.grid_lr[g];
      UrlModel m = train_url_model(config, loss, lr, up, config.data.classes, derive_seed(seed, "url_" + loss),
                                   log, loss + "/lr=" + fmt(lr));
      m.evaluate(val.inputs());
      const auto score = try_r_auroc(make_records(m.means, m.uncertainty, val.labels()));
      log.add("grid_r_auroc", loss + "/lr=" + fmt(lr), score, static_cast<std::int64_t>(g));
      if (score.value_or(-0.5) > best_score || !best) {
        best_score = score.value_or(-0.5);
        best_lr = lr;
        best = std::move(m);
      }
    }
    log.add("grid_selected_lr", loss, best_lr);
    for (int s = 0; s < config.url.splits; ++s) {
      const std::string split = "split" + std::to_string(s);
      best->evaluate(down[s].inputs());
      const std::vector<int> labels = down[s].labels();
      auto records = make_records(best->means, best->uncertainty, labels);
      UrlSplitResult r;
      r.loss = loss;
      r.split = split;
      const RecallResult rec = recall_at_1(records);
      r.recall_at_1 = rec.rate;
      r.r_auroc = try_r_auroc(records);
      for (std::size_t i = 0; i < records.size(); ++i) records[i].uncertainty = rec.correct[i] ? 0.0 : 1.0;
      r.r_auroc_oracle = try_r_auroc(records);
      double sum = 0.0;
      int defined = 0;
      for (int k = 0; k < config.url.random_seeds; ++k) {
        Rng rng = Rng(derive_seed(seed, "url_random_uncertainty", s * 1000 + k));
        for (auto& rr : records) rr.uncertainty = rng.uniform();
        if (const auto v = try_r_auroc(records)) {
          sum += *v;
          ++defined;
        }
      }
      if (defined) r.r_auroc_random = sum / defined;
      log.add("recall_at_1", loss + "/" + split, r.recall_at_1);
      log.add("r_auroc", loss + "/" + split, r.r_auroc);
      log.add("r_auroc_oracle", loss + "/" + split, r.r_auroc_oracle);
      log.add("r_auroc_random", loss + "/" + split, r.r_auroc_random);
      csv << loss << ',' << split << ',' << fmt(r.recall_at_1) << ',' << cell(r.r_auroc) << ','
          << cell(r.r_auroc_oracle) << ',' << cell(r.r_auroc_random) << '\n';
      rep.splits.push_back(r);
    }
  }
  rep.table_csv = csv.str();
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    std::ofstream(fs::path(config.out_dir) / "url_table.csv", std::ios::binary | std::ios::trunc) << rep.table_csv;
  }
  rep.rows = log.rows();
  return rep;
}

// ---- dml-ablation --------------------------------------------------------------------------

DmlReport run_dml_ablation(const RunConfig& config) {
  const std::uint64_t seed = config.require_seed();
  ResultLog log(run_id(config));
  DmlReport rep;
  rep.losses = {"proxy_nca_pp", "nivmf_loss"};
  rep.recall.resize(rep.losses.size());
  const GeneratorSpec gs = config.generator_spec(seed);
  const int classes = config.data.classes;
  const auto centers =
      sample_class_centers(gs.latent_dim, classes, config.data.class_max_cosine, derive_seed(seed, "dml_centers"));
  const int per_class = config.data.instances_per_class;
  rep.chance = 1.0 / classes;
  const double n_eval = static_cast<double>(classes) * per_class;
  rep.chance_margin = 3.0 * std::sqrt(rep.chance * (1.0 - rep.chance) / n_eval);

  std::ostringstream csv;
  csv << "loss,seed,recall_at_1\n";
  auto run_one = [&](const std::string& loss, int s, bool shuffle) {
    const std::uint64_t rs = derive_seed(seed, "dml_seed", s);
    const Dataset train = sample_class_dataset(gs, centers, per_class, 1, config.data.class_kappa,
                                               derive_seed(rs, "train_data"));
    const Dataset test = sample_class_dataset(gs, centers, per_class, 1, config.data.class_kappa,
                                              derive_seed(rs, "test_data"));
    std::vector<int> train_labels = train.labels();
    std::vector<int> test_labels = test.labels();
    if (shuffle) {
      Rng rng = Rng(rs).split("shuffle");
      rng.shuffle(train_labels);
      rng.shuffle(test_labels);
    }
    ProxyModel m(config.encoder_spec(gs.obs_dim), classes, config.loss.lambda_init, derive_seed(rs, "init"));
    SupervisedOptions opt;
    opt.loss = loss;
    opt.epochs = config.train.epochs;
    opt.lr = config.train.lr;
    const std::string split = shuffle ? loss + "/shuffled" : loss;
    train_supervised(config, opt, m, train.inputs(), train_labels, derive_seed(rs, "train"), &log, split);
    const double r = recall_of(embed(m.net, test.inputs()).means, test_labels);
    log.add("recall_at_1", split, r, s);
    csv << split << ',' << s << ',' << fmt(r) << '\n';
    return r;
  };
  for (int s = 0; s < config.dml.seeds; ++s)
    for (std::size_t l = 0; l < rep.losses.size(); ++l) rep.recall[l].push_back(run_one(rep.losses[l], s, false));
  if (config.dml.shuffle_control)
    for (int s = 0; s < config.dml.seeds; ++s) rep.shuffled_recall.push_back(run_one("proxy_nca_pp", s, true));
  for (std::size_t l = 0; l < rep.losses.size(); ++l) {
    const auto& v = rep.recall[l];
    if (v.empty()) continue;
    const double lo = *std::min_element(v.begin(), v.end());
    const double hi = *std::max_element(v.begin(), v.end());
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    log.add("recall_at_1_mean", rep.losses[l], mean);
    log.add("recall_at_1_min", rep.losses[l], lo);
    log.add("recall_at_1_max", rep.losses[l], hi);
    log.add("above_chance", rep.losses[l], lo > rep.chance + rep.chance_margin ? 1.0 : 0.0);
  }
  log.add("chance", "test", rep.chance);
  rep.table_csv = csv.str();
  if (!config.out_dir.empty()) {
    fs::create_directories(config.out_dir);
    std::ofstream(fs::path(config.out_dir) / "dml_recall.csv", std::ios::binary | std::ios::trunc) << rep.table_csv;
  }
  rep.rows = log.rows();
  return rep;
}

// ---- pretrain-cached -----------------------------------------------------------------------

CacheStage parse_cache_stage(const std::string& name) {
  if (name == "all") return CacheStage::All;
  if (name == "pretrain") return CacheStage::Pretrain;
  if (name == "cache") return CacheStage::Cache;
  if (name == "head") return CacheStage::Head;
  throw std::invalid_argument("unknown stage '" + name + "' (expected all, pretrain, cache or head)");
}

PretrainCachedReport run_pretrain_cached(const RunConfig& config, CacheStage stage) {
  const std::uint64_t seed = config.require_seed();
  if (config.out_dir.empty()) throw ConfigError("pretrain-cached needs an output directory");
  ResultLog log(run_id(config));
  PretrainCachedReport rep;
  const std::string hash = run_hash(config);
  const fs::path root(config.out_dir);
  const fs::path ckpt = root / "checkpoint";
  const fs::path cache = root / "cache";

  const GeneratorSpec gs = config.generator_spec(seed);
  const Generator g = make_generator(gs);
  const int classes = config.data.classes;
  const auto centers =
      sample_class_centers(gs.latent_dim, classes, config.data.class_max_cosine, derive_seed(seed, "cache_centers"));
  const Dataset train = sample_class_dataset(gs, centers, config.data.instances_per_class, config.data.views,
                                             config.data.class_kappa, derive_seed(seed, "cache_train_data"));
  const std::vector<int> labels = train.labels();
  EncoderSpec plain = config.encoder_spec(gs.obs_dim);
  EncoderSpec with_head = plain;
  with_head.loss_head = true;
  const std::uint64_t init = derive_seed(seed, "init");

  if (stage == CacheStage::All || stage == CacheStage::Pretrain) {
    const Dataset test = sample_class_dataset(gs, centers, config.data.instances_per_class, config.data.test_views,
                                              config.data.class_kappa, derive_seed(seed, "cache_test_data"));
    auto pretrain = [&](const EncoderSpec& spec, bool head, bool stop, const std::string& split) {
      ProxyModel m(spec, classes, config.loss.lambda_init, init);
      SupervisedOptions opt;
      opt.head = head;
      opt.stop_gradient = stop;
      opt.epochs = config.cache.pretrain_epochs;
      opt.lr = config.train.lr;
      train_supervised(config, opt, m, train.inputs(), labels, derive_seed(seed, "pretrain"), &log, split);
      return m;
    };
    ProxyModel base = pretrain(plain, false, true, "no_head");
    ProxyModel stopped = pretrain(with_head, true, true, "stopgrad_head");
    ProxyModel open = pretrain(with_head, true, false, "no_stopgrad");
    rep.trunk_equal_with_stopgrad_head = params_equal(base.net, stopped.net, "trunk.") &&
                                         params_equal(base.net, stopped.net, "mean.") &&
                                         bitwise_equal(base.proxies.value, stopped.proxies.value);
    rep.trunk_differs_without_stopgrad = !params_equal(base.net, open.net, "trunk.");
    const Eigen::MatrixXd test_x = test.inputs();
    rep.recall_no_head = recall_of(embed(base.net, test_x).means, test.labels());
    rep.recall_stopgrad_head = recall_of(embed(stopped.net, test_x).means, test.labels());
    rep.recall_no_stopgrad = recall_of(embed(open.net, test_x).means, test.labels());
    log.add("trunk_bitwise_equal", "stopgrad_head", rep.trunk_equal_with_stopgrad_head ? 1.0 : 0.0);
    log.add("trunk_differs", "no_stopgrad", rep.trunk_differs_without_stopgrad ? 1.0 : 0.0);
    log.add("recall_at_1", "no_head", rep.recall_no_head);
    log.add("recall_at_1", "stopgrad_head", rep.recall_stopgrad_head);
    log.add("recall_at_1", "no_stopgrad", rep.recall_no_stopgrad);
    save_checkpoint(ckpt, hash, base);
  }

  const std::size_t n = labels.size();
  const std::size_t bs = static_cast<std::size_t>(config.train.batch_size);
  const std::uint64_t epoch_seed = derive_seed(seed, "head_epochs");

  if (stage == CacheStage::All || stage == CacheStage::Cache) {
    ProxyModel m(plain, classes, config.loss.lambda_init, init);
    load_checkpoint(ckpt, hash, m);
    fs::create_directories(cache);
    for (int e = 0; e < config.cache.head_epochs; ++e) {
      const Eigen::MatrixXd x = rejittered_views(gs, g, train, config.cache.jitter, derive_seed(epoch_seed, "views", e));
      const std::vector<int> order = epoch_order(n, epoch_seed, e);
      Eigen::MatrixXd features(n, plain.hidden.empty() ? gs.obs_dim : plain.hidden.back());
      Eigen::MatrixXd targets(n, 1);
      for (std::size_t b = 0; b < n; b += bs) {
        const std::size_t len = std::min(bs, n - b);
        ad::Tape tape;
        const EncoderOutput out = m.net.forward(tape, gather_rows(x, order, b, len));
        const Var per = task_loss_per_sample(tape, m, out, gather(labels, order, b, len), config, "proxy_nca_pp", 0);
        features.middleRows(b, len) = out.trunk.value();
        targets.middleRows(b, len) = per.value();
      }
      write_tensor(cache / ("epoch_" + std::to_string(e) + "_features.suq"), Tensor::from_matrix(features));
      write_tensor(cache / ("epoch_" + std::to_string(e) + "_targets.suq"), Tensor::from_matrix(targets));
    }
    write_manifest(cache, hash, {"epochs " + std::to_string(config.cache.head_epochs)});
    log.add("cached_epochs", "cache", config.cache.head_epochs);
  }

  if (stage == CacheStage::All || stage == CacheStage::Head) {
    const LossPredictionConfig lp = config.loss_prediction();
    AdamConfig ac = config.adam();
    read_manifest(cache, hash, "cache");

    // Stage 2: the head alone, from disk.
    EncoderNet cached(with_head, init);
    {
      Adam adam(ac);
      auto head = cached.parameter_ptrs("loss.");
      for (int e = 0; e < config.cache.head_epochs; ++e) {
        const Eigen::MatrixXd f = read_tensor(cache / ("epoch_" + std::to_string(e) + "_features.suq")).to_matrix();
        const Eigen::MatrixXd t = read_tensor(cache / ("epoch_" + std::to_string(e) + "_targets.suq")).to_matrix();
        if (static_cast<std::size_t>(f.rows()) != n || static_cast<std::size_t>(t.rows()) != n)
          throw std::runtime_error("cache epoch " + std::to_string(e) + " has the wrong row count");
        double total = 0.0;
        int batches = 0;
        for (std::size_t b = 0; b < n; b += bs) {
          const std::size_t len = std::min(bs, n - b);
          ad::Tape tape;
          const Var u = cached.predict_loss(tape, tape.constant(f.middleRows(b, len)), true);
          const Var obj = loss_prediction_objective(t.middleRows(b, len).col(0), u, lp);
          total += obj.scalar();
          ++batches;
          adam.step(head, tape.backward(obj));
        }
        log.add("head_objective", "cached", total / batches, e);
      }
    }

    // Monolithic reference: trunk forward, StopGrad, head, every step.
    ProxyModel mono(with_head, classes, config.loss.lambda_init, init);
    load_checkpoint(ckpt, hash, mono);
    {
      Adam adam(ac);
      auto head = mono.net.parameter_ptrs("loss.");
      for (int e = 0; e < config.cache.head_epochs; ++e) {
        const Eigen::MatrixXd x = rejittered_views(gs, g, train, config.cache.jitter, derive_seed(epoch_seed, "views", e));
        const std::vector<int> order = epoch_order(n, epoch_seed, e);
        double total = 0.0;
        int batches = 0;
        for (std::size_t b = 0; b < n; b += bs) {
          const std::size_t len = std::min(bs, n - b);
          ad::Tape tape;
          const EncoderOutput out = mono.net.forward(tape, gather_rows(x, order, b, len));
          const Var per = task_loss_per_sample(tape, mono, out, gather(labels, order, b, len), config, "proxy_nca_pp", 0);
          const Var u = mono.net.predict_loss(tape, out.trunk, true);
          const Var obj = loss_prediction_objective(per.value().col(0), u, lp);
          total += obj.scalar();
          ++batches;
          adam.step(head, tape.backward(obj));
        }
        log.add("head_objective", "monolithic", total / batches, e);
      }
    }
    rep.head_equal_cached_vs_monolithic = params_equal(cached, mono.net, "loss.");
    log.add("head_bitwise_equal", "cached_vs_monolithic", rep.head_equal_cached_vs_monolithic ? 1.0 : 0.0);
    const fs::path head_dir = root / "head";
    fs::create_directories(head_dir);
    for (const auto* p : cached.parameter_ptrs("loss."))
      write_tensor(head_dir / (p->name + ".suq"), Tensor::from_matrix(p->value));
  }
  rep.rows = log.rows();
  return rep;
}

// ---- annotator-check -------------------------------------------------------------------------

double annotator_entropy(const Eigen::VectorXd& latent, double kappa, const std::vector<UnitVector>& centers,
                         int annotators, std::uint64_t seed) {
  const SampleBatch draws = sample_vmf(VonMisesFisher(UnitVector::normalized(latent), kappa), annotators, seed);
  std::vector<int> votes(centers.size(), 0);
  for (int a = 0; a < annotators; ++a) ++votes[nearest_center(centers, draws.points.row(a).transpose())];
  double h = 0.0;
  for (int v : votes) {
    if (v == 0) continue;
    const double p = static_cast<double>(v) / annotators;
    h -= p * std::log(p);
  }
  return h;
}

AnnotatorReport run_annotator_check(const RunConfig& config) {
  if (config.loss.name != "mc_info_nce")
    throw ConfigError("annotator-check requires loss.name = mc_info_nce, got '" + config.loss.name + "'");
  const std::uint64_t seed = config.require_seed();
  ResultLog log(run_id(config));
  AnnotatorReport rep;
  const GeneratorSpec gs = config.generator_spec(seed);
  const Generator g = make_generator(gs);
  const Dataset train = sample_dataset(gs, config.data.instances, config.data.views, derive_seed(seed, "train_data"));
  const Dataset test =
      sample_dataset(gs, config.data.test_instances, config.data.test_views, derive_seed(seed, "test_data"));
  EncoderNet net(config.encoder_spec(gs.obs_dim), derive_seed(seed, "init"));
  train_contrastive(config, net, train, derive_seed(seed, "train"), &log, "train");
  const Embedding emb = embed(net, test.inputs());

  const auto centers = sample_class_centers(gs.latent_dim, config.annotator.classes, config.identify.class_max_cosine,
                                            derive_seed(seed, "annotator_classes"));
  const std::size_t n = test.observations.size();
  std::vector<double> entropy(n);
  parallel_for(static_cast<long>(n), [&](long i) {
    const Observation& o = test.observations[i];
    entropy[i] = annotator_entropy(o.drawn_latent.values(), o.kappa_true, centers, config.annotator.annotators,
                                   derive_seed(seed, "annotators", i));
  });
  const std::vector<double> u = reciprocal(emb.kappas);
  rep.spearman_model = try_spearman(u, entropy);
  rep.spearman_oracle = try_spearman(reciprocal(test.kappa_true()), entropy);
  rep.spearman_constant = try_spearman(std::vector<double>(n, 1.0), entropy);
  log.add("spearman_entropy", "model", rep.spearman_model);
  log.add("spearman_entropy", "oracle", rep.spearman_oracle);
  log.add("spearman_entropy", "constant", rep.spearman_constant);

  auto consistency = [&](double strength, double drift) {
    Eigen::MatrixXd x(n, gs.obs_dim);
    InterventionOptions io;
    io.drift = drift;
    parallel_for(static_cast<long>(n), [&](long i) {
      x.row(i) = intervene(gs, g, test.observations[i], strength, derive_seed(seed, "intervene", i), io).x.transpose();
    });
    return intervention_consistency(u, reciprocal(embed(net, x).kappas));
  };
  rep.strengths = config.annotator.strengths;
  for (std::size_t k = 0; k < rep.strengths.size(); ++k) {
    const double s = rep.strengths[k];
    rep.consistency.push_back(consistency(s, config.annotator.drift));
    rep.consistency_no_drift.push_back(consistency(s, 0.0));
    const auto step = std::llround(s * 1000);
    log.add("intervention_consistency", "drift=" + fmt(config.annotator.drift), rep.consistency.back(), step);
    log.add("intervention_consistency", "drift=0", rep.consistency_no_drift.back(), step);
  }
  rep.rows = log.rows();
  return rep;
}

// ---- gen-data ---------------------------------------------------------------------------------

std::vector<ResultRow> run_gen_data(const RunConfig& config) {
  const std::uint64_t seed = config.require_seed();
  if (config.out_dir.empty()) throw ConfigError("gen-data needs an output directory");
  ResultLog log(run_id(config));
  const GeneratorSpec gs = config.generator_spec(seed);
  const Dataset sets[] = {
      sample_dataset(gs, config.data.instances, config.data.views, derive_seed(seed, "train_data")),
      sample_dataset(gs, config.data.test_instances, config.data.test_views, derive_seed(seed, "test_data"))};
  const char* names[] = {"train", "test"};
  for (int k = 0; k < 2; ++k) {
    const Dataset& d = sets[k];
    const fs::path dir = fs::path(config.out_dir) / names[k];
    fs::create_directories(dir);
    write_tensor(dir / "inputs.suq", Tensor::from_matrix(d.inputs()));
    write_tensor(dir / "latents.suq", Tensor::from_matrix(d.latents()));
    write_tensor(dir / "kappa_true.suq", Tensor::from_matrix(d.kappa_true()));
    const auto ids = d.instance_ids();
    write_tensor(dir / "instance_ids.suq", Tensor::from_vector(std::vector<double>(ids.begin(), ids.end())));
    Eigen::MatrixXd centers(d.instances.size(), gs.latent_dim);
    for (std::size_t i = 0; i < d.instances.size(); ++i) centers.row(i) = d.instances[i].center.values().transpose();
    write_tensor(dir / "centers.suq", Tensor::from_matrix(centers));
    log.add("observations", names[k], static_cast<double>(d.observations.size()));
    log.add("mean_kappa_true", names[k], d.kappa_true().mean());
  }
  return log.rows();
}

}  // namespace suq

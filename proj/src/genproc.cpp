#include "suq/genproc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "suq/parallel.hpp"
#include "suq/rng.hpp"

namespace suq {

Generator make_generator(const GeneratorSpec& spec) {
  const int d = spec.latent_dim, D = spec.obs_dim;
  if (d < 2) throw std::invalid_argument("make_generator: latent_dim must be >= 2");
  if (D < d) throw std::invalid_argument("make_generator: obs_dim must be >= latent_dim");
  if (spec.depth < 0) throw std::invalid_argument("make_generator: depth must be >= 0");
  if (spec.alpha < 0.0 || !(spec.beta > 0.0)) {
    throw std::invalid_argument("make_generator: need alpha >= 0 and beta > 0");
  }
  const Rng rng = Rng(spec.seed).split("generator");
  Generator g;
  g.lift_ = random_rotation(D, rng.stream(0).key()).leftCols(d);
  for (int l = 0; l < spec.depth; ++l) {
    g.rotations_.push_back(random_rotation(D, rng.stream(l + 1).key()));
  }
  g.alpha_ = spec.alpha;
  g.beta_ = spec.beta;
  return g;
}

Eigen::VectorXd Generator::operator()(const Eigen::VectorXd& z) const {
  if (z.size() != lift_.cols()) throw std::invalid_argument("Generator: latent dimension mismatch");
  Eigen::VectorXd x = lift_ * z;
  for (const auto& r : rotations_) {
    if (alpha_ != 0.0) x = (x.array() + alpha_ * (beta_ * x.array()).tanh()).matrix();
    x = r * x;
  }
  return x;
}

Eigen::MatrixXd Generator::map_rows(const Eigen::MatrixXd& z) const {
  Eigen::MatrixXd out(z.rows(), obs_dim());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out.row(i) = (*this)(z.row(i).transpose()).transpose();
  }
  return out;
}

UnitVector field_direction(const GeneratorSpec& spec) {
  if (spec.field_direction) return UnitVector::normalized(*spec.field_direction);
  Rng rng = Rng(spec.seed).split("kappa_field");
  return UnitVector(rng.uniform_on_sphere(spec.latent_dim));
}

double kappa_field(const GeneratorSpec& spec, const Eigen::VectorXd& c) {
  if (!(spec.kappa_min_gt > 0.0) || spec.kappa_max_gt < spec.kappa_min_gt) {
    throw std::invalid_argument("kappa_field: need kappa_max_gt >= kappa_min_gt > 0");
  }
  const UnitVector w = field_direction(spec);
  if (c.size() != w.dim()) throw std::invalid_argument("kappa_field: dimension mismatch");
  const double t = 10.0 * w.values().dot(c);
  const double sig = t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
  return spec.kappa_min_gt + (spec.kappa_max_gt - spec.kappa_min_gt) * sig;
}

double kappa_field(const GeneratorSpec& spec, const UnitVector& c) {
  return kappa_field(spec, c.values());
}

Eigen::MatrixXd Dataset::inputs() const {
  if (observations.empty()) return {};
  Eigen::MatrixXd x(observations.size(), observations[0].x.size());
  for (std::size_t i = 0; i < observations.size(); ++i) x.row(i) = observations[i].x.transpose();
  return x;
}

Eigen::MatrixXd Dataset::latents() const {
  if (observations.empty()) return {};
  Eigen::MatrixXd z(observations.size(), observations[0].drawn_latent.dim());
  for (std::size_t i = 0; i < observations.size(); ++i) {
    z.row(i) = observations[i].drawn_latent.values().transpose();
  }
  return z;
}

Eigen::VectorXd Dataset::kappa_true() const {
  Eigen::VectorXd k(observations.size());
  for (std::size_t i = 0; i < observations.size(); ++i) k(i) = observations[i].kappa_true;
  return k;
}

std::vector<int> Dataset::instance_ids() const {
  std::vector<int> ids;
  for (const auto& o : observations) ids.push_back(o.instance_id);
  return ids;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> ids;
  for (const auto& o : observations) ids.push_back(o.label);
  return ids;
}

namespace {

void draw_views(const GeneratorSpec& spec, const Generator& g, Dataset& data, const Rng& base) {
  const int views = data.views;
  const long n = static_cast<long>(data.instances.size());
  data.observations.assign(n * views, Observation{Eigen::VectorXd(), 0,
                                                  UnitVector::basis(spec.latent_dim, 0), 0.0, -1});
  parallel_for(n, [&](long i) {
    const Instance& inst = data.instances[i];
    const VonMisesFisher law(inst.center, inst.kappa_true);
    const Rng inst_rng = base.stream(static_cast<std::uint64_t>(i));
    for (int v = 0; v < views; ++v) {
      Rng rng = inst_rng.stream(static_cast<std::uint64_t>(v));
      const RadialDraw radial = draw_vmf_radial(spec.latent_dim, inst.kappa_true, rng);
      const Eigen::VectorXd xi = rng.normal_vector(spec.latent_dim);
      Eigen::VectorXd z = tangent_normal_point(law.mu.values(), radial, xi);
      Observation& o = data.observations[i * views + v];
      o.x = g(z);
      o.instance_id = inst.id;
      o.drawn_latent = UnitVector(std::move(z));
      o.kappa_true = inst.kappa_true;
      o.label = inst.label;
    }
  });
}

}  // namespace

Dataset sample_dataset(const GeneratorSpec& spec, int n_instances, int views_per_instance,
                       std::uint64_t seed) {
  if (n_instances < 1 || views_per_instance < 1) {
    throw std::invalid_argument("sample_dataset: need n_instances >= 1 and views >= 1");
  }
  const Generator g = make_generator(spec);
  const Rng base = Rng(seed).split("dataset");
  Dataset data;
  data.views = views_per_instance;
  const Rng centers = base.split("centers");
  for (int i = 0; i < n_instances; ++i) {
    Rng rng = centers.stream(static_cast<std::uint64_t>(i));
    UnitVector c(rng.uniform_on_sphere(spec.latent_dim));
    const double k = kappa_field(spec, c);
    data.instances.push_back({i, std::move(c), k, -1});
  }
  draw_views(spec, g, data, base.split("views"));
  return data;
}

std::vector<UnitVector> sample_class_centers(int d, int count, double max_cosine,
                                             std::uint64_t seed,
                                             const std::vector<UnitVector>& avoid,
                                             std::optional<double> avoid_max_cosine) {
  const double avoid_cos = avoid_max_cosine.value_or(max_cosine);
  const Rng base = Rng(seed).split("class_centers");
  // Sequential placement can jam; restart with a fresh stream when it does.
  for (int restart = 0; restart < 200; ++restart) {
    Rng rng = base.stream(static_cast<std::uint64_t>(restart));
    std::vector<UnitVector> out;
    long misses = 0;
    while (static_cast<int>(out.size()) < count && misses < 20000) {
      UnitVector c(rng.uniform_on_sphere(d));
      bool ok = true;
      for (const auto& o : out) ok = ok && c.values().dot(o.values()) < max_cosine;
      for (const auto& o : avoid) ok = ok && c.values().dot(o.values()) < avoid_cos;
      if (ok) {
        out.push_back(std::move(c));
        misses = 0;
      } else {
        ++misses;
      }
    }
    if (static_cast<int>(out.size()) == count) return out;
  }
  throw std::runtime_error("sample_class_centers: cannot place " + std::to_string(count) +
                           " centers below cosine " + std::to_string(max_cosine));
}

Dataset sample_class_dataset(const GeneratorSpec& spec, const std::vector<UnitVector>& centers,
                             int instances_per_class, int views_per_instance, double class_kappa,
                             std::uint64_t seed) {
  if (centers.empty() || instances_per_class < 1 || views_per_instance < 1) {
    throw std::invalid_argument("sample_class_dataset: empty configuration");
  }
  const Generator g = make_generator(spec);
  const Rng base = Rng(seed).split("class_dataset");
  Dataset data;
  data.views = views_per_instance;
  int id = 0;
  for (std::size_t c = 0; c < centers.size(); ++c) {
    const VonMisesFisher law(centers[c], class_kappa);
    const Rng class_rng = base.split("centers").stream(c);
    for (int i = 0; i < instances_per_class; ++i, ++id) {
      Rng rng = class_rng.stream(static_cast<std::uint64_t>(i));
      const RadialDraw radial = draw_vmf_radial(spec.latent_dim, class_kappa, rng);
      const Eigen::VectorXd xi = rng.normal_vector(spec.latent_dim);
      UnitVector center(tangent_normal_point(law.mu.values(), radial, xi));
      const double k = kappa_field(spec, center);
      data.instances.push_back({id, std::move(center), k, static_cast<int>(c)});
    }
  }
  draw_views(spec, g, data, base.split("views"));
  return data;
}

Observation intervene(const GeneratorSpec& spec, const Generator& g, const Observation& obs,
                      double strength, std::uint64_t seed, const InterventionOptions& options) {
  if (!(strength >= 0.0 && strength <= 1.0)) {
    throw std::invalid_argument("intervene: strength must lie in [0, 1]");
  }
  if (strength == 0.0) return obs;
  const int d = obs.drawn_latent.dim();
  Eigen::VectorXd center = obs.drawn_latent.values();
  if (options.drift > 0.0) {
    const Eigen::VectorXd pole = -field_direction(spec).values();
    const double c = std::clamp(center.dot(pole), -1.0, 1.0);
    const double angle = std::acos(c);
    Eigen::VectorXd t = pole - c * center;
    const double tn = t.norm();
    if (tn > 1e-12) {
      const double step = std::min(1.0, options.drift * strength) * angle;
      center = std::cos(step) * center + std::sin(step) * (t / tn);
      center.normalize();
    }
  }
  const double kappa = obs.kappa_true * (1.0 - strength) + spec.kappa_min_gt * strength;
  Rng rng = Rng(seed).split("intervene");
  const RadialDraw radial = draw_vmf_radial(d, kappa, rng);
  const Eigen::VectorXd xi = rng.normal_vector(d);
  Observation out = obs;
  Eigen::VectorXd z = tangent_normal_point(center, radial, xi);
  out.x = g(z);
  out.drawn_latent = UnitVector(std::move(z));
  return out;
}

}  // namespace suq

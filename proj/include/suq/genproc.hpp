#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "suq/sphere.hpp"

namespace suq {

struct GeneratorSpec {
  int latent_dim = 3;
  int obs_dim = 10;
  std::uint64_t seed = 0;
  double kappa_min_gt = 1.0;
  double kappa_max_gt = 100.0;
  // Direction of the concentration field; drawn from the seed when unset.
  std::optional<Eigen::VectorXd> field_direction;
  int depth = 2;
  // Per-layer nonlinearity u + alpha * tanh(beta * u); alpha = 0 makes every
  // layer a rotation.
  double alpha = 1.0;
  double beta = 2.0;
};

// Lift to D dimensions by orthonormal columns, then per layer an elementwise
// strictly increasing map followed by a rotation. Distances never shrink, so
// the map is injective.
class Generator {
 public:
  Eigen::VectorXd operator()(const Eigen::VectorXd& z) const;
  Eigen::MatrixXd map_rows(const Eigen::MatrixXd& z) const;
  int latent_dim() const { return static_cast<int>(lift_.cols()); }
  int obs_dim() const { return static_cast<int>(lift_.rows()); }

 private:
  friend Generator make_generator(const GeneratorSpec& spec);
  Eigen::MatrixXd lift_;
  std::vector<Eigen::MatrixXd> rotations_;
  double alpha_ = 0.0;
  double beta_ = 1.0;
};

Generator make_generator(const GeneratorSpec& spec);

UnitVector field_direction(const GeneratorSpec& spec);

// κ(c) = κ_min + (κ_max - κ_min) · sigmoid(10 wᵀc).
double kappa_field(const GeneratorSpec& spec, const UnitVector& c);
double kappa_field(const GeneratorSpec& spec, const Eigen::VectorXd& c);

struct Instance {
  int id = 0;
  UnitVector center;
  double kappa_true = 0.0;
  int label = -1;
};

struct Observation {
  Eigen::VectorXd x;
  int instance_id = 0;
  UnitVector drawn_latent;
  double kappa_true = 0.0;
  int label = -1;
};

struct Dataset {
  std::vector<Instance> instances;
  // Instance-major: views of instance i occupy [i * views, (i + 1) * views).
  std::vector<Observation> observations;
  int views = 0;

  Eigen::MatrixXd inputs() const;
  Eigen::MatrixXd latents() const;
  Eigen::VectorXd kappa_true() const;
  std::vector<int> instance_ids() const;
  std::vector<int> labels() const;
};

// Centers uniform on the sphere; views drawn vMF(center, κ(center)) and
// mapped through the generator.
Dataset sample_dataset(const GeneratorSpec& spec, int n_instances, int views_per_instance,
                       std::uint64_t seed);

// `count` class centers whose pairwise cosines stay below max_cosine and
// whose cosine to every entry of `avoid` stays below avoid_max_cosine
// (max_cosine when unset).
std::vector<UnitVector> sample_class_centers(int d, int count, double max_cosine,
                                             std::uint64_t seed,
                                             const std::vector<UnitVector>& avoid = {},
                                             std::optional<double> avoid_max_cosine = std::nullopt);

// Class-structured variant: instance centers are drawn vMF(class center,
// class_kappa) and labelled by class.
Dataset sample_class_dataset(const GeneratorSpec& spec, const std::vector<UnitVector>& centers,
                             int instances_per_class, int views_per_instance, double class_kappa,
                             std::uint64_t seed);

struct InterventionOptions {
  // Before the re-draw the latent is moved along the great circle towards the
  // low-concentration pole -w by drift * strength of the angle between them.
  double drift = 0.0;
};

// Re-draws the latent around the (optionally drifted) latent with
// concentration κ_true (1 - s) + κ_min s and regenerates x. Strength 0 returns
// the observation unchanged.
Observation intervene(const GeneratorSpec& spec, const Generator& g, const Observation& obs,
                      double strength, std::uint64_t seed, const InterventionOptions& options = {});

}  // namespace suq

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "suq/encoder.hpp"
#include "suq/genproc.hpp"
#include "suq/losses.hpp"
#include "suq/optim.hpp"

namespace suq {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GeneratorSettings {
  int latent_dim = 3;
  int obs_dim = 10;
  int depth = 2;
  double alpha = 1.0;
  double beta = 2.0;
  double kappa_min = 1.0;
  double kappa_max = 100.0;
};

struct DataSettings {
  int instances = 500;
  int views = 32;
  int test_instances = 300;
  int test_views = 2;
  // Class-structured data (dml-ablation, url-bench, pretrain-cached).
  int classes = 8;
  int instances_per_class = 64;
  double class_kappa = 40.0;
  double class_max_cosine = 0.5;
};

struct EncoderSettings {
  std::vector<int> hidden = {64, 64};
  std::string kappa_source = "head";
  std::string kappa_link = "exp";
  int kappa_hidden = 32;
  double kappa_min = 1e-3;
  double kappa_scale = 1.0;
  double kappa_init = 1.0;
  int loss_head_hidden = 32;
};

struct LossSettings {
  std::string name = "mc_info_nce";
  double temperature = 0.1;
  double kappa_pos = 16.0;
  int k = 16;
  bool product_pairing = false;
  int samples = 32;
  int normalizer_samples = 1024;
  double lambda_init = 10.0;
  std::string target_transform = "none";
  bool ranking = false;
  bool stop_gradient = true;
};

struct TrainSettings {
  int epochs = 30;
  int batch_size = 128;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct IdentifySettings {
  double dirac_kappa = 1e6;
  double dirac_ratio = 10.0;
  bool dirac_control = true;
  int negative_control_seeds = 5;
  // Class centers for the selective-prediction labels and the annotators.
  int classes = 10;
  double class_max_cosine = 0.7;
};

struct UrlSettings {
  std::vector<std::string> losses = {"mc_info_nce", "loss_prediction"};
  int splits = 3;
  int classes_per_split = 8;
  // Largest cosine allowed between centers of different splits.
  double split_max_cosine = 0.95;
  int random_seeds = 5;
  // Learning-rate grid; the value with the best upstream validation R-AUROC
  // is used for the downstream splits.
  std::vector<double> grid_lr = {1e-3, 3e-3};
};

struct DmlSettings {
  int seeds = 3;
  bool shuffle_control = true;
};

struct AnnotatorSettings {
  int annotators = 50;
  int classes = 10;
  std::vector<double> strengths = {0.25, 0.5, 0.75};
  double drift = 0.25;
};

struct CacheSettings {
  int pretrain_epochs = 10;
  int head_epochs = 5;
  double jitter = 0.0;
};

// Flat `key = value` configuration. Every key has a default except `seed`,
// which must be given (in the file or by override).
struct RunConfig {
  std::string experiment;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "out";
  GeneratorSettings generator;
  DataSettings data;
  EncoderSettings encoder;
  LossSettings loss;
  TrainSettings train;
  IdentifySettings identify;
  UrlSettings url;
  DmlSettings dml;
  AnnotatorSettings annotator;
  CacheSettings cache;

  std::uint64_t require_seed() const;

  GeneratorSpec generator_spec(std::uint64_t seed) const;
  EncoderSpec encoder_spec(int input_dim) const;
  AdamConfig adam() const;
  McInfoNceConfig mc_info_nce() const;
  LossPredictionConfig loss_prediction() const;

  // Sets one key from its text form; throws ConfigError on unknown keys or
  // malformed values.
  void set(const std::string& key, const std::string& value);
  // Every key in sorted order with its current value, one `key = value` per
  // line. Two configs with equal canonical text behave identically.
  std::string canonical() const;
  // Checks cross-field invariants (positive sizes, known names, ...).
  void validate() const;
};

std::vector<std::string> config_keys();

// Parses config text. Comments start with '#'. Errors name the line.
RunConfig parse_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// FNV-1a 64 of the canonical text, as 16 hex digits.
std::string config_hash(const RunConfig& config);

}  // namespace suq

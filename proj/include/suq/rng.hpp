#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace suq {

// Counter-based, splittable random source. A generator is a (key, counter)
// pair; every draw hashes the pair, so a child stream derived with split()
// or stream() is independent of how many draws its parent has made. All
// randomness in the library flows from a run seed through labelled streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Child generator keyed by a label, e.g. rng.split("views").
  Rng split(std::string_view label) const;
  // Child generator keyed by an index, used for per-sample streams.
  Rng stream(std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  double gamma(double shape);
  double beta(double a, double b);
  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n);

  Eigen::VectorXd normal_vector(int d);
  Eigen::VectorXd uniform_on_sphere(int d);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const { return key_; }

 private:
  Rng(std::uint64_t key, bool);
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);

}  // namespace suq

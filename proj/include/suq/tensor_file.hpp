#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace suq {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Values are held as doubles; an F32 tensor stores
// its payload as float on disk, so only float-representable values survive a
// round trip unchanged.
struct Tensor {
  DType dtype = DType::F64;
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  std::uint64_t element_count() const;

  static Tensor from_matrix(const Eigen::MatrixXd& m, DType dtype = DType::F64);
  static Tensor from_vector(const std::vector<double>& v, DType dtype = DType::F64);
  // Rank 2 (or rank 1 as a column).
  Eigen::MatrixXd to_matrix() const;
};

// "SUQ1", u8 dtype, u8 rank, u64 LE extents, LE payload.
std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace suq

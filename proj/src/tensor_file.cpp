#include "suq/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace suq {

static_assert(std::endian::native == std::endian::little, "TensorFile I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'S', 'U', 'Q', '1'};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  throw FormatError("tensor: unknown dtype");
}

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw FormatError("tensor: truncated header");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.resize(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.values[i * m.cols() + j] = m(i, j);
  return t;
}

Tensor Tensor::from_vector(const std::vector<double>& v, DType dtype) {
  Tensor t;
  t.dtype = dtype;
  t.shape = {v.size()};
  t.values = v;
  return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
  if (shape.size() == 1) {
    return Eigen::Map<const Eigen::MatrixXd>(values.data(), static_cast<Eigen::Index>(shape[0]), 1);
  }
  if (shape.size() != 2) throw FormatError("tensor: expected rank 1 or 2, got rank " + std::to_string(shape.size()));
  Eigen::MatrixXd m(shape[0], shape[1]);
  for (std::uint64_t i = 0; i < shape[0]; ++i)
    for (std::uint64_t j = 0; j < shape[1]; ++j) m(i, j) = values[i * shape[1] + j];
  return m;
}

std::string encode_tensor(const Tensor& t) {
  if (t.shape.size() > 255) throw FormatError("tensor: rank above 255");
  if (t.values.size() != t.element_count()) throw FormatError("tensor: value count does not match shape");
  std::string out(kMagic, 4);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  put<std::uint8_t>(out, static_cast<std::uint8_t>(t.shape.size()));
  for (auto e : t.shape) put<std::uint64_t>(out, e);
  out.reserve(out.size() + t.values.size() * dtype_size(t.dtype));
  if (t.dtype == DType::F32) {
    for (double v : t.values) put<float>(out, static_cast<float>(v));
  } else {
    for (double v : t.values) put<double>(out, v);
  }
  return out;
}

Tensor decode_tensor(const std::string& bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("tensor: bad magic");
  std::size_t pos = 4;
  Tensor t;
  const auto code = take<std::uint8_t>(bytes, pos);
  if (code != 1 && code != 2) throw FormatError("tensor: unknown dtype code " + std::to_string(code));
  t.dtype = static_cast<DType>(code);
  const auto rank = take<std::uint8_t>(bytes, pos);
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto e = take<std::uint64_t>(bytes, pos);
    if (e != 0 && count > std::numeric_limits<std::uint64_t>::max() / e) throw FormatError("tensor: extent overflow");
    count *= e;
    t.shape.push_back(e);
  }
  const std::size_t width = dtype_size(t.dtype);
  if (count > (bytes.size() - pos) / width || bytes.size() - pos != count * width) {
    throw FormatError("tensor: payload length " + std::to_string(bytes.size() - pos) + " does not match " +
                      std::to_string(count) + " elements");
  }
  t.values.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    t.values[i] = t.dtype == DType::F32 ? static_cast<double>(take<float>(bytes, pos)) : take<double>(bytes, pos);
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  const std::string bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) throw std::runtime_error("not a tensor file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_tensor(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace suq

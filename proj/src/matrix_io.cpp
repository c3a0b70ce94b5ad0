#include "memprior/matrix_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <sstream>

#include "memprior/errors.hpp"

namespace memprior::io {

using Index = Eigen::Index;

static_assert(std::endian::native == std::endian::little,
              "matrix files are written with a raw little-endian payload");

namespace {

constexpr std::array<char, 4> kMagic{'M', 'P', 'S', 'T'};

template <class T>
void put(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T take(std::ifstream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("truncated matrix header in " + path.string());
  return value;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::uint64_t Tensor::element_count() const {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  const auto count = tensor.element_count();
  const bool real = tensor.dtype == DType::f64;
  if ((real && tensor.values.size() != count) ||
      (!real && tensor.complex_values.size() != count)) {
    throw InvalidArgument("tensor payload does not match its dimensions");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kFormatVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dtype));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensor.dims.size()));
  for (auto d : tensor.dims) put<std::uint64_t>(out, d);
  if (real) {
    out.write(reinterpret_cast<const char*>(tensor.values.data()),
              static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    out.write(reinterpret_cast<const char*>(tensor.complex_values.data()),
              static_cast<std::streamsize>(count * sizeof(std::complex<double>)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + " is not a matrix file");
  const auto version = take<std::uint32_t>(in, path);
  if (version != kFormatVersion) {
    throw IoError("unsupported matrix file version " + std::to_string(version));
  }
  Tensor t;
  const auto dtype = take<std::uint32_t>(in, path);
  if (dtype != 1 && dtype != 2) throw IoError("unknown dtype code in " + path.string());
  t.dtype = static_cast<DType>(dtype);
  const auto ndim = take<std::uint32_t>(in, path);
  if (ndim > 8) throw IoError("implausible rank in " + path.string());
  for (std::uint32_t i = 0; i < ndim; ++i) t.dims.push_back(take<std::uint64_t>(in, path));
  const auto count = t.element_count();
  if (t.dtype == DType::f64) {
    t.values.resize(count);
    in.read(reinterpret_cast<char*>(t.values.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  } else {
    t.complex_values.resize(count);
    in.read(reinterpret_cast<char*>(t.complex_values.data()),
            static_cast<std::streamsize>(count * sizeof(std::complex<double>)));
  }
  if (!in) throw IoError("truncated payload in " + path.string());
  return t;
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.values.resize(m.size());
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), m.rows(), m.cols()) = m;
  write_tensor(path, t);
}

void write_vector(const std::filesystem::path& path, const Eigen::VectorXd& v) {
  Tensor t;
  t.dims = {static_cast<std::uint64_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  write_tensor(path, t);
}

void write_complex_matrix(const std::filesystem::path& path, const Eigen::MatrixXcd& m) {
  Tensor t;
  t.dtype = DType::c128;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.complex_values.resize(m.size());
  Eigen::Map<Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.complex_values.data(), m.rows(), m.cols()) = m;
  write_tensor(path, t);
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype != DType::f64) throw IoError(path.string() + " holds complex data");
  if (t.dims.size() == 1) {
    return Eigen::Map<const Eigen::VectorXd>(t.values.data(), static_cast<Index>(t.dims[0]));
  }
  if (t.dims.size() != 2) throw IoError(path.string() + " is not a matrix");
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      t.values.data(), static_cast<Index>(t.dims[0]), static_cast<Index>(t.dims[1]));
}

Eigen::VectorXd read_vector(const std::filesystem::path& path) {
  Eigen::MatrixXd m = read_matrix(path);
  if (m.cols() != 1 && m.rows() != 1) throw IoError(path.string() + " is not a vector");
  return Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
}

Eigen::MatrixXcd read_complex_matrix(const std::filesystem::path& path) {
  const Tensor t = read_tensor(path);
  if (t.dtype != DType::c128 || t.dims.size() != 2) {
    throw IoError(path.string() + " is not a complex matrix");
  }
  return Eigen::Map<const Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(
      t.complex_values.data(), static_cast<Index>(t.dims[0]), static_cast<Index>(t.dims[1]));
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
    : out_(path, std::ios::trunc), columns_(header.size()) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < header.size(); ++i) out_ << (i ? "," : "") << header[i];
  out_ << '\n';
}

void CsvWriter::add_row(const std::vector<Cell>& cells) {
  if (cells.size() != columns_) throw InvalidArgument("CSV row width does not match header");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    std::visit(
        [this](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) {
            out_ << format_double(v);
          } else {
            out_ << v;
          }
        },
        cells[i]);
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw IoError("CSV write failed");
}

}  // namespace memprior::io

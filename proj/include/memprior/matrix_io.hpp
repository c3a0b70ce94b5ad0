#pragma once

// Repo-standard binary matrix files and CSV output.
//
// Matrix file layout (all integers little-endian):
//   magic   "MPST"            4 bytes
//   version u32               currently 1
//   dtype   u32               1 = f64, 2 = c128 (re, im pairs)
//   ndim    u32
//   dims    u64 x ndim
//   payload row-major

#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace memprior::io {

enum class DType : std::uint32_t { f64 = 1, c128 = 2 };

inline constexpr std::uint32_t kFormatVersion = 1;

struct Tensor {
  DType dtype = DType::f64;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;                      // f64 payload
  std::vector<std::complex<double>> complex_values;  // c128 payload

  std::uint64_t element_count() const;
};

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m);
void write_vector(const std::filesystem::path& path, const Eigen::VectorXd& v);
void write_complex_matrix(const std::filesystem::path& path, const Eigen::MatrixXcd& m);

/// Reads a 2-D f64 file. A 1-D file is returned as a single column.
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);
/// Reads a 1-D f64 file, or a 2-D file with a single row or column.
Eigen::VectorXd read_vector(const std::filesystem::path& path);
Eigen::MatrixXcd read_complex_matrix(const std::filesystem::path& path);

/// Comma-separated writer with a mandatory header row.
class CsvWriter {
 public:
  using Cell = std::variant<double, long long, std::string>;

  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void add_row(const std::vector<Cell>& cells);
  /// Flushes and closes the file; throws IoError if any write failed.
  void close();

 private:
  std::ofstream out_;
  std::size_t columns_;
};

}  // namespace memprior::io

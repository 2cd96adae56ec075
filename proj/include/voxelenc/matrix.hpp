#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace voxelenc {

enum class Dtype : std::uint8_t { F32 = 0, F64 = 1 };

std::size_t dtype_size(Dtype dtype) noexcept;
std::string to_string(Dtype dtype);

// Row-major numeric matrix. Values are held as double in memory; the dtype
// tag records the on-disk precision. Every f32 value is exactly
// representable as a double, so f32 data round-trips bit-exactly.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, Dtype dtype = Dtype::F64);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
              Dtype dtype = Dtype::F64);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  Dtype dtype() const noexcept { return dtype_; }

  // Changing to F32 rounds every stored value to single precision.
  void set_dtype(Dtype dtype);

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  std::vector<double> column(std::size_t c) const;
  void set_column(std::size_t c, std::span<const double> values);

  DenseMatrix select_rows(std::span<const std::size_t> rows) const;
  DenseMatrix select_cols(std::span<const std::size_t> cols) const;
  DenseMatrix transpose() const;

  std::string shape_string() const;

  // Bit-level equality, including dtype and shape.
  friend bool operator==(const DenseMatrix& a, const DenseMatrix& b);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Dtype dtype_ = Dtype::F64;
  std::vector<double> data_;
};

// Convenience for per-voxel vectors, stored as 1 x n rows.
DenseMatrix row_vector(std::span<const double> values, Dtype dtype = Dtype::F64);

}  // namespace voxelenc

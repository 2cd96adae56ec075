#include "voxelenc/matrix.hpp"

#include <bit>
#include <cstring>

#include "voxelenc/error.hpp"

namespace voxelenc {

std::size_t dtype_size(Dtype dtype) noexcept {
  return dtype == Dtype::F32 ? 4 : 8;
}

std::string to_string(Dtype dtype) { return dtype == Dtype::F32 ? "f32" : "f64"; }

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, Dtype dtype)
    : rows_(rows), cols_(cols), dtype_(dtype), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data,
                         Dtype dtype)
    : rows_(rows), cols_(cols), dtype_(Dtype::F64), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                     " does not match shape " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
  set_dtype(dtype);
}

void DenseMatrix::set_dtype(Dtype dtype) {
  dtype_ = dtype;
  if (dtype == Dtype::F32) {
    for (double& v : data_) v = static_cast<double>(static_cast<float>(v));
  }
}

std::vector<double> DenseMatrix::column(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
  return out;
}

void DenseMatrix::set_column(std::size_t c, std::span<const double> values) {
  if (values.size() != rows_) {
    throw ShapeError("column length " + std::to_string(values.size()) +
                     " does not match " + std::to_string(rows_) + " rows");
  }
  for (std::size_t r = 0; r < rows_; ++r) data_[r * cols_ + c] = values[r];
}

DenseMatrix DenseMatrix::select_rows(std::span<const std::size_t> rows) const {
  DenseMatrix out(rows.size(), cols_, dtype_);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= rows_) throw IndexError("row index out of range");
    std::memcpy(out.data_.data() + i * cols_, data_.data() + rows[i] * cols_,
                cols_ * sizeof(double));
  }
  return out;
}

DenseMatrix DenseMatrix::select_cols(std::span<const std::size_t> cols) const {
  DenseMatrix out(rows_, cols.size(), dtype_);
  for (std::size_t c : cols) {
    if (c >= cols_) throw IndexError("column index out of range");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out.data_[r * cols.size() + j] = data_[r * cols_ + cols[j]];
    }
  }
  return out;
}

DenseMatrix DenseMatrix::transpose() const {
  DenseMatrix out(cols_, rows_, dtype_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) out.data_[c * rows_ + r] = data_[r * cols_ + c];
  }
  return out;
}

std::string DenseMatrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool operator==(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows_ != b.rows_ || a.cols_ != b.cols_ || a.dtype_ != b.dtype_) return false;
  for (std::size_t i = 0; i < a.data_.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(a.data_[i]) != std::bit_cast<std::uint64_t>(b.data_[i])) {
      return false;
    }
  }
  return true;
}

DenseMatrix row_vector(std::span<const double> values, Dtype dtype) {
  return DenseMatrix(1, values.size(), std::vector<double>(values.begin(), values.end()),
                     dtype);
}

}  // namespace voxelenc

#pragma once

#include <cstddef>

// Dense row-major kernels shared by the forward and backward passes. The
// loop order is fixed so results do not depend on anything but the inputs.
namespace voxelenc::lm::kernels {

inline constexpr double kLnEps = 1e-5;

// C[n x m] += A[n x k] * B[k x m]
inline void matmul_add(const double* a, const double* b, double* c, std::size_t n,
                       std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = arow[p];
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += x * brow[j];
    }
  }
}

// C[k x m] += A[n x k]^T * B[n x m]
inline void matmul_at_b_add(const double* a, const double* b, double* c, std::size_t n,
                            std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double x = arow[p];
      double* crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += x * brow[j];
    }
  }
}

// C[n x k] += A[n x m] * B[k x m]^T
inline void matmul_a_bt_add(const double* a, const double* b, double* c, std::size_t n,
                            std::size_t m, std::size_t k) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * m;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += arow[j] * brow[j];
      crow[p] += s;
    }
  }
}

// out[n x d] = LN(x) with gain/bias; records mean and 1/sd per row.
void layer_norm(const double* x, const double* gain, const double* bias, double* out,
                double* mean, double* rstd, std::size_t n, std::size_t d);

// dx[n x d] += d LN / dx applied to dy; accumulates dgain and dbias when non-null.
void layer_norm_backward(const double* x, const double* gain, const double* mean,
                         const double* rstd, const double* dy, double* dx, double* dgain,
                         double* dbias, std::size_t n, std::size_t d);

}  // namespace voxelenc::lm::kernels

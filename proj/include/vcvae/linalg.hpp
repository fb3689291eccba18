#pragma once

#include <cstddef>
#include <span>

#include "vcvae/tensor.hpp"

namespace vcvae {

// a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b for a[k x m], b[k x n]
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T for a[m x k], b[n x k]
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);
Tensor identity(std::size_t n);

// Lower-triangular L with L * L^T == a. Throws DecompositionError naming the
// first non-positive pivot.
Tensor cholesky(const Tensor& a);

// Solves L * x = b in place for lower-triangular L.
void solve_lower_inplace(const Tensor& lower, std::span<double> b);

// log det(L * L^T) for a Cholesky factor L.
double cholesky_log_det(const Tensor& lower);

}  // namespace vcvae

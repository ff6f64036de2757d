#pragma once

#include <cstddef>

// Internal dense kernels. All heavy inner products route through BLAS;
// everything else is plain loops.

namespace capsnav::kernels {

// Row-major C = alpha * op(A) * op(B) + beta * C.
// A is m x k after transposition, B is k x n after transposition.
void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc);

// y += a * x
void axpy(std::size_t n, double a, const double* x, double* y);

}  // namespace capsnav::kernels

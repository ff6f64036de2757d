#include "kernels.hpp"

#include <cstddef>

#include <cblas.h>

extern "C" void openblas_set_num_threads(int);

namespace capsnav::kernels {

namespace {
// Multi-threaded BLAS reductions are not order-stable; pin to one thread
// so results are bit-identical run to run.
const bool blas_single_thread = [] {
    openblas_set_num_threads(1);
    return true;
}();
}  // namespace

void dgemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
           const double* a, int lda, const double* b, int ldb, double beta,
           double* c, int ldc) {
    (void)blas_single_thread;
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
}

void axpy(std::size_t n, double a, const double* x, double* y) {
    cblas_daxpy(static_cast<int>(n), a, x, 1, y, 1);
}

}  // namespace capsnav::kernels

#pragma once

#include <cblas.h>

#include <cstddef>
#include <vector>

extern "C" void openblas_set_num_threads(int);

namespace hf::nn {

namespace blas_detail {

inline void raw_gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a,
                     int lda, const float* b, int ldb, float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

inline void raw_gemm(bool ta, bool tb, int m, int n, int k, double alpha,
                     const double* a, int lda, const double* b, int ldb, double beta,
                     double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb, beta, c,
              ldc);
}

// The library runs OpenBLAS single-threaded and parallelizes large GEMMs
// itself with the same OpenMP pool the im2col/col2im kernels use; two pools
// spinning against each other on a small machine costs more than it buys.
inline void ensure_single_threaded_blas() {
  static const bool once = [] {
    openblas_set_num_threads(1);
    return true;
  }();
  (void)once;
}

template <typename T>
std::vector<T>& kpartial(int which) {
  thread_local std::vector<T> buf[2];
  return buf[which];
}

}  // namespace blas_detail

// Row-major GEMM: C = alpha * op(A) * op(B) + beta * C. Large products are
// split two ways deterministically: fixed split points, fixed reduction
// order, so results are bit-identical run to run.
template <typename T>
void gemm(bool ta, bool tb, int m, int n, int k, T alpha, const T* a, int lda,
          const T* b, int ldb, T beta, T* c, int ldc) {
  using namespace blas_detail;
  ensure_single_threaded_blas();
  const long long work = 1ll * m * n * k;
  if (work >= (1ll << 24) && n >= 2048) {
    // split the output columns
    const int half = n / 2;
#pragma omp parallel for num_threads(2) schedule(static)
    for (int part = 0; part < 2; ++part) {
      int j0 = part == 0 ? 0 : half;
      int nn = part == 0 ? half : n - half;
      const T* bp = tb ? b + size_t(j0) * ldb : b + j0;
      raw_gemm(ta, tb, m, nn, k, alpha, a, lda, bp, ldb, beta, c + j0, ldc);
    }
    return;
  }
  if (work >= (1ll << 24) && k >= 2048 && 1ll * m * n <= (1 << 18)) {
    // split the reduction; the two partials are summed in a fixed order
    const int halfk = k / 2;
    std::vector<T>& p0 = kpartial<T>(0);
    std::vector<T>& p1 = kpartial<T>(1);
    p0.resize(size_t(m) * n);
    p1.resize(size_t(m) * n);
#pragma omp parallel for num_threads(2) schedule(static)
    for (int part = 0; part < 2; ++part) {
      int k0 = part == 0 ? 0 : halfk;
      int kk = part == 0 ? halfk : k - halfk;
      const T* ap = ta ? a + size_t(k0) * lda : a + k0;
      const T* bp = tb ? b + k0 : b + size_t(k0) * ldb;
      raw_gemm(ta, tb, m, n, kk, alpha, ap, lda, bp, ldb, T(0),
               (part == 0 ? p0 : p1).data(), n);
    }
    for (int i = 0; i < m; ++i) {
      T* crow = c + size_t(i) * ldc;
      const T* r0 = p0.data() + size_t(i) * n;
      const T* r1 = p1.data() + size_t(i) * n;
      if (beta == T(0))
        for (int j = 0; j < n; ++j) crow[j] = r0[j] + r1[j];
      else
        for (int j = 0; j < n; ++j) crow[j] = beta * crow[j] + r0[j] + r1[j];
    }
    return;
  }
  raw_gemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

}  // namespace hf::nn

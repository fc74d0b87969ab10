// Compiled with -mavx2 only (never -mfma): multiply and add stay separate
// instructions so results match the scalar reference bit for bit.

#include <immintrin.h>

#include <cstddef>

#include "neq/kernels.hpp"

namespace neq::kernels::avx2 {
namespace {

// Scalar tail, same operation order as the vector body.
template <typename T>
inline void gemm_tail(std::size_t rows, std::size_t j0, std::size_t n, std::size_t k, const T* a,
                      std::size_t lda, const T* b, std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = j0; j < n; ++j) {
      T s = c[r * ldc + j];
      for (std::size_t p = 0; p < k; ++p) s = s + a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] = s;
    }
  }
}

template <int R>
void gemm_rows_f32(std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    __m256 acc0[R];
    __m256 acc1[R];
    for (int r = 0; r < R; ++r) {
      acc0[r] = _mm256_loadu_ps(c + r * ldc + j);
      acc1[r] = _mm256_loadu_ps(c + r * ldc + j + 8);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256 b0 = _mm256_loadu_ps(b + p * ldb + j);
      const __m256 b1 = _mm256_loadu_ps(b + p * ldb + j + 8);
      for (int r = 0; r < R; ++r) {
        const __m256 av = _mm256_broadcast_ss(a + r * lda + p);
        acc0[r] = _mm256_add_ps(acc0[r], _mm256_mul_ps(av, b0));
        acc1[r] = _mm256_add_ps(acc1[r], _mm256_mul_ps(av, b1));
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_ps(c + r * ldc + j, acc0[r]);
      _mm256_storeu_ps(c + r * ldc + j + 8, acc1[r]);
    }
  }
  for (; j + 8 <= n; j += 8) {
    __m256 acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_ps(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256 bv = _mm256_loadu_ps(b + p * ldb + j);
      for (int r = 0; r < R; ++r) {
        acc[r] = _mm256_add_ps(acc[r], _mm256_mul_ps(_mm256_broadcast_ss(a + r * lda + p), bv));
      }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_ps(c + r * ldc + j, acc[r]);
  }
  gemm_tail<float>(R, j, n, k, a, lda, b, ldb, c, ldc);
}

template <int R>
void gemm_rows_f64(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b,
                   std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256d acc0[R];
    __m256d acc1[R];
    for (int r = 0; r < R; ++r) {
      acc0[r] = _mm256_loadu_pd(c + r * ldc + j);
      acc1[r] = _mm256_loadu_pd(c + r * ldc + j + 4);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d b0 = _mm256_loadu_pd(b + p * ldb + j);
      const __m256d b1 = _mm256_loadu_pd(b + p * ldb + j + 4);
      for (int r = 0; r < R; ++r) {
        const __m256d av = _mm256_broadcast_sd(a + r * lda + p);
        acc0[r] = _mm256_add_pd(acc0[r], _mm256_mul_pd(av, b0));
        acc1[r] = _mm256_add_pd(acc1[r], _mm256_mul_pd(av, b1));
      }
    }
    for (int r = 0; r < R; ++r) {
      _mm256_storeu_pd(c + r * ldc + j, acc0[r]);
      _mm256_storeu_pd(c + r * ldc + j + 4, acc1[r]);
    }
  }
  for (; j + 4 <= n; j += 4) {
    __m256d acc[R];
    for (int r = 0; r < R; ++r) acc[r] = _mm256_loadu_pd(c + r * ldc + j);
    for (std::size_t p = 0; p < k; ++p) {
      const __m256d bv = _mm256_loadu_pd(b + p * ldb + j);
      for (int r = 0; r < R; ++r) {
        acc[r] = _mm256_add_pd(acc[r], _mm256_mul_pd(_mm256_broadcast_sd(a + r * lda + p), bv));
      }
    }
    for (int r = 0; r < R; ++r) _mm256_storeu_pd(c + r * ldc + j, acc[r]);
  }
  gemm_tail<double>(R, j, n, k, a, lda, b, ldb, c, ldc);
}

}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows_f32<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) gemm_rows_f32<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                     const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) gemm_rows_f64<4>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
  for (; i < m; ++i) gemm_rows_f64<1>(n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc);
}

void relu_forward(std::span<const float> x, std::span<float> y) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= x.size(); i += 8) {
    const __m256 v = _mm256_loadu_ps(x.data() + i);
    _mm256_storeu_ps(y.data() + i, _mm256_and_ps(_mm256_cmp_ps(v, zero, _CMP_GT_OQ), v));
  }
  for (; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_forward(std::span<const double> x, std::span<double> y) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    const __m256d v = _mm256_loadu_pd(x.data() + i);
    _mm256_storeu_pd(y.data() + i, _mm256_and_pd(_mm256_cmp_pd(v, zero, _CMP_GT_OQ), v));
  }
  for (; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= x.size(); i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x.data() + i), zero, _CMP_GT_OQ);
    _mm256_storeu_ps(dx.data() + i, _mm256_and_ps(mask, _mm256_loadu_ps(dy.data() + i)));
  }
  for (; i < x.size(); ++i) dx[i] = x[i] > 0.0f ? dy[i] : 0.0f;
}

void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= x.size(); i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x.data() + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx.data() + i, _mm256_and_pd(mask, _mm256_loadu_pd(dy.data() + i)));
  }
  for (; i < x.size(); ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void add_inplace(std::span<float> dst, std::span<const float> src) {
  std::size_t i = 0;
  for (; i + 8 <= dst.size(); i += 8) {
    _mm256_storeu_ps(dst.data() + i,
                     _mm256_add_ps(_mm256_loadu_ps(dst.data() + i), _mm256_loadu_ps(src.data() + i)));
  }
  for (; i < dst.size(); ++i) dst[i] = dst[i] + src[i];
}

void add_inplace(std::span<double> dst, std::span<const double> src) {
  std::size_t i = 0;
  for (; i + 4 <= dst.size(); i += 4) {
    _mm256_storeu_pd(dst.data() + i,
                     _mm256_add_pd(_mm256_loadu_pd(dst.data() + i), _mm256_loadu_pd(src.data() + i)));
  }
  for (; i < dst.size(); ++i) dst[i] = dst[i] + src[i];
}

void sgd_momentum_update(std::span<float> w, std::span<float> buf, std::span<const float> g, float lr,
                         float momentum, float weight_decay) {
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 vmom = _mm256_set1_ps(momentum);
  const __m256 vwd = _mm256_set1_ps(weight_decay);
  std::size_t i = 0;
  for (; i + 8 <= w.size(); i += 8) {
    const __m256 wv = _mm256_loadu_ps(w.data() + i);
    const __m256 d = _mm256_add_ps(_mm256_loadu_ps(g.data() + i), _mm256_mul_ps(vwd, wv));
    const __m256 bv = _mm256_add_ps(_mm256_mul_ps(vmom, _mm256_loadu_ps(buf.data() + i)), d);
    _mm256_storeu_ps(buf.data() + i, bv);
    _mm256_storeu_ps(w.data() + i, _mm256_sub_ps(wv, _mm256_mul_ps(vlr, bv)));
  }
  for (; i < w.size(); ++i) {
    const float d = g[i] + weight_decay * w[i];
    buf[i] = momentum * buf[i] + d;
    w[i] = w[i] - lr * buf[i];
  }
}

void sgd_momentum_update(std::span<double> w, std::span<double> buf, std::span<const double> g, double lr,
                         double momentum, double weight_decay) {
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vmom = _mm256_set1_pd(momentum);
  const __m256d vwd = _mm256_set1_pd(weight_decay);
  std::size_t i = 0;
  for (; i + 4 <= w.size(); i += 4) {
    const __m256d wv = _mm256_loadu_pd(w.data() + i);
    const __m256d d = _mm256_add_pd(_mm256_loadu_pd(g.data() + i), _mm256_mul_pd(vwd, wv));
    const __m256d bv = _mm256_add_pd(_mm256_mul_pd(vmom, _mm256_loadu_pd(buf.data() + i)), d);
    _mm256_storeu_pd(buf.data() + i, bv);
    _mm256_storeu_pd(w.data() + i, _mm256_sub_pd(wv, _mm256_mul_pd(vlr, bv)));
  }
  for (; i < w.size(); ++i) {
    const double d = g[i] + weight_decay * w[i];
    buf[i] = momentum * buf[i] + d;
    w[i] = w[i] - lr * buf[i];
  }
}

}  // namespace neq::kernels::avx2

#include <cstddef>

#include "neq/kernels.hpp"

namespace neq::kernels::scalar {
namespace {

template <typename T>
void gemm_impl(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda, const T* b,
               std::size_t ldb, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] = crow[j] + av * brow[j];
    }
  }
}

template <typename T>
void relu_forward_impl(std::span<const T> x, std::span<T> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward_impl(std::span<const T> x, std::span<const T> dy, std::span<T> dx) {
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T{0} ? dy[i] : T{0};
}

template <typename T>
void add_inplace_impl(std::span<T> dst, std::span<const T> src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = dst[i] + src[i];
}

template <typename T>
void sgd_impl(std::span<T> w, std::span<T> buf, std::span<const T> g, T lr, T momentum, T weight_decay) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T d = g[i] + weight_decay * w[i];
    buf[i] = momentum * buf[i] + d;
    w[i] = w[i] - lr * buf[i];
  }
}

}  // namespace

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                     const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  gemm_impl(m, n, k, a, lda, b, ldb, c, ldc);
}
void relu_forward(std::span<const float> x, std::span<float> y) { relu_forward_impl(x, y); }
void relu_forward(std::span<const double> x, std::span<double> y) { relu_forward_impl(x, y); }
void relu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
  relu_backward_impl(x, dy, dx);
}
void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  relu_backward_impl(x, dy, dx);
}
void add_inplace(std::span<float> dst, std::span<const float> src) { add_inplace_impl(dst, src); }
void add_inplace(std::span<double> dst, std::span<const double> src) { add_inplace_impl(dst, src); }
void sgd_momentum_update(std::span<float> w, std::span<float> buf, std::span<const float> g, float lr,
                         float momentum, float weight_decay) {
  sgd_impl(w, buf, g, lr, momentum, weight_decay);
}
void sgd_momentum_update(std::span<double> w, std::span<double> buf, std::span<const double> g, double lr,
                         double momentum, double weight_decay) {
  sgd_impl(w, buf, g, lr, momentum, weight_decay);
}

}  // namespace neq::kernels::scalar

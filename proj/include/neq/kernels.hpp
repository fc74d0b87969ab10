#pragma once

// Numeric inner loops with a scalar reference implementation and an AVX2
// variant picked at runtime. Every kernel vectorizes across independent
// outputs only, so each output element sees the same sequence of IEEE
// operations (ascending reduction index, separate multiply and add) in both
// variants. Results are therefore bit-identical between ISAs.

#include <cstddef>
#include <span>
#include <string_view>

namespace neq::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best ISA the running CPU supports (and that was compiled in).
Isa detected_isa() noexcept;

/// ISA used by the dispatching entry points below. Initialised from the
/// NEQ_ISA environment variable ("scalar" or "avx2") if set, else detected.
Isa active_isa() noexcept;

/// Throws neq::StateError if the ISA is unavailable on this machine.
void set_active_isa(Isa isa);

bool isa_available(Isa isa) noexcept;

// c[i*ldc + j] = c[i*ldc + j] + sum_{p = 0..k-1, ascending} a[i*lda + p] * b[p*ldb + j]
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc);
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                     const double* b, std::size_t ldb, double* c, std::size_t ldc);

// y = x > 0 ? x : 0
void relu_forward(std::span<const float> x, std::span<float> y);
void relu_forward(std::span<const double> x, std::span<double> y);

// dx = x > 0 ? dy : 0
void relu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx);
void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);

// dst = dst + src
void add_inplace(std::span<float> dst, std::span<const float> src);
void add_inplace(std::span<double> dst, std::span<const double> src);

// buf = momentum * buf + (g + weight_decay * w);  w = w - lr * buf
void sgd_momentum_update(std::span<float> w, std::span<float> buf, std::span<const float> g, float lr,
                         float momentum, float weight_decay);
void sgd_momentum_update(std::span<double> w, std::span<double> buf, std::span<const double> g, double lr,
                         double momentum, double weight_decay);

// Per-ISA entry points, exposed for equivalence tests and benchmarks.
#define NEQ_KERNEL_DECLS                                                                                   \
  void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,      \
                       const float* b, std::size_t ldb, float* c, std::size_t ldc);                       \
  void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,     \
                       const double* b, std::size_t ldb, double* c, std::size_t ldc);                     \
  void relu_forward(std::span<const float> x, std::span<float> y);                                        \
  void relu_forward(std::span<const double> x, std::span<double> y);                                      \
  void relu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx);           \
  void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx);        \
  void add_inplace(std::span<float> dst, std::span<const float> src);                                     \
  void add_inplace(std::span<double> dst, std::span<const double> src);                                   \
  void sgd_momentum_update(std::span<float> w, std::span<float> buf, std::span<const float> g, float lr,  \
                           float momentum, float weight_decay);                                           \
  void sgd_momentum_update(std::span<double> w, std::span<double> buf, std::span<const double> g,         \
                           double lr, double momentum, double weight_decay);

namespace scalar {
NEQ_KERNEL_DECLS
}  // namespace scalar

namespace avx2 {
NEQ_KERNEL_DECLS
}  // namespace avx2

#undef NEQ_KERNEL_DECLS

}  // namespace neq::kernels

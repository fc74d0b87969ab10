#include <atomic>
#include <cstdlib>
#include <string>

#include "neq/errors.hpp"
#include "neq/kernels.hpp"

namespace neq::kernels {
namespace {

Isa initial_isa() noexcept {
  const Isa best = detected_isa();
  if (const char* env = std::getenv("NEQ_ISA")) {
    const std::string v(env);
    if (v == "scalar") return Isa::scalar;
    if (v == "avx2" && isa_available(Isa::avx2)) return Isa::avx2;
  }
  return best;
}

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{initial_isa()};
  return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return "scalar";
    case Isa::avx2: return "avx2";
  }
  return "unknown";
}

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::scalar: return true;
    case Isa::avx2:
#if defined(NEQ_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2");
#else
      return false;
#endif
  }
  return false;
}

Isa detected_isa() noexcept { return isa_available(Isa::avx2) ? Isa::avx2 : Isa::scalar; }

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

void set_active_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw StateError("ISA " + std::string(isa_name(isa)) + " is not available on this machine");
  }
  current().store(isa, std::memory_order_relaxed);
}

#if defined(NEQ_HAVE_AVX2)
#define NEQ_DISPATCH(call)                            \
  do {                                                \
    if (active_isa() == Isa::avx2) return avx2::call; \
    return scalar::call;                              \
  } while (0)
#else
#define NEQ_DISPATCH(call) return scalar::call
#endif

void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda,
                     const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  NEQ_DISPATCH(gemm_accumulate(m, n, k, a, lda, b, ldb, c, ldc));
}
void gemm_accumulate(std::size_t m, std::size_t n, std::size_t k, const double* a, std::size_t lda,
                     const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  NEQ_DISPATCH(gemm_accumulate(m, n, k, a, lda, b, ldb, c, ldc));
}
void relu_forward(std::span<const float> x, std::span<float> y) { NEQ_DISPATCH(relu_forward(x, y)); }
void relu_forward(std::span<const double> x, std::span<double> y) { NEQ_DISPATCH(relu_forward(x, y)); }
void relu_backward(std::span<const float> x, std::span<const float> dy, std::span<float> dx) {
  NEQ_DISPATCH(relu_backward(x, dy, dx));
}
void relu_backward(std::span<const double> x, std::span<const double> dy, std::span<double> dx) {
  NEQ_DISPATCH(relu_backward(x, dy, dx));
}
void add_inplace(std::span<float> dst, std::span<const float> src) { NEQ_DISPATCH(add_inplace(dst, src)); }
void add_inplace(std::span<double> dst, std::span<const double> src) { NEQ_DISPATCH(add_inplace(dst, src)); }
void sgd_momentum_update(std::span<float> w, std::span<float> buf, std::span<const float> g, float lr,
                         float momentum, float weight_decay) {
  NEQ_DISPATCH(sgd_momentum_update(w, buf, g, lr, momentum, weight_decay));
}
void sgd_momentum_update(std::span<double> w, std::span<double> buf, std::span<const double> g, double lr,
                         double momentum, double weight_decay) {
  NEQ_DISPATCH(sgd_momentum_update(w, buf, g, lr, momentum, weight_decay));
}

#undef NEQ_DISPATCH

}  // namespace neq::kernels

#include "neq/loss.hpp"

#include <cmath>
#include <string>

namespace neq {

template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy expects [batch, classes] logits");
  const auto B = static_cast<std::size_t>(logits.dim(0));
  const auto C = static_cast<std::size_t>(logits.dim(1));
  if (labels.size() != B) throw ShapeError("softmax_cross_entropy: label count does not match batch");

  LossResult<T> out{0.0, Tensor<T>(logits.shape())};
  double total = 0.0;
  std::vector<double> e(C);
  for (std::size_t n = 0; n < B; ++n) {
    const auto label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= C) {
      throw DataError("label " + std::to_string(label) + " out of range for " + std::to_string(C) + " classes");
    }
    const T* row = logits.data() + n * C;
    double mx = static_cast<double>(row[0]);
    for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      e[c] = std::exp(static_cast<double>(row[c]) - mx);
      z += e[c];
    }
    total += std::log(z) - (static_cast<double>(row[label]) - mx);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = e[c] / z - (static_cast<std::size_t>(label) == c ? 1.0 : 0.0);
      out.gradient[n * C + c] = static_cast<T>(p / static_cast<double>(B));
    }
  }
  out.loss = total / static_cast<double>(B);
  return out;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2 || labels.size() != static_cast<std::size_t>(logits.dim(0))) {
    throw ShapeError("count_correct: logits/labels mismatch");
  }
  const auto C = static_cast<std::size_t>(logits.dim(1));
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const T* row = logits.data() + n * C;
    std::size_t best = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (static_cast<std::int32_t>(best) == labels[n]) ++correct;
  }
  return correct;
}

template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const std::int32_t>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const std::int32_t>);
template std::size_t count_correct(const Tensor<float>&, std::span<const std::int32_t>);
template std::size_t count_correct(const Tensor<double>&, std::span<const std::int32_t>);

}  // namespace neq

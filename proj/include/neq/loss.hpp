#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "neq/tensor.hpp"

namespace neq {

template <typename T>
struct LossResult {
  double loss = 0.0;  // mean over the batch
  Tensor<T> gradient;  // d loss / d logits, same shape as logits
};

/// Mean softmax cross-entropy of logits [B, C] against class indices.
/// Throws DataError for a label outside [0, C).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> labels);

/// Number of rows whose arg-max (first maximum) equals the label.
template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace neq

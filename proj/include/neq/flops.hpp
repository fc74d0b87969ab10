#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neq/model.hpp"

namespace neq {

/// Per-sample costs of one layer, with 1 multiply-accumulate = 2 FLOPs.
struct LayerCost {
  std::string layer_id;
  LayerKind kind = LayerKind::relu;
  std::int64_t forward = 0;
  std::int64_t weight_grad = 0;         // whole layer, every neuron updated
  std::int64_t input_grad = 0;
  std::int64_t optimizer_per_param = 0;  // per parameter per step
  std::int64_t neurons = 0;
  std::int64_t params_per_neuron = 0;    // weights + bias of one neuron
};

/// Optimizer arithmetic per parameter per step.
inline constexpr std::int64_t kSgdFlopsPerParam = 6;    // decay, momentum, step: 3 mul-adds
inline constexpr std::int64_t kAdamFlopsPerParam = 16;

/// Static per-layer costs in forward order.
std::vector<LayerCost> layer_costs(const ModelLayout& layout, std::int64_t optimizer_flops_per_param = kSgdFlopsPerParam);

/// Backward FLOPs of one iteration on a batch: weight gradients scaled by the
/// live fraction of each layer, input gradients for layers past the gradient
/// horizon, and optimizer arithmetic for live parameters.
std::int64_t bprop_flops(std::span<const LayerCost> costs, const ModelLayout& layout, const FreezeMask& mask,
                         std::int64_t batch_size, bool include_optimizer = true);

struct FlopsSummary {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Population mean and standard deviation. Throws StateError when empty.
FlopsSummary epoch_summary(std::span<const std::int64_t> per_iteration);

}  // namespace neq

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "neq/model.hpp"
#include "neq/record.hpp"

namespace neq {

enum class OptimizerKind { sgd, adam };

const char* optimizer_name(OptimizerKind kind) noexcept;

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  double momentum = 0.9;  // SGD
  double weight_decay = 5e-4;
  double beta1 = 0.9;     // Adam
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// Buffers shaped like the weight and bias of every parameterized layer.
/// SGD uses `first` as the momentum buffer; Adam uses first and second
/// moments plus one step counter per neuron.
template <typename T>
struct OptimizerState {
  struct Slot {
    Tensor<T> first_weight, first_bias;
    Tensor<T> second_weight, second_bias;
    std::vector<std::int64_t> steps;
  };
  std::vector<Slot> slots;  // one per parameterized layer

  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    if (a.slots.size() != b.slots.size()) return false;
    for (std::size_t i = 0; i < a.slots.size(); ++i) {
      const auto& x = a.slots[i];
      const auto& y = b.slots[i];
      if (!(x.first_weight == y.first_weight && x.first_bias == y.first_bias && x.second_weight == y.second_weight &&
            x.second_bias == y.second_bias && x.steps == y.steps)) {
        return false;
      }
    }
    return true;
  }
};

template <typename T>
OptimizerState<T> make_optimizer_state(const Model<T>& model, OptimizerKind kind);

/// w <- w - lr * buf with buf <- momentum * buf + (g + wd * w), for live
/// neurons only. Frozen neurons' parameters and buffers are not touched.
/// Throws StateError when gradients are missing for a live neuron or given
/// for a frozen one.
template <typename T>
void sgd_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
              double lr, double momentum, double weight_decay);

/// Bias-corrected Adam with L2 decay added to the gradient. Each neuron's
/// step counter advances only when it is updated.
template <typename T>
void adam_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
               double lr, double beta1, double beta2, double eps, double weight_decay);

/// Dispatches on config.kind.
template <typename T>
void optimizer_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
                    double lr, const OptimizerConfig& config);

}  // namespace neq

#pragma once

// Define-by-run computation record with per-output-neuron gated backward.
//
// Each parameterized op (linear, conv2d, batchnorm2d) owns one GateVector in
// backward(): a frozen neuron gets no weight/bias gradient at all. Input
// gradients of op n are computed iff some parameterized op recorded before n
// has a live (non-frozen) neuron; otherwise the sweep stops early.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "neq/tensor.hpp"

namespace neq {

/// Per-output-neuron flags of one parameterized op; true means frozen.
class GateVector {
 public:
  GateVector() = default;
  explicit GateVector(std::size_t neurons, bool frozen = false) : flags_(neurons, frozen ? 1 : 0) {}

  std::size_t size() const noexcept { return flags_.size(); }
  bool frozen(std::size_t i) const { return flags_.at(i) != 0; }
  void set_frozen(std::size_t i, bool frozen) { flags_.at(i) = frozen ? 1 : 0; }

  std::size_t frozen_count() const noexcept {
    std::size_t n = 0;
    for (auto f : flags_) n += f;
    return n;
  }
  std::size_t live_count() const noexcept { return size() - frozen_count(); }
  bool any_live() const noexcept { return live_count() > 0; }

  std::vector<std::int32_t> live_indices() const {
    std::vector<std::int32_t> out;
    for (std::size_t i = 0; i < flags_.size(); ++i) {
      if (!flags_[i]) out.push_back(static_cast<std::int32_t>(i));
    }
    return out;
  }

  friend bool operator==(const GateVector&, const GateVector&) = default;

 private:
  std::vector<std::uint8_t> flags_;
};

enum class OpKind { input, linear, conv2d, batchnorm2d, relu, max_pool2d, avg_pool2d, flatten, add };

const char* op_name(OpKind kind) noexcept;

struct Conv2dGeometry {
  int stride = 1;
  int padding = 0;
};

struct Pool2dGeometry {
  int kernel = 2;
  int stride = 2;
};

/// Gradients of one parameterized op, present only for live neurons.
template <typename T>
struct LayerGradient {
  std::vector<std::int32_t> neurons;  // ascending
  Tensor<T> weight;                   // [neurons.size(), weights per neuron]
  Tensor<T> bias;                     // [neurons.size()]

  std::size_t weights_per_neuron() const { return neurons.empty() ? 0 : weight.size() / neurons.size(); }
  std::span<const T> weight_row(std::size_t r) const {
    const std::size_t w = weights_per_neuron();
    return weight.values().subspan(r * w, w);
  }
  /// Row index of a neuron, or nullopt if it has no gradient (frozen).
  std::optional<std::size_t> row_of(std::int32_t neuron) const;
};

template <typename T>
class GradientSet {
 public:
  GradientSet() = default;
  GradientSet(std::vector<std::optional<LayerGradient<T>>> layers, std::vector<bool> input_grad_computed)
      : layers_(std::move(layers)), input_grad_computed_(std::move(input_grad_computed)) {}

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const std::optional<LayerGradient<T>>& layer(std::size_t param_index) const { return layers_.at(param_index); }

  bool empty() const noexcept {
    for (const auto& l : layers_) {
      if (l) return false;
    }
    return true;
  }

  /// Per recorded op: whether the gradient w.r.t. its inputs was computed.
  const std::vector<bool>& input_grad_computed() const noexcept { return input_grad_computed_; }
  std::size_t input_grad_op_count() const noexcept;

 private:
  std::vector<std::optional<LayerGradient<T>>> layers_;
  std::vector<bool> input_grad_computed_;
};

template <typename T>
class Record {
 public:
  using ValueId = std::size_t;

  /// keep_intermediates=false records an inference-only pass (no backward).
  explicit Record(bool keep_intermediates = true) : keep_(keep_intermediates) {}

  ValueId input(Tensor<T> x);

  // x: [B, in], weight: [out, in], bias: [out] -> [B, out]
  ValueId linear(ValueId x, const Tensor<T>& weight, const Tensor<T>& bias);
  // x: [B, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout] -> [B, Cout, Ho, Wo]
  ValueId conv2d(ValueId x, const Tensor<T>& weight, const Tensor<T>& bias, Conv2dGeometry geometry);
  // Normalizes with batch statistics; they are exposed via batch_mean/batch_var.
  ValueId batchnorm2d_train(ValueId x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps);
  ValueId batchnorm2d_eval(ValueId x, const Tensor<T>& gamma, const Tensor<T>& beta, const Tensor<T>& running_mean,
                           const Tensor<T>& running_var, double eps);
  ValueId relu(ValueId x);
  ValueId max_pool2d(ValueId x, Pool2dGeometry geometry);
  ValueId avg_pool2d(ValueId x, Pool2dGeometry geometry);
  ValueId flatten(ValueId x);
  ValueId add(ValueId a, ValueId b);

  const Tensor<T>& value(ValueId id) const;
  std::size_t value_count() const noexcept { return values_.size(); }
  std::size_t op_count() const noexcept { return nodes_.size(); }
  std::size_t param_op_count() const noexcept { return param_nodes_.size(); }
  OpKind op_kind(std::size_t op) const { return nodes_.at(op).kind; }
  ValueId op_output(std::size_t op) const { return nodes_.at(op).output; }
  /// Neuron count (output units/channels) of the i-th parameterized op.
  std::size_t param_neurons(std::size_t param_index) const;

  /// Biased batch mean/variance of a train-mode batch-norm op, plus the
  /// element count per channel they were computed over.
  std::span<const double> batch_mean(std::size_t param_index) const;
  std::span<const double> batch_var(std::size_t param_index) const;
  std::size_t batch_count(std::size_t param_index) const;

  /// Reverse sweep from `output`. `gates` must hold one GateVector per
  /// parameterized op, in recording order.
  GradientSet<T> backward(ValueId output, const Tensor<T>& loss_gradient, std::span<const GateVector> gates) const;

 private:
  struct LinearData {
    const Tensor<T>* weight;
    const Tensor<T>* bias;
  };
  struct ConvData {
    const Tensor<T>* weight;
    const Tensor<T>* bias;
    Conv2dGeometry geometry;
    std::vector<T> cols;  // [B][Cin*kh*kw][Ho*Wo]
  };
  struct BatchNormData {
    const Tensor<T>* gamma;
    const Tensor<T>* beta;
    bool train;
    std::vector<double> mean, var, inv_std;
    std::size_t count = 0;
    std::vector<T> xhat;
  };
  struct PoolData {
    Pool2dGeometry geometry;
    std::vector<std::uint32_t> argmax;  // max pool only: flat index within the input plane
  };
  struct NoData {};
  using Payload = std::variant<NoData, LinearData, ConvData, BatchNormData, PoolData>;

  struct Node {
    OpKind kind;
    std::vector<ValueId> inputs;
    ValueId output;
    int param_index = -1;
    Payload payload;
  };

  ValueId push(OpKind kind, std::vector<ValueId> inputs, Tensor<T> out, Payload payload, bool parameterized);
  const Node& param_node(std::size_t param_index) const;

  bool keep_;
  std::vector<Tensor<T>> values_;
  std::vector<Node> nodes_;
  std::vector<std::size_t> param_nodes_;
};

extern template class Record<float>;
extern template class Record<double>;
extern template class GradientSet<float>;
extern template class GradientSet<double>;

}  // namespace neq

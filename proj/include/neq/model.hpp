#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "neq/record.hpp"
#include "neq/tensor.hpp"

namespace neq {

enum class LayerKind { linear, conv2d, batchnorm2d, relu, max_pool, avg_pool, flatten, add };

const char* layer_kind_name(LayerKind kind) noexcept;

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::string id;
  int in = 0;   // input features (linear) or channels (conv2d, batchnorm2d)
  int out = 0;  // output features or channels
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int skip_from = -1;  // add: layer index whose output joins the previous layer's output
  bool neq_tracked = false;

  bool parameterized() const noexcept {
    return kind == LayerKind::linear || kind == LayerKind::conv2d || kind == LayerKind::batchnorm2d;
  }
  int neuron_count() const noexcept { return parameterized() ? out : 0; }
};

/// Architecture request handed to build_model.
struct ArchSpec {
  std::string name = "smallcnn";     // "mlp", "smallcnn" or "smallresnet"
  Shape input_shape{1, 12, 12};      // per-sample shape: {C, H, W} or {features}
  int classes = 10;
  std::vector<int> widths{8, 16};    // hidden units (mlp) or channels per stage
  bool batchnorm = true;             // smallcnn only; smallresnet always has it
  int blocks_per_stage = 1;          // smallresnet only
};

struct NeuronId {
  std::size_t layer = 0;  // index into the layer list
  std::int32_t index = 0;

  friend auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

/// Frozen flags for every parameterized layer, in forward order.
struct FreezeMask {
  std::vector<GateVector> layers;

  friend bool operator==(const FreezeMask&, const FreezeMask&) = default;
};

/// Parameter-free view of a model: layer list, shapes, and the neuron map.
class ModelLayout {
 public:
  ModelLayout() = default;
  ModelLayout(ArchSpec arch, std::vector<LayerSpec> layers);

  const ArchSpec& arch() const noexcept { return arch_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  const LayerSpec& layer(std::size_t i) const { return layers_.at(i); }
  std::optional<std::size_t> find_layer(const std::string& id) const;

  /// Per-sample output shape of layer i (without batch axis).
  const Shape& output_shape(std::size_t i) const { return output_shapes_.at(i); }
  const Shape& input_shape() const noexcept { return arch_.input_shape; }

  const std::vector<std::size_t>& param_layers() const noexcept { return param_layers_; }
  std::optional<std::size_t> param_ordinal(std::size_t layer) const;

  /// Layer whose output is the observation point of layer i's neurons:
  /// the ReLU right after it, if any, else the layer itself.
  std::size_t observation_layer(std::size_t layer) const;

  /// Output values per neuron per sample at the observation point (H*W or 1).
  std::size_t values_per_neuron(std::size_t layer) const;

  std::vector<NeuronId> tracked_neurons() const;
  std::size_t tracked_neuron_count() const;

  FreezeMask all_live_mask() const;
  FreezeMask all_frozen_mask() const;
  /// Throws ShapeError unless the mask has one gate per parameterized layer
  /// with matching lengths.
  void validate(const FreezeMask& mask) const;
  bool frozen(const FreezeMask& mask, const NeuronId& id) const;
  void set_frozen(FreezeMask& mask, const NeuronId& id, bool frozen) const;
  /// Tracked neurons not frozen by the mask.
  std::size_t updated_tracked_count(const FreezeMask& mask) const;

 private:
  ArchSpec arch_;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> output_shapes_;
  std::vector<std::size_t> param_layers_;
  std::vector<int> param_ordinal_;
};

/// Builds the layer list for an architecture; throws ConfigError on unknown
/// names or dimensions that do not fit.
ModelLayout build_layout(const ArchSpec& arch);

enum class ParamRole { weight, bias, running_mean, running_var };

const char* param_role_name(ParamRole role) noexcept;

template <typename T>
struct LayerParams {
  Tensor<T> weight;  // linear [out, in]; conv [out, in, k, k]; batch-norm gamma [C]
  Tensor<T> bias;    // [out]; batch-norm beta
  Tensor<T> running_mean;  // batch-norm only
  Tensor<T> running_var;
};

enum class Mode { train, eval };

template <typename T>
struct ForwardPass {
  Record<T> record;
  typename Record<T>::ValueId output = 0;
  std::vector<typename Record<T>::ValueId> layer_outputs;  // one per layer
};

template <typename T>
class Model {
 public:
  Model(ModelLayout layout, std::uint64_t seed);

  const ModelLayout& layout() const noexcept { return layout_; }
  std::uint64_t seed() const noexcept { return seed_; }

  std::vector<LayerParams<T>>& params() noexcept { return params_; }
  const std::vector<LayerParams<T>>& params() const noexcept { return params_; }
  const Tensor<T>& parameter(const std::string& layer_id, ParamRole role) const;
  Tensor<T>& parameter(const std::string& layer_id, ParamRole role);
  std::size_t parameter_count() const;

  /// Records a forward pass over x: [B, ...input_shape]. In train mode
  /// batch-norm uses batch statistics; in eval mode running statistics.
  ForwardPass<T> forward(const Tensor<T>& x, Mode mode, bool keep_intermediates = true) const;

  /// Folds the batch statistics of a train-mode pass into the running
  /// statistics of every batch-norm channel the mask leaves live.
  void update_running_stats(const ForwardPass<T>& pass, const FreezeMask& mask, double momentum = 0.1);

  friend bool operator==(const Model& a, const Model& b) {
    if (a.params_.size() != b.params_.size()) return false;
    for (std::size_t i = 0; i < a.params_.size(); ++i) {
      const auto& x = a.params_[i];
      const auto& y = b.params_[i];
      if (!(x.weight == y.weight && x.bias == y.bias && x.running_mean == y.running_mean &&
            x.running_var == y.running_var)) {
        return false;
      }
    }
    return true;
  }

 private:
  ModelLayout layout_;
  std::uint64_t seed_;
  std::vector<LayerParams<T>> params_;
};

/// Kaiming-normal weights (std = sqrt(2 / fan_in)), zero biases, unit
/// batch-norm scale. Deterministic in seed; identical values for float and
/// double up to the final rounding.
template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint64_t seed);

/// Post-activation output of one tracked neuron over the batch, flattened
/// sample-major then row-major: B * H * W values for a conv channel.
template <typename T>
Tensor<T> neuron_output_view(const Model<T>& model, const ForwardPass<T>& pass, const NeuronId& id);

// Checkpoints: <stem>.bin holds raw little-endian tensor payloads back to
// back; <stem>.manifest is the text index. See README for the layout.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& stem);

/// Loads parameters into a model built from the same architecture. Throws
/// IoError/DataError on missing files, precision or shape mismatch.
template <typename T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& stem);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace neq

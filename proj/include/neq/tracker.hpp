#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neq/model.hpp"
#include "neq/tensor.hpp"

namespace neq {

struct TrackerConfig {
  double mu_eq = 0.5;
  double epsilon = 0.001;
  int probe_size = 50;

  /// Throws ConfigError on out-of-range values. Returns warnings; mu_eq
  /// above 0.5 is legal but lets |v| grow past 2 on adversarial inputs.
  std::vector<std::string> validate() const;
};

template <typename T>
struct NeuronSignature {
  NeuronId neuron;
  int epoch = 0;
  std::vector<T> values;  // unit L2 norm, or all zero when `zero` is set
  bool zero = false;
};

/// Normalizes raw outputs (norm taken in double). An all-zero input yields a
/// zero-flagged signature.
template <typename T>
NeuronSignature<T> make_signature(const NeuronId& neuron, int epoch, std::span<const T> raw);

/// Signatures of every tracked neuron, in tracked_neurons() order, from an
/// eval-mode pass over the probe set [P, ...input_shape].
template <typename T>
std::vector<NeuronSignature<T>> extract_signatures(const Model<T>& model, const Tensor<T>& probe, int epoch);

/// Cosine similarity of consecutive-epoch signatures, accumulated in double
/// and clamped to [-1, 1]. Both zero-flagged gives 1, exactly one gives 0.
template <typename T>
double phi(const NeuronSignature<T>& current, const NeuronSignature<T>& previous);

struct EquilibriumState {
  NeuronId neuron;
  std::optional<double> prev_phi;
  std::optional<double> velocity;
  std::optional<double> delta_phi;  // last variation, kept for diagnostics
  bool frozen = false;
};

/// v = (phi_t - prev_phi) - mu_eq * v_prev with v_prev = 0 when absent.
/// Stores phi_t as the new prev_phi. Throws StateError without prev_phi.
double update_velocity(EquilibriumState& state, double phi_t, double mu_eq);

/// Velocity at index t straight from the similarity history
/// history[0..t], using the explicit alternating-sign sum (two-term
/// difference when mu_eq == 0).
double closed_form_velocity(std::span<const double> history, double mu_eq, std::size_t t);

/// Frozen flag per state: |v| < epsilon, or v exactly 0. States without a
/// velocity are live.
/// Updates state.frozen and returns the flags in state order.
std::vector<bool> select_nonequilibrium(std::span<EquilibriumState> states, double epsilon);

struct NeuronDiagnostics {
  NeuronId neuron;
  std::optional<double> phi;
  std::optional<double> delta_phi;
  std::optional<double> velocity;
  bool frozen = false;
};

/// Columns: layer_id,neuron_index,phi,delta_phi,velocity,frozen. Absent
/// quantities are empty cells.
void write_diagnostics_csv(const std::filesystem::path& path, const ModelLayout& layout,
                           std::span<const NeuronDiagnostics> rows);

template <typename T>
class Tracker {
 public:
  struct StepResult {
    FreezeMask mask;
    std::vector<NeuronDiagnostics> diagnostics;
  };

  Tracker(const ModelLayout& layout, TrackerConfig config);

  /// Runs one evaluation after `epoch` completed epochs. Epochs must be
  /// consecutive starting at 1.
  StepResult step(const Model<T>& model, const Tensor<T>& probe, int epoch);
  /// Same, from precomputed signatures (tracked_neurons() order).
  StepResult step(std::vector<NeuronSignature<T>> signatures, int epoch);

  const TrackerConfig& config() const noexcept { return config_; }
  const std::vector<EquilibriumState>& states() const noexcept { return states_; }
  const std::vector<NeuronSignature<T>>& signatures() const noexcept { return signatures_; }
  int last_epoch() const noexcept { return last_epoch_; }

  /// Signature values currently held: probe_size * sum of per-neuron output
  /// sizes once the first step has run.
  std::size_t stored_values() const noexcept;
  /// Scalars held per neuron besides the signature (phi, v, delta, flags).
  static constexpr std::size_t scalars_per_neuron = 4;

 private:
  ModelLayout layout_;
  TrackerConfig config_;
  std::vector<NeuronId> neurons_;
  std::vector<EquilibriumState> states_;
  std::vector<NeuronSignature<T>> signatures_;
  int last_epoch_ = 0;
};

extern template class Tracker<float>;
extern template class Tracker<double>;

}  // namespace neq

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "neq/data.hpp"
#include "neq/model.hpp"
#include "neq/optim.hpp"
#include "neq/policy.hpp"
#include "neq/schedule.hpp"
#include "neq/tracker.hpp"

namespace neq {

enum class PolicyKind { none, neq, stochastic, replay };

const char* policy_name(PolicyKind kind) noexcept;
/// Throws ConfigError("policy") on unknown names.
PolicyKind parse_policy(const std::string& name);

struct PolicyConfig {
  PolicyKind kind = PolicyKind::neq;
  TrackerConfig tracker;
  double p = 0.5;       // stochastic freeze probability
  MaskSequence replay;  // masks by epoch for the replay policy
};

struct TrainSpec {
  ArchSpec arch;
  int epochs = 60;
  int batch_size = 100;
  OptimizerConfig optimizer;
  Schedule schedule{0.1, {{24, 10.0}, {36, 10.0}}};
  PolicyConfig policy;
  std::uint64_t seed = 0;
  bool include_optimizer_flops = true;

  void validate() const;
};

struct MetricsRecord {
  int epoch = 0;
  double bprop_flops_mean = 0.0;
  double bprop_flops_std = 0.0;
  std::int64_t updated_neurons = 0;
  double updated_fraction = 0.0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

template <typename T>
struct StepView {
  int epoch;
  std::size_t step;
  const ForwardPass<T>& pass;
  const Tensor<T>& loss_gradient;
  const GradientSet<T>& grads;
  const FreezeMask& mask;
};

template <typename T>
struct TrainHooks {
  /// After backward, before the optimizer step.
  std::function<void(const StepView<T>&)> on_step;
  /// After the epoch's last optimizer step, before evaluation.
  std::function<void(int epoch, const Model<T>&, const OptimizerState<T>&, const FreezeMask&)> on_epoch_end;
  /// Every tracker evaluation (NEq policy only).
  std::function<void(int epoch, const typename Tracker<T>::StepResult&)> on_tracker;
};

template <typename T>
struct TrainResult {
  std::vector<MetricsRecord> log;
  Model<T> model;
  OptimizerState<T> optimizer;
  MaskSequence masks;                                   // mask applied in each epoch
  std::vector<std::vector<std::int64_t>> iteration_flops;  // per epoch, per iteration
};

/// Fraction of correctly classified samples, evaluated in eval mode.
template <typename T>
double evaluate_accuracy(const Model<T>& model, const Dataset& data);

/// Full training run: per epoch, train with the current mask, evaluate the
/// test set, then let the policy choose the next mask.
template <typename T>
TrainResult<T> run_training(const TrainSpec& spec, const DataSplit& data, const TrainHooks<T>& hooks = {});

}  // namespace neq

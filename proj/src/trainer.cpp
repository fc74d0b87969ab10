#include "neq/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "neq/errors.hpp"
#include "neq/flops.hpp"
#include "neq/loss.hpp"

namespace neq {

const char* policy_name(PolicyKind kind) noexcept {
  switch (kind) {
    case PolicyKind::none: return "none";
    case PolicyKind::neq: return "neq";
    case PolicyKind::stochastic: return "stochastic";
    case PolicyKind::replay: return "replay";
  }
  return "?";
}

PolicyKind parse_policy(const std::string& name) {
  for (auto k : {PolicyKind::none, PolicyKind::neq, PolicyKind::stochastic, PolicyKind::replay}) {
    if (name == policy_name(k)) return k;
  }
  throw ConfigError("policy", "unknown policy '" + name + "' (expected none, neq, stochastic or replay)");
}

void TrainSpec::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  optimizer.validate();
  schedule.validate();
  if (policy.kind == PolicyKind::neq) policy.tracker.validate();
  if (policy.kind == PolicyKind::stochastic && !(policy.p >= 0.0 && policy.p <= 1.0)) {
    throw ConfigError("p", "must lie in [0, 1]");
  }
}

template <typename T>
double evaluate_accuracy(const Model<T>& model, const Dataset& data) {
  if (data.size() == 0) throw DataError("cannot evaluate on an empty dataset");
  constexpr std::size_t chunk = 500;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    idx.resize(std::min(chunk, data.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto pass = model.forward(data.batch<T>(idx), Mode::eval, false);
    correct += count_correct(pass.record.value(pass.output),
                             std::span<const std::int32_t>(data.y.data() + start, idx.size()));
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
TrainResult<T> run_training(const TrainSpec& spec, const DataSplit& data, const TrainHooks<T>& hooks) {
  spec.validate();
  const Dataset& train = data.train;
  train.validate();
  if (train.sample_shape != spec.arch.input_shape) {
    throw DataError("dataset samples have shape " + to_string(train.sample_shape) + " but the model expects " +
                    to_string(spec.arch.input_shape));
  }
  if (train.classes != spec.arch.classes) throw DataError("dataset class count does not match the model");
  const auto B = static_cast<std::size_t>(spec.batch_size);
  // Incomplete final batches are dropped so every iteration has the same cost.
  const std::size_t steps = train.size() / B;
  if (steps == 0) throw DataError("training set is smaller than one batch");
  if (data.test.size() == 0) throw DataError("test set is empty");

  TrainResult<T> result{{}, build_model<T>(spec.arch, spec.seed), {}, {}, {}};
  Model<T>& model = result.model;
  const ModelLayout& layout = model.layout();
  result.optimizer = make_optimizer_state(model, spec.optimizer.kind);
  const auto costs = layer_costs(
      layout, spec.optimizer.kind == OptimizerKind::sgd ? kSgdFlopsPerParam : kAdamFlopsPerParam);
  const std::size_t tracked = layout.tracked_neuron_count();

  std::optional<Tracker<T>> tracker;
  Tensor<T> probe;
  if (spec.policy.kind == PolicyKind::neq) {
    if (data.probe.size() == 0) throw DataError("NEq policy needs a probe set");
    if (data.probe.sample_shape != spec.arch.input_shape) throw DataError("probe samples do not match the model");
    tracker.emplace(layout, spec.policy.tracker);
    probe = data.probe.all<T>();
  }
  auto policy_mask = [&](int epoch) {
    switch (spec.policy.kind) {
      case PolicyKind::stochastic:
        return stochastic_mask(layout, spec.policy.p, derive_seed(spec.seed, streams::mask, epoch));
      case PolicyKind::replay: return replay_mask(spec.policy.replay, layout, epoch);
      default: return layout.all_live_mask();
    }
  };

  FreezeMask mask = policy_mask(1);
  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = spec.schedule.lr_at(epoch);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(derive_seed(spec.seed, streams::shuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const std::int64_t iter_flops =
        bprop_flops(costs, layout, mask, spec.batch_size, spec.include_optimizer_flops);
    std::vector<std::int64_t> flops(steps, iter_flops);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::span<const std::size_t> idx(order.data() + s * B, B);
      auto x = train.batch<T>(idx);
      std::vector<std::int32_t> labels(B);
      for (std::size_t b = 0; b < B; ++b) labels[b] = train.y[idx[b]];
      auto pass = model.forward(x, Mode::train);
      auto loss = softmax_cross_entropy(pass.record.value(pass.output), labels);
      if (!std::isfinite(loss.loss)) {
        throw NonFiniteError("loss is not finite at epoch " + std::to_string(epoch) + ", step " + std::to_string(s + 1));
      }
      loss_sum += loss.loss;
      auto grads = pass.record.backward(pass.output, loss.gradient, mask.layers);
      if (hooks.on_step) hooks.on_step(StepView<T>{epoch, s, pass, loss.gradient, grads, mask});
      optimizer_step(model, result.optimizer, grads, mask, lr, spec.optimizer);
      model.update_running_stats(pass, mask);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, model, result.optimizer, mask);

    MetricsRecord rec;
    rec.epoch = epoch;
    const auto summary = epoch_summary(flops);
    rec.bprop_flops_mean = summary.mean;
    rec.bprop_flops_std = summary.stddev;
    rec.updated_neurons = static_cast<std::int64_t>(layout.updated_tracked_count(mask));
    rec.updated_fraction = tracked ? static_cast<double>(rec.updated_neurons) / static_cast<double>(tracked) : 1.0;
    rec.train_loss = loss_sum / static_cast<double>(steps);
    rec.test_accuracy = evaluate_accuracy(model, data.test);
    rec.lr = lr;
    result.masks.emplace(epoch, mask);
    result.iteration_flops.push_back(std::move(flops));

    if (epoch < spec.epochs || tracker) {
      if (tracker) {
        auto step = tracker->step(model, probe, epoch);
        if (hooks.on_tracker) hooks.on_tracker(epoch, step);
        mask = std::move(step.mask);
      } else {
        mask = policy_mask(epoch + 1);
      }
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(rec);
  }
  return result;
}

template double evaluate_accuracy(const Model<float>&, const Dataset&);
template double evaluate_accuracy(const Model<double>&, const Dataset&);
template TrainResult<float> run_training(const TrainSpec&, const DataSplit&, const TrainHooks<float>&);
template TrainResult<double> run_training(const TrainSpec&, const DataSplit&, const TrainHooks<double>&);

}  // namespace neq

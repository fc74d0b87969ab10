#include <map>

#include "doctest.h"
#include "neq/config.hpp"
#include "neq/errors.hpp"
#include "neq/flops.hpp"
#include "neq/metrics.hpp"
#include "neq/trainer.hpp"

using namespace neq;

namespace {

// 600 rings images: 300 train, 50 probe, 250 test; 6 steps of 50 per epoch.
TrainConfig small(nlohmann::json j = {}) {
  if (!j.contains("n_samples")) j["n_samples"] = 600;
  if (!j.contains("batch_size")) j["batch_size"] = 50;
  if (!j.contains("epochs")) j["epochs"] = 8;
  return config_from_json(j);
}

struct Run {
  TrainConfig config;
  DataSplit data;
  TrainResult<float> result;
};

Run run(TrainConfig c, const TrainHooks<float>& hooks = {}) {
  auto data = load_data(c);
  auto result = run_training<float>(c.spec, data, hooks);
  return {std::move(c), std::move(data), std::move(result)};
}

/// Parameter bytes owned by one neuron: weight row, bias, running statistics.
std::vector<float> neuron_params(const Model<float>& m, const NeuronId& id) {
  const auto& p = m.params()[id.layer];
  const std::size_t per = p.weight.size() / p.bias.size();
  std::vector<float> out(p.weight.data() + id.index * per, p.weight.data() + (id.index + 1) * per);
  out.push_back(p.bias[id.index]);
  if (!p.running_mean.empty()) {
    out.push_back(p.running_mean[id.index]);
    out.push_back(p.running_var[id.index]);
  }
  return out;
}

std::vector<float> neuron_buffers(const Model<float>& m, const OptimizerState<float>& st, const NeuronId& id) {
  const auto q = *m.layout().param_ordinal(id.layer);
  const auto& s = st.slots[q];
  const std::size_t per = s.first_weight.size() / s.first_bias.size();
  std::vector<float> out(s.first_weight.data() + id.index * per, s.first_weight.data() + (id.index + 1) * per);
  out.push_back(s.first_bias[id.index]);
  return out;
}

int unfrozen_after(const TrainResult<float>& r, int milestone) {
  const auto& layout = r.model.layout();
  int n = 0;
  for (const auto& id : layout.tracked_neurons()) {
    if (!layout.frozen(r.masks.at(milestone), id) || !layout.frozen(r.masks.at(milestone + 1), id)) continue;
    for (int e = milestone + 2; e <= milestone + 4; ++e) {
      if (!layout.frozen(r.masks.at(e), id)) {
        ++n;
        break;
      }
    }
  }
  return n;
}

}  // namespace

TEST_CASE("policy none keeps the baseline cost every epoch") {
  auto r = run(small({{"policy", "none"}})).result;
  const auto& layout = r.model.layout();
  const double baseline = static_cast<double>(bprop_flops(layer_costs(layout), layout, layout.all_live_mask(), 50));
  for (const auto& rec : r.log) {
    CHECK(rec.bprop_flops_mean == baseline);
    CHECK(rec.bprop_flops_std == 0.0);
    CHECK(rec.updated_fraction == 1.0);
  }
  // summary agrees with the per-iteration log
  for (std::size_t e = 0; e < r.log.size(); ++e) {
    CHECK(r.iteration_flops[e].size() == 6);
    CHECK(epoch_summary(r.iteration_flops[e]).mean == r.log[e].bprop_flops_mean);
  }
}

TEST_CASE("zero learning rate with NEq freezes every tracked neuron") {
  // without batch-norm the network is exactly stationary
  auto r = run(small({{"lr", 0.0}, {"batchnorm", false}, {"epochs", 6}})).result;
  // classifier alone: 8 inputs, 10 outputs, batch 50, SGD 6 FLOPs per parameter
  const double floor = 2.0 * 8 * 10 * 50 + 6.0 * 9 * 10;
  for (const auto& rec : r.log) {
    if (rec.epoch <= 3) {
      CHECK(rec.updated_fraction == 1.0);
    } else {
      CHECK(rec.updated_neurons == 0);
      CHECK(rec.bprop_flops_mean == floor);
    }
  }
}

TEST_CASE("first epoch trains every neuron except under the stochastic policy") {
  for (const char* policy : {"neq", "none"}) {
    auto r = run(small({{"policy", policy}, {"epochs", 2}})).result;
    CHECK(r.log.front().updated_fraction == 1.0);
  }
  auto s = run(small({{"policy", "stochastic"}, {"p", 0.5}, {"epochs", 2}})).result;
  CHECK(s.log.front().updated_fraction < 1.0);
  CHECK(s.log.front().updated_fraction > 0.0);
}

TEST_CASE("frozen parameters and buffers stay bit-identical while frozen") {
  std::map<int, Model<float>> models;
  std::map<int, OptimizerState<float>> states;
  std::map<int, FreezeMask> masks;
  TrainHooks<float> hooks;
  hooks.on_epoch_end = [&](int e, const Model<float>& m, const OptimizerState<float>& s, const FreezeMask& mask) {
    models.emplace(e, m);
    states.emplace(e, s);
    masks.emplace(e, mask);
  };
  auto r = run(small({{"epochs", 14}, {"epsilon", 0.01}}), hooks).result;
  const auto& layout = r.model.layout();
  std::size_t frozen_checks = 0;
  for (int e = 2; e <= 14; ++e) {
    for (const auto& id : layout.tracked_neurons()) {
      if (!layout.frozen(masks.at(e), id)) continue;
      ++frozen_checks;
      CHECK(neuron_params(models.at(e), id) == neuron_params(models.at(e - 1), id));
      CHECK(neuron_buffers(models.at(e), states.at(e), id) == neuron_buffers(models.at(e - 1), states.at(e - 1), id));
    }
  }
  CHECK(frozen_checks > 50);
}

TEST_CASE("replaying the masks of a run reproduces it exactly") {
  for (const char* policy : {"neq", "stochastic"}) {
    auto a = run(small({{"policy", policy}, {"epochs", 10}, {"p", 0.3}}));
    auto replay_cfg = a.config;
    replay_cfg.spec.policy.kind = PolicyKind::replay;
    replay_cfg.spec.policy.replay = a.result.masks;
    auto b = run_training<float>(replay_cfg.spec, a.data);
    CHECK(format_metrics(a.result.log) == format_metrics(b.log));
    CHECK(a.result.model == b.model);
    CHECK(a.result.optimizer == b.optimizer);
  }
}

TEST_CASE("identical config and seed give identical metrics") {
  auto a = run(small({{"seed", 3}})).result;
  auto b = run(small({{"seed", 3}})).result;
  CHECK(format_metrics(a.log) == format_metrics(b.log));
  auto c = run(small({{"seed", 4}})).result;
  CHECK(format_metrics(a.log) != format_metrics(c.log));
}

TEST_CASE("learning-rate increase after widespread freezing reactivates neurons") {
  // lr 0.01, multiplied by 10 after epoch 15
  nlohmann::json j{{"lr", 0.01}, {"milestones", {15}}, {"epochs", 20}, {"seed", 2}};
  j["lr_divisor"] = 0.1;
  auto bumped = run(small(j)).result;
  j["lr_divisor"] = 1.0;
  auto control = run(small(j)).result;
  CHECK(bumped.log[14].updated_fraction <= 0.5);
  CHECK(bumped.log[15].lr == doctest::Approx(0.1));
  const int woken = unfrozen_after(bumped, 15);
  CHECK(woken >= 1);
  CHECK(woken > unfrozen_after(control, 15));
}

TEST_CASE("training errors") {
  auto c = small();
  auto data = load_data(c);
  auto spec = c.spec;
  spec.arch.classes = 3;
  CHECK_THROWS_AS(run_training<float>(spec, data), DataError);
  spec = c.spec;
  spec.batch_size = 1000;
  CHECK_THROWS_AS(run_training<float>(spec, data), DataError);
  spec = c.spec;
  spec.schedule.initial_lr = 1e6;
  CHECK_THROWS_AS(run_training<float>(spec, data), NonFiniteError);
}

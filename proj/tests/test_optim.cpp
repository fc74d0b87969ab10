#include <cmath>
#include <optional>

#include "doctest.h"
#include "neq/errors.hpp"
#include "neq/optim.hpp"

using namespace neq;

namespace {

// One linear layer with `n` neurons of `in` weights each.
Model<double> tiny(int in, int n) {
  ModelLayout layout(ArchSpec{"mlp", {in}, n, {}, false}, {{LayerKind::linear, "fc", in, n}});
  return Model<double>(layout, 1);
}

GradientSet<double> grads_for(std::vector<std::int32_t> rows, std::vector<double> w, std::vector<double> b) {
  if (rows.empty()) return GradientSet<double>({std::nullopt}, {false});
  const auto n = static_cast<std::int64_t>(rows.size());
  const auto per = static_cast<std::int64_t>(w.size()) / n;
  LayerGradient<double> g{std::move(rows), Tensor<double>({n, per}, std::move(w)), Tensor<double>({n}, std::move(b))};
  return GradientSet<double>({std::move(g)}, {false});
}

}  // namespace

TEST_CASE("plain SGD step") {
  auto m = tiny(1, 1);
  m.params()[0].weight[0] = 1.0;
  m.params()[0].bias[0] = 0.0;
  auto st = make_optimizer_state(m, OptimizerKind::sgd);
  sgd_step(m, st, grads_for({0}, {0.5}, {0.0}), m.layout().all_live_mask(), 0.1, 0.0, 0.0);
  CHECK(m.params()[0].weight[0] == doctest::Approx(0.95).epsilon(1e-15));
}

TEST_CASE("momentum SGD on a quadratic follows the hand-unrolled recurrence") {
  // loss w^2 / 2, so the gradient is w
  auto m = tiny(1, 1);
  m.params()[0].weight[0] = 1.0;
  auto st = make_optimizer_state(m, OptimizerKind::sgd);
  const auto live = m.layout().all_live_mask();
  const double expected[3] = {0.9, 0.72, 0.486};  // buf: 1, 1.8, 2.34
  for (double want : expected) {
    const double w = m.params()[0].weight[0];
    sgd_step(m, st, grads_for({0}, {w}, {0.0}), live, 0.1, 0.9, 0.0);
    CHECK(m.params()[0].weight[0] == doctest::Approx(want).epsilon(1e-14));
  }
  CHECK(st.slots[0].first_weight[0] == doctest::Approx(2.34).epsilon(1e-14));
}

TEST_CASE("weight decay is added to the gradient") {
  auto m = tiny(1, 1);
  m.params()[0].weight[0] = 2.0;
  auto st = make_optimizer_state(m, OptimizerKind::sgd);
  sgd_step(m, st, grads_for({0}, {0.0}, {0.0}), m.layout().all_live_mask(), 0.5, 0.0, 0.1);
  CHECK(m.params()[0].weight[0] == doctest::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("frozen neurons and layers are left bit-identical") {
  for (auto kind : {OptimizerKind::sgd, OptimizerKind::adam}) {
    auto m = tiny(3, 2);
    auto st = make_optimizer_state(m, kind);
    auto mask = m.layout().all_live_mask();
    OptimizerConfig cfg;
    cfg.kind = kind;

    // prime the buffers so they hold non-zero values
    optimizer_step(m, st, grads_for({0, 1}, {1, 2, 3, 4, 5, 6}, {1, -1}), mask, 0.1, cfg);

    mask.layers[0].set_frozen(1, true);
    const auto w_before = m.params()[0].weight;
    const auto b_before = m.params()[0].bias;
    const auto st_before = st;
    for (int step = 0; step < 10; ++step) {
      optimizer_step(m, st, grads_for({0}, {0.3, -0.2, 0.1}, {0.05}), mask, 0.1, cfg);
    }
    for (int i = 3; i < 6; ++i) CHECK(m.params()[0].weight[i] == w_before[i]);
    CHECK(m.params()[0].bias[1] == b_before[1]);
    for (int i = 3; i < 6; ++i) {
      CHECK(st.slots[0].first_weight[i] == st_before.slots[0].first_weight[i]);
      if (kind == OptimizerKind::adam) CHECK(st.slots[0].second_weight[i] == st_before.slots[0].second_weight[i]);
    }
    CHECK(m.params()[0].weight[0] != w_before[0]);
    if (kind == OptimizerKind::adam) {
      CHECK(st.slots[0].steps == std::vector<std::int64_t>{11, 1});
    }

    // whole layer frozen: no gradient at all
    const auto m_before = m;
    const auto s_before = st;
    optimizer_step(m, st, grads_for({}, {}, {}), m.layout().all_frozen_mask(), 0.1, cfg);
    CHECK(m == m_before);
    CHECK(st == s_before);
  }
}

TEST_CASE("Adam first step by hand") {
  auto m = tiny(1, 1);
  m.params()[0].weight[0] = 1.0;
  m.params()[0].bias[0] = 0.0;
  auto st = make_optimizer_state(m, OptimizerKind::adam);
  const auto live = m.layout().all_live_mask();
  adam_step(m, st, grads_for({0}, {0.5}, {0.0}), live, 0.001, 0.9, 0.999, 1e-8, 0.0);
  // m = 0.05, v = 0.00025; corrected 0.5 and 0.25, so the step is 0.001 * 0.5 / (0.5 + 1e-8)
  CHECK(st.slots[0].first_weight[0] == doctest::Approx(0.05).epsilon(1e-14));
  CHECK(st.slots[0].second_weight[0] == doctest::Approx(0.00025).epsilon(1e-14));
  CHECK(m.params()[0].weight[0] == doctest::Approx(1.0 - 0.001 * 0.5 / (0.5 + 1e-8)).epsilon(1e-15));
  CHECK(m.params()[0].bias[0] == 0.0);

  // second step, gradient -0.2: m = 0.025, v = 0.00028975
  const double w1 = m.params()[0].weight[0];
  adam_step(m, st, grads_for({0}, {-0.2}, {0.0}), live, 0.001, 0.9, 0.999, 1e-8, 0.0);
  const double mhat = 0.025 / 0.19, vhat = 0.00028975 / 0.001999;
  CHECK(m.params()[0].weight[0] == doctest::Approx(w1 - 0.001 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-12));
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  auto m = tiny(4, 3);
  const auto before = m;
  auto st = make_optimizer_state(m, OptimizerKind::adam);
  for (int i = 0; i < 20; ++i) {
    adam_step(m, st, grads_for({0, 1, 2}, std::vector<double>(12, 0.0), {0, 0, 0}), m.layout().all_live_mask(), 0.001,
              0.9, 0.999, 1e-8, 0.0);
  }
  CHECK(m == before);
}

TEST_CASE("gradient and mask must agree") {
  auto m = tiny(2, 2);
  auto st = make_optimizer_state(m, OptimizerKind::sgd);
  auto mask = m.layout().all_live_mask();
  CHECK_THROWS_AS(sgd_step(m, st, grads_for({0}, {1, 1}, {0}), mask, 0.1, 0.9, 0.0), StateError);
  CHECK_THROWS_AS(sgd_step(m, st, grads_for({}, {}, {}), mask, 0.1, 0.9, 0.0), StateError);
  CHECK_THROWS_AS(sgd_step(m, st, grads_for({0, 1}, {1, 1, 1, 1}, {0, 0}), m.layout().all_frozen_mask(), 0.1, 0.9, 0.0),
                  StateError);
  auto sgd_state = make_optimizer_state(m, OptimizerKind::sgd);
  CHECK_THROWS_AS(adam_step(m, sgd_state, grads_for({0, 1}, {1, 1, 1, 1}, {0, 0}), mask, 0.1, 0.9, 0.999, 1e-8, 0.0),
                  StateError);
}

TEST_CASE("optimizer config validation names the field") {
  OptimizerConfig c;
  c.momentum = 1.0;
  try {
    c.validate();
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "momentum");
  }
  c = {};
  c.beta2 = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

// Acceptance suite: one PASS/FAIL line per criterion.
//
// Usage: acceptance [--only 1,2,...] [--known-failures 11,...]
// Exit status is non-zero when a criterion fails that is not listed as a
// known failure. Known failures still print FAIL.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fd_oracle.hpp"
#include "neq/config.hpp"
#include "neq/flops.hpp"
#include "neq/kernels.hpp"
#include "neq/loss.hpp"
#include "neq/metrics.hpp"
#include "neq/trainer.hpp"

using namespace neq;
using nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[2048];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

template <typename T>
bool same_bytes(std::span<const T> a, std::span<const T> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0);
}

// ---------------------------------------------------------------------------
// Desk runs shared by criteria 6-11

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

/// The desk recipe is the config default; only the policy knobs vary.
TrainConfig desk_config(const json& overrides) { return config_from_json(overrides); }

struct DeskRun {
  std::vector<MetricsRecord> log;
  double final_accuracy = 0.0;
  double mean_flops = 0.0;     // per iteration over all epochs
  double mean_fraction = 0.0;  // updated fraction over all epochs
};

std::map<std::string, DeskRun> g_runs;
std::vector<std::pair<std::string, DeskRun>> g_neq_runs;  // every NEq run, for the first-epoch rule

DeskRun desk_run(const json& overrides) {
  const std::string key = overrides.dump();
  if (auto it = g_runs.find(key); it != g_runs.end()) return it->second;
  auto c = desk_config(overrides);
  auto data = load_data(c);
  auto r = run_training<float>(c.spec, data);
  DeskRun d;
  d.log = r.log;
  d.final_accuracy = r.log.back().test_accuracy;
  for (const auto& rec : r.log) {
    d.mean_flops += rec.bprop_flops_mean;
    d.mean_fraction += rec.updated_fraction;
  }
  d.mean_flops /= static_cast<double>(r.log.size());
  d.mean_fraction /= static_cast<double>(r.log.size());
  g_runs.emplace(key, d);
  if (c.spec.policy.kind == PolicyKind::neq) g_neq_runs.emplace_back(key, d);
  return d;
}

struct Arm {
  std::vector<DeskRun> runs;
  double acc_mean = 0, acc_std = 0, flops_mean = 0, fraction_mean = 0;
};

Arm arm(json overrides) {
  Arm a;
  for (auto s : kSeeds) {
    overrides["seed"] = s;
    a.runs.push_back(desk_run(overrides));
  }
  const double n = static_cast<double>(a.runs.size());
  for (const auto& r : a.runs) {
    a.acc_mean += r.final_accuracy / n;
    a.flops_mean += r.mean_flops / n;
    a.fraction_mean += r.mean_fraction / n;
  }
  for (const auto& r : a.runs) a.acc_std += (r.final_accuracy - a.acc_mean) * (r.final_accuracy - a.acc_mean);
  a.acc_std = std::sqrt(a.acc_std / (n - 1));
  return a;
}

json neq_arm(double eps) { return {{"policy", "neq"}, {"epsilon", eps}}; }
const json kBaseline{{"policy", "none"}};

// ---------------------------------------------------------------------------

Verdict velocity_oracle() {
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  std::size_t compared = 0;
  for (double mu : {0.0, 0.3, 0.5, 0.9}) {
    for (int h = 0; h < 1000; ++h) {
      std::vector<double> history(50);
      for (auto& p : history) p = u(rng);
      // recurrence driven from a zero similarity, the start the explicit sum assumes
      EquilibriumState st;
      st.prev_phi = 0.0;
      for (std::size_t t = 0; t < history.size(); ++t) {
        const double v = update_velocity(st, history[t], mu);
        if (mu == 0.0 && t == 0) continue;  // the two-term form starts at t = 1
        worst = std::max(worst, std::abs(v - closed_form_velocity(history, mu, t)));
        ++compared;
      }
    }
  }
  return {worst <= 1e-9, fmt("4000 histories x 50 steps (%zu values), max |recurrence - closed form| = %.3g (tol 1e-9)",
                             compared, worst)};
}

Verdict gradient_check() {
  struct Family {
    const char* name;
    ArchSpec arch;
  };
  const Family families[] = {
      {"linear", {"mlp", {5}, 3, {6, 4}, false}},
      {"conv", {"smallcnn", {2, 6, 6}, 3, {3, 4}, false}},
      {"batch-norm", {"smallcnn", {1, 6, 6}, 3, {3, 4}, true}},
      {"smallresnet", {"smallresnet", {1, 6, 6}, 3, {2, 3}, true, 1}},
  };
  std::mt19937_64 rng(99);
  std::string detail;
  bool ok = true;
  for (const auto& f : families) {
    double worst = 0.0;
    std::size_t coords = 0;
    for (int i = 0; i < 100; ++i) {
      auto m = build_model<double>(f.arch, static_cast<std::uint64_t>(1000 + i));
      testing::perturb_params(m, rng);
      auto x = testing::random_input(f.arch.input_shape, 4, rng);
      std::vector<std::int32_t> labels(4);
      for (auto& l : labels) l = static_cast<std::int32_t>(rng() % 3);
      auto r = testing::grad_check(m, x, labels, rng, 24);
      worst = std::max(worst, r.max_relative_error);
      coords += r.coords_checked;
    }
    ok = ok && worst < 1e-4;
    detail += fmt("%s%s: 100 instances, %zu coords, max rel err %.2g", detail.empty() ? "" : "; ", f.name, coords, worst);
  }
  return {ok, detail + " (tol 1e-4, step 1e-5, float64)"};
}

Verdict freeze_exactness() {
  auto c = desk_config({{"epochs", 20}, {"policy", "replay"}, {"replay_path", "<in memory>"}, {"seed", 11}});
  auto data = load_data(c);
  const auto layout = build_layout(c.spec.arch);
  const auto ids = layout.tracked_neurons();
  const std::size_t n_frozen = (ids.size() * 3 + 5) / 10;

  // exactly 30% of tracked neurons frozen, a fresh draw every 4 epochs
  std::mt19937_64 rng(5);
  MaskSequence seq;
  FreezeMask current;
  for (int e = 1; e <= 20; ++e) {
    if ((e - 1) % 4 == 0) {
      auto order = ids;
      std::shuffle(order.begin(), order.end(), rng);
      current = layout.all_live_mask();
      for (std::size_t i = 0; i < n_frozen; ++i) layout.set_frozen(current, order[i], true);
    }
    seq[e] = current;
  }
  c.spec.policy.replay = seq;

  Model<float> prev_model = build_model<float>(c.spec.arch, c.spec.seed);
  OptimizerState<float> prev_state = make_optimizer_state(prev_model, OptimizerKind::sgd);
  std::size_t param_checks = 0, param_bad = 0, grad_rows = 0, grad_bad = 0, steps = 0;
  const FreezeMask all_live = layout.all_live_mask();

  TrainHooks<float> hooks;
  hooks.on_step = [&](const StepView<float>& v) {
    ++steps;
    auto ungated = v.pass.record.backward(v.pass.output, v.loss_gradient, all_live.layers);
    for (std::size_t q = 0; q < layout.param_layers().size(); ++q) {
      const auto& g = v.grads.layer(q);
      const auto live = v.mask.layers[q].live_indices();
      if (!g) {
        grad_bad += !live.empty();
        continue;
      }
      if (g->neurons != live) ++grad_bad;
      const auto& full = *ungated.layer(q);
      for (std::size_t r = 0; r < g->neurons.size(); ++r) {
        const auto fr = *full.row_of(g->neurons[r]);
        ++grad_rows;
        if (!same_bytes(g->weight_row(r), full.weight_row(fr)) ||
            std::memcmp(&g->bias[r], &full.bias[fr], sizeof(float)) != 0) {
          ++grad_bad;
        }
      }
    }
  };
  hooks.on_epoch_end = [&](int epoch, const Model<float>& m, const OptimizerState<float>& st, const FreezeMask& mask) {
    for (const auto& id : ids) {
      if (!layout.frozen(mask, id)) continue;
      const auto& a = m.params()[id.layer];
      const auto& b = prev_model.params()[id.layer];
      const std::size_t per = a.weight.size() / a.bias.size();
      const auto q = *layout.param_ordinal(id.layer);
      const auto& sa = st.slots[q];
      const auto& sb = prev_state.slots[q];
      const std::size_t off = static_cast<std::size_t>(id.index) * per;
      bool same = same_bytes(a.weight.values().subspan(off, per), b.weight.values().subspan(off, per)) &&
                  same_bytes(a.bias.values().subspan(id.index, 1), b.bias.values().subspan(id.index, 1)) &&
                  same_bytes(sa.first_weight.values().subspan(off, per), sb.first_weight.values().subspan(off, per)) &&
                  same_bytes(sa.first_bias.values().subspan(id.index, 1), sb.first_bias.values().subspan(id.index, 1));
      if (!a.running_mean.empty()) {
        same = same && same_bytes(a.running_mean.values().subspan(id.index, 1), b.running_mean.values().subspan(id.index, 1)) &&
               same_bytes(a.running_var.values().subspan(id.index, 1), b.running_var.values().subspan(id.index, 1));
      }
      ++param_checks;
      param_bad += !same;
    }
    (void)epoch;
    prev_model = m;
    prev_state = st;
  };
  auto r = run_training<float>(c.spec, data, hooks);
  bool fraction_ok = true;
  for (const auto& rec : r.log) {
    fraction_ok = fraction_ok && rec.updated_neurons == static_cast<std::int64_t>(ids.size() - n_frozen);
  }
  const bool ok = param_bad == 0 && grad_bad == 0 && fraction_ok && param_checks > 0 && grad_rows > 0;
  return {ok, fmt("20 epochs, %zu of %zu neurons frozen per epoch: %zu frozen neuron-epochs checked (%zu changed); "
                  "%zu live gradient rows over %zu steps vs ungated backward (%zu differ)",
                  n_frozen, ids.size(), param_checks, param_bad, grad_rows, steps, grad_bad)};
}

Verdict scale_invariance() {
  // raw probe outputs of a real desk model over 10 epochs, in float64
  auto c = desk_config({{"epochs", 10}, {"policy", "none"}, {"seed", 3}});
  auto data = load_data(c);
  const auto probe = data.probe.all<double>();
  std::vector<std::vector<std::vector<double>>> raw;  // epoch, neuron, values
  TrainHooks<double> hooks;
  hooks.on_epoch_end = [&](int, const Model<double>& m, const OptimizerState<double>&, const FreezeMask&) {
    auto pass = m.forward(probe, Mode::eval);
    std::vector<std::vector<double>> per;
    for (const auto& id : m.layout().tracked_neurons()) {
      auto v = neuron_output_view(m, pass, id);
      per.emplace_back(v.values().begin(), v.values().end());
    }
    raw.push_back(std::move(per));
  };
  auto result = run_training<double>(c.spec, data, hooks);
  const auto& layout = result.model.layout();
  const auto ids = layout.tracked_neurons();

  auto drive = [&](const std::function<double(std::size_t)>& scale) {
    Tracker<double> t(layout, {0.5, 0.001, static_cast<int>(probe.dim(0))});
    std::vector<Tracker<double>::StepResult> out;
    for (std::size_t e = 0; e < raw.size(); ++e) {
      std::vector<NeuronSignature<double>> sigs;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        std::vector<double> v = raw[e][k];
        for (auto& x : v) x *= scale(k);
        sigs.push_back(make_signature<double>(ids[k], static_cast<int>(e + 1), v));
      }
      out.push_back(t.step(std::move(sigs), static_cast<int>(e + 1)));
    }
    return out;
  };
  const auto base = drive([](std::size_t) { return 1.0; });
  const double lambdas[] = {0.1, 3.7, 1000.0};
  double worst_phi = 0.0, worst_v = 0.0;
  std::size_t decisions = 0, flips = 0, frozen_seen = 0;
  auto compare = [&](const std::vector<Tracker<double>::StepResult>& other) {
    for (std::size_t e = 0; e < base.size(); ++e) {
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& a = base[e].diagnostics[k];
        const auto& b = other[e].diagnostics[k];
        if (a.phi.has_value() != b.phi.has_value() || a.velocity.has_value() != b.velocity.has_value()) ++flips;
        if (a.phi && b.phi) worst_phi = std::max(worst_phi, std::abs(*a.phi - *b.phi));
        if (a.velocity && b.velocity) worst_v = std::max(worst_v, std::abs(*a.velocity - *b.velocity));
        ++decisions;
        frozen_seen += a.frozen;
        flips += a.frozen != b.frozen;
      }
      flips += !(base[e].mask == other[e].mask);
    }
  };
  for (double l : lambdas) compare(drive([l](std::size_t) { return l; }));
  compare(drive([&](std::size_t k) { return lambdas[k % 3]; }));  // a different lambda per neuron
  const bool ok = worst_phi <= 1e-12 && worst_v <= 1e-12 && flips == 0;
  return {ok, fmt("desk model outputs over 10 epochs, lambda in {0.1, 3.7, 1000} and mixed per neuron: "
                  "max |dphi| %.2g, max |dv| %.2g (tol 1e-12), %zu decisions (%zu frozen), %zu changed",
                  worst_phi, worst_v, decisions, frozen_seen, flips)};
}

Verdict stability_bound() {
  auto run = [](const std::vector<double>& phis, double mu) {
    EquilibriumState st;
    st.prev_phi = phis.front();
    double worst = 0.0;
    for (std::size_t t = 1; t < phis.size(); ++t) worst = std::max(worst, std::abs(update_velocity(st, phis[t], mu)));
    return worst;
  };
  std::vector<double> alternating(400);
  for (std::size_t i = 0; i < alternating.size(); ++i) alternating[i] = static_cast<double>(i % 2);
  const double alt_half = run(alternating, 0.5);
  const double alt_high = run(alternating, 0.9);

  // random search over extreme and interior sequences as a second adversary
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double random_half = 0.0;
  for (int trial = 0; trial < 20000; ++trial) {
    std::vector<double> phis(60);
    for (auto& p : phis) p = trial % 2 ? static_cast<double>(rng() % 2) : u(rng);
    random_half = std::max(random_half, run(phis, 0.5));
  }
  const bool ok = alt_half <= 2.0 && random_half <= 2.0 && alt_high > 2.0;
  return {ok, fmt("mu 0.5: alternating 0/1 max |v| = %.15g, 20000 random sequences max |v| = %.6g (bound 2); "
                  "mu 0.9: alternating max |v| = %.6g (> 2 expected)",
                  alt_half, random_half, alt_high)};
}

Verdict first_epoch_rule() {
  std::size_t bad = 0;
  for (const auto& [key, run] : g_neq_runs) bad += run.log.front().updated_fraction != 1.0;
  return {!g_neq_runs.empty() && bad == 0,
          fmt("%zu NEq runs from this suite, %zu with epoch-1 updated fraction != 1.0", g_neq_runs.size(), bad)};
}

Verdict desk_trend() {
  const auto base = arm(kBaseline);
  const auto neq = arm(neq_arm(0.001));
  const double reduction = 1.0 - neq.flops_mean / base.flops_mean;
  const double gap = 100.0 * (neq.acc_mean - base.acc_mean);
  const bool ok = reduction >= 0.20 && std::abs(gap) <= 1.0;
  return {ok, fmt("5 seeds: baseline %.4gM FLOPs/iter, %.2f%% acc; NEq %.4gM (%+.1f%%), %.2f%% acc (%+.2f pt); "
                  "need reduction >= 20%% and |gap| <= 1.0 pt",
                  base.flops_mean / 1e6, 100 * base.acc_mean, neq.flops_mean / 1e6, -100 * reduction, 100 * neq.acc_mean,
                  gap)};
}

Verdict epsilon_monotonicity() {
  const double eps[] = {0.0001, 0.001, 0.01, 0.1};
  std::vector<Arm> arms;
  for (double e : eps) arms.push_back(arm(neq_arm(e)));
  bool monotone = true;
  std::string table;
  for (std::size_t i = 0; i < arms.size(); ++i) {
    if (i > 0) monotone = monotone && arms[i].flops_mean <= arms[i - 1].flops_mean;
    table += fmt("%seps %g: %.4gM, %.2f%%", i ? "; " : "", eps[i], arms[i].flops_mean / 1e6, 100 * arms[i].acc_mean);
  }
  // a drop larger than the equivalence band of the desk trend criterion
  const double drop = 100.0 * (arms[1].acc_mean - arms[3].acc_mean);
  return {monotone && drop >= 1.0,
          table + fmt(" | FLOPs non-increasing: %s; accuracy drop eps 0.1 vs 0.001 = %.2f pt (visible: >= 1.0 pt)",
                      monotone ? "yes" : "no", drop)};
}

Verdict stochastic_comparison() {
  const auto neq = arm(neq_arm(0.001));
  const double p = 1.0 - neq.fraction_mean;
  const auto sto = arm({{"policy", "stochastic"}, {"p", p}});
  const double gap = 100.0 * (neq.acc_mean - sto.acc_mean);
  const bool flops_ok = neq.flops_mean <= sto.flops_mean;
  const double noise = 100.0 * 2.0 * std::sqrt((neq.acc_std * neq.acc_std + sto.acc_std * sto.acc_std) / 5.0);
  std::string detail = fmt("p = 1 - NEq mean updated fraction = %.4f; NEq %.2f%% at %.4gM, stochastic %.2f%% at %.4gM; "
                           "accuracy margin %+.2f pt (need >= -0.2), two-standard-error noise %.2f pt",
                           p, 100 * neq.acc_mean, neq.flops_mean / 1e6, 100 * sto.acc_mean, sto.flops_mean / 1e6, gap,
                           noise);
  if (!flops_ok) return {false, detail + "; NEq FLOPs exceed stochastic"};
  if (gap >= -0.2) return {true, detail};
  if (-gap <= noise) return {true, detail + "; REPORT: shortfall within noise, not failed"};
  return {false, detail};
}

Verdict determinism() {
  auto c = desk_config({{"seed", 7}});
  auto data = load_data(c);
  std::vector<std::uint64_t> hashes_a, hashes_b;
  auto hasher = [](std::vector<std::uint64_t>& out) {
    TrainHooks<float> h;
    h.on_epoch_end = [&out](int, const Model<float>& m, const OptimizerState<float>& st, const FreezeMask&) {
      std::uint64_t x = 1469598103934665603ULL;
      auto mix = [&x](std::span<const float> v) {
        const auto* b = reinterpret_cast<const unsigned char*>(v.data());
        for (std::size_t i = 0; i < v.size_bytes(); ++i) x = (x ^ b[i]) * 1099511628211ULL;
      };
      for (const auto& p : m.params()) {
        mix(p.weight.values());
        mix(p.bias.values());
        mix(p.running_mean.values());
        mix(p.running_var.values());
      }
      for (const auto& s : st.slots) {
        mix(s.first_weight.values());
        mix(s.first_bias.values());
      }
      out.push_back(x);
    };
    return h;
  };
  auto a = run_training<float>(c.spec, data, hasher(hashes_a));
  auto b = run_training<float>(c.spec, data);
  const bool repeat = format_metrics(a.log) == format_metrics(b.log);

  auto replay = c;
  replay.spec.policy.kind = PolicyKind::replay;
  replay.spec.policy.replay = a.masks;
  auto r = run_training<float>(replay.spec, data, hasher(hashes_b));
  const bool replay_ok = format_metrics(a.log) == format_metrics(r.log) && hashes_a == hashes_b && a.model == r.model &&
                         a.optimizer == r.optimizer;

  std::string isa_note = "scalar/avx2 comparison skipped (no AVX2)";
  bool isa_ok = true;
  if (kernels::isa_available(kernels::Isa::avx2)) {
    const auto before = kernels::active_isa();
    kernels::set_active_isa(before == kernels::Isa::avx2 ? kernels::Isa::scalar : kernels::Isa::avx2);
    auto other = run_training<float>(c.spec, data);
    kernels::set_active_isa(before);
    isa_ok = format_metrics(a.log) == format_metrics(other.log);
    isa_note = fmt("scalar and avx2 kernels give identical CSVs: %s", isa_ok ? "yes" : "no");
  }
  std::size_t frozen_epochs = 0;
  for (const auto& rec : a.log) frozen_epochs += rec.updated_fraction < 1.0;
  return {repeat && replay_ok && isa_ok,
          fmt("repeat run CSV identical: %s; NEq mask replay (%zu epochs with freezing) identical CSV, per-epoch "
              "parameter and buffer hashes, final state: %s; ",
              repeat ? "yes" : "no", frozen_epochs, replay_ok ? "yes" : "no") +
              isa_note};
}

Verdict trend_shape() {
  const auto neq = arm(neq_arm(0.001));
  const int E = static_cast<int>(neq.runs.front().log.size());
  std::vector<double> mean(E + 1, 0.0);
  for (const auto& r : neq.runs) {
    for (const auto& rec : r.log) mean[rec.epoch] += rec.updated_fraction / static_cast<double>(neq.runs.size());
  }
  // epochs 2 .. 10% of E, and the last 10% of E
  const int tenth = std::max(2, static_cast<int>(std::lround(0.1 * E)));
  double early = 0.0, late = 0.0;
  for (int e = 2; e <= tenth; ++e) early += mean[e] / (tenth - 1);
  for (int e = E - tenth + 1; e <= E; ++e) late += mean[e] / tenth;
  const bool trend = late < early;

  const auto c = desk_config(neq_arm(0.001));
  bool milestones_ok = true;
  std::string ms;
  for (const auto& m : c.spec.schedule.milestones) {
    bool changed = false;
    for (int e = m.epoch + 1; e <= std::min(E, m.epoch + 3); ++e) changed = changed || mean[e] != mean[m.epoch];
    milestones_ok = milestones_ok && changed;
    ms += fmt("; milestone %d: %.4f -> %.4f %.4f %.4f (%s)", m.epoch, mean[m.epoch], mean[std::min(E, m.epoch + 1)],
              mean[std::min(E, m.epoch + 2)], mean[std::min(E, m.epoch + 3)], changed ? "changes" : "no change");
  }
  return {trend && milestones_ok,
          fmt("mean updated fraction epochs 2-%d = %.4f, epochs %d-%d = %.4f (%s)", tenth, early, E - tenth + 1, E, late,
              trend ? "decreasing" : "not decreasing") +
              ms};
}

std::set<int> parse_list(const char* s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(std::stoi(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only, known;
  for (int i = 1; i < argc; ++i) {
    if (!std::strcmp(argv[i], "--only") && i + 1 < argc) {
      only = parse_list(argv[++i]);
    } else if (!std::strcmp(argv[i], "--known-failures") && i + 1 < argc) {
      known = parse_list(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: %s [--only 1,2,...] [--known-failures N,...]\n", argv[0]);
      return 2;
    }
  }
  std::printf("kernels: %s\n", std::string(kernels::isa_name(kernels::active_isa())).c_str());
  std::fflush(stdout);

  // Criterion 6 reads the NEq runs of 7-9 and 11, so it goes last.
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria{
      {1, velocity_oracle}, {2, gradient_check},      {3, freeze_exactness},       {4, scale_invariance},
      {5, stability_bound}, {7, desk_trend},          {8, epsilon_monotonicity},   {9, stochastic_comparison},
      {10, determinism},    {11, trend_shape},        {6, first_epoch_rule},
  };
  int unexpected = 0;
  for (const auto& [id, fn] : criteria) {
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s [%.1fs]%s\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str(), secs,
                !v.pass && known.count(id) ? " (known failure, see notes)" : "");
    std::fflush(stdout);
    if (!v.pass && !known.count(id)) ++unexpected;
  }
  return unexpected ? 1 : 0;
}

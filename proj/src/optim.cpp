#include "neq/optim.hpp"

#include <cmath>

#include "neq/errors.hpp"
#include "neq/kernels.hpp"

namespace neq {

const char* optimizer_name(OptimizerKind kind) noexcept {
  return kind == OptimizerKind::sgd ? "sgd" : "adam";
}

void OptimizerConfig::validate() const {
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum", "must lie in [0, 1)");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0) || !std::isfinite(eps)) throw ConfigError("adam_eps", "must be > 0");
}

template <typename T>
OptimizerState<T> make_optimizer_state(const Model<T>& model, OptimizerKind kind) {
  OptimizerState<T> s;
  for (std::size_t li : model.layout().param_layers()) {
    const auto& p = model.params()[li];
    typename OptimizerState<T>::Slot slot;
    slot.first_weight = Tensor<T>(p.weight.shape());
    slot.first_bias = Tensor<T>(p.bias.shape());
    if (kind == OptimizerKind::adam) {
      slot.second_weight = Tensor<T>(p.weight.shape());
      slot.second_bias = Tensor<T>(p.bias.shape());
      slot.steps.assign(p.bias.size(), 0);
    }
    s.slots.push_back(std::move(slot));
  }
  return s;
}

namespace {

template <typename T>
const LayerGradient<T>* checked_gradient(const GradientSet<T>& grads, const GateVector& gate, std::size_t q,
                                         const std::string& layer_id) {
  const auto& lg = grads.layer(q);
  if (!gate.any_live()) {
    if (lg) throw StateError("gradient given for fully frozen layer '" + layer_id + "'");
    return nullptr;
  }
  if (!lg) throw StateError("missing gradient for live neurons of layer '" + layer_id + "'");
  if (lg->neurons != gate.live_indices()) {
    throw StateError("gradient rows of layer '" + layer_id + "' do not match the live neurons");
  }
  return &*lg;
}

template <typename T, typename F>
void for_each_live_row(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
                       F&& update) {
  const ModelLayout& layout = model.layout();
  layout.validate(mask);
  if (grads.layer_count() != layout.param_layers().size()) throw ShapeError("gradient set does not match the model");
  if (state.slots.size() != layout.param_layers().size()) throw ShapeError("optimizer state does not match the model");
  for (std::size_t q = 0; q < layout.param_layers().size(); ++q) {
    const std::size_t li = layout.param_layers()[q];
    const auto* lg = checked_gradient(grads, mask.layers[q], q, layout.layer(li).id);
    if (!lg) continue;
    auto& p = model.params()[li];
    auto& slot = state.slots[q];
    const std::size_t per = p.weight.size() / p.bias.size();
    if (lg->weights_per_neuron() != per) throw ShapeError("gradient row length mismatch");
    for (std::size_t r = 0; r < lg->neurons.size(); ++r) {
      const auto n = static_cast<std::size_t>(lg->neurons[r]);
      update(slot, n, std::span<T>(p.weight.data() + n * per, per), lg->weight_row(r), p.bias.data() + n, lg->bias[r],
             per);
    }
  }
}

}  // namespace

template <typename T>
void sgd_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
              double lr, double momentum, double weight_decay) {
  const T tlr = static_cast<T>(lr), tmom = static_cast<T>(momentum), twd = static_cast<T>(weight_decay);
  for_each_live_row(model, state, grads, mask,
                    [&](auto& slot, std::size_t n, std::span<T> w, std::span<const T> g, T* b, T gb, std::size_t per) {
                      kernels::sgd_momentum_update(w, std::span<T>(slot.first_weight.data() + n * per, per), g, tlr,
                                                   tmom, twd);
                      kernels::sgd_momentum_update(std::span<T>(b, 1), std::span<T>(slot.first_bias.data() + n, 1),
                                                   std::span<const T>(&gb, 1), tlr, tmom, twd);
                    });
}

template <typename T>
void adam_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
               double lr, double beta1, double beta2, double eps, double weight_decay) {
  for_each_live_row(model, state, grads, mask,
                    [&](auto& slot, std::size_t n, std::span<T> w, std::span<const T> g, T* b, T gb, std::size_t per) {
                      if (slot.steps.empty()) throw StateError("optimizer state was built for SGD");
                      const auto t = ++slot.steps[n];
                      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
                      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
                      auto one = [&](T& wv, T& m, T& v, T gv) {
                        const double gd = static_cast<double>(gv) + weight_decay * static_cast<double>(wv);
                        const double md = beta1 * static_cast<double>(m) + (1.0 - beta1) * gd;
                        const double vd = beta2 * static_cast<double>(v) + (1.0 - beta2) * gd * gd;
                        m = static_cast<T>(md);
                        v = static_cast<T>(vd);
                        wv = static_cast<T>(static_cast<double>(wv) - lr * (md / c1) / (std::sqrt(vd / c2) + eps));
                      };
                      for (std::size_t i = 0; i < per; ++i) {
                        one(w[i], slot.first_weight[n * per + i], slot.second_weight[n * per + i], g[i]);
                      }
                      one(*b, slot.first_bias[n], slot.second_bias[n], gb);
                    });
}

template <typename T>
void optimizer_step(Model<T>& model, OptimizerState<T>& state, const GradientSet<T>& grads, const FreezeMask& mask,
                    double lr, const OptimizerConfig& c) {
  if (c.kind == OptimizerKind::sgd) {
    sgd_step(model, state, grads, mask, lr, c.momentum, c.weight_decay);
  } else {
    adam_step(model, state, grads, mask, lr, c.beta1, c.beta2, c.eps, c.weight_decay);
  }
}

#define NEQ_INSTANTIATE(T)                                                                                     \
  template OptimizerState<T> make_optimizer_state(const Model<T>&, OptimizerKind);                            \
  template void sgd_step(Model<T>&, OptimizerState<T>&, const GradientSet<T>&, const FreezeMask&, double, double, \
                         double);                                                                              \
  template void adam_step(Model<T>&, OptimizerState<T>&, const GradientSet<T>&, const FreezeMask&, double, double, \
                          double, double, double);                                                             \
  template void optimizer_step(Model<T>&, OptimizerState<T>&, const GradientSet<T>&, const FreezeMask&, double,  \
                               const OptimizerConfig&);
NEQ_INSTANTIATE(float)
NEQ_INSTANTIATE(double)
#undef NEQ_INSTANTIATE

}  // namespace neq

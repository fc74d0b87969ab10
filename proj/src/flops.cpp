#include "neq/flops.hpp"

#include <cmath>

#include "neq/errors.hpp"

namespace neq {

std::vector<LayerCost> layer_costs(const ModelLayout& layout, std::int64_t optimizer_flops_per_param) {
  std::vector<LayerCost> out;
  out.reserve(layout.layers().size());
  for (std::size_t i = 0; i < layout.layers().size(); ++i) {
    const LayerSpec& l = layout.layer(i);
    const auto out_elems = static_cast<std::int64_t>(element_count(layout.output_shape(i)));
    const auto in_elems =
        static_cast<std::int64_t>(element_count(i == 0 ? layout.input_shape() : layout.output_shape(i - 1)));
    LayerCost c{l.id, l.kind};
    switch (l.kind) {
      case LayerKind::conv2d: {
        const Shape& s = layout.output_shape(i);
        c.forward = 2LL * l.kernel * l.kernel * l.in * l.out * s[1] * s[2];
        c.weight_grad = c.input_grad = c.forward;
        c.params_per_neuron = static_cast<std::int64_t>(l.kernel) * l.kernel * l.in + 1;
        break;
      }
      case LayerKind::linear:
        c.forward = 2LL * l.in * l.out;
        c.weight_grad = c.input_grad = c.forward;
        c.params_per_neuron = l.in + 1;
        break;
      case LayerKind::batchnorm2d:
        c.forward = c.weight_grad = c.input_grad = out_elems;
        c.params_per_neuron = 2;
        break;
      case LayerKind::relu:
      case LayerKind::add:
        c.forward = c.input_grad = out_elems;
        break;
      case LayerKind::max_pool:
      case LayerKind::avg_pool:
        c.forward = c.input_grad = in_elems;
        break;
      case LayerKind::flatten:
        break;
      default:
        throw ConfigError("architecture", "no cost model for layer '" + l.id + "'");
    }
    if (l.parameterized()) {
      c.neurons = l.neuron_count();
      c.optimizer_per_param = optimizer_flops_per_param;
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::int64_t bprop_flops(std::span<const LayerCost> costs, const ModelLayout& layout, const FreezeMask& mask,
                         std::int64_t batch_size, bool include_optimizer) {
  if (costs.size() != layout.layers().size()) throw ShapeError("cost list does not match the model");
  layout.validate(mask);
  std::int64_t total = 0;
  bool earlier_live = false;  // some parameterized layer before this one has a live neuron
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const LayerCost& c = costs[i];
    if (earlier_live) total += c.input_grad * batch_size;
    if (!layout.layer(i).parameterized()) continue;
    const auto live = static_cast<std::int64_t>(mask.layers[*layout.param_ordinal(i)].live_count());
    // Integer division is exact: weight-grad cost is a multiple of the neuron count.
    total += c.weight_grad / c.neurons * live * batch_size;
    if (include_optimizer) total += c.optimizer_per_param * c.params_per_neuron * live;
    earlier_live = earlier_live || live > 0;
  }
  return total;
}

FlopsSummary epoch_summary(std::span<const std::int64_t> per_iteration) {
  if (per_iteration.empty()) throw StateError("epoch summary over zero iterations");
  double sum = 0.0;
  for (auto v : per_iteration) sum += static_cast<double>(v);
  const double mean = sum / static_cast<double>(per_iteration.size());
  double sq = 0.0;
  for (auto v : per_iteration) sq += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  return {mean, std::sqrt(sq / static_cast<double>(per_iteration.size()))};
}

}  // namespace neq

#include "neq/model.hpp"

#include <cmath>
#include <random>
#include <string>

namespace neq {

const char* layer_kind_name(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::linear: return "linear";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm2d: return "batchnorm2d";
    case LayerKind::relu: return "relu";
    case LayerKind::max_pool: return "max_pool";
    case LayerKind::avg_pool: return "avg_pool";
    case LayerKind::flatten: return "flatten";
    case LayerKind::add: return "add";
  }
  return "unknown";
}

const char* param_role_name(ParamRole role) noexcept {
  switch (role) {
    case ParamRole::weight: return "weight";
    case ParamRole::bias: return "bias";
    case ParamRole::running_mean: return "running_mean";
    case ParamRole::running_var: return "running_var";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// layout

namespace {

std::int64_t conv_extent(std::int64_t in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

}  // namespace

ModelLayout::ModelLayout(ArchSpec arch, std::vector<LayerSpec> layers)
    : arch_(std::move(arch)), layers_(std::move(layers)) {
  Shape shape = arch_.input_shape;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const LayerSpec& l = layers_[i];
    auto fail = [&](const std::string& what) {
      throw ConfigError("architecture", "layer '" + l.id + "' (" + layer_kind_name(l.kind) + "): " + what +
                                            " for input " + to_string(shape));
    };
    switch (l.kind) {
      case LayerKind::linear:
        if (shape.size() != 1 || shape[0] != l.in) fail("expects " + std::to_string(l.in) + " features");
        shape = {l.out};
        break;
      case LayerKind::conv2d: {
        if (shape.size() != 3 || shape[0] != l.in) fail("expects " + std::to_string(l.in) + " channels");
        const auto h = conv_extent(shape[1], l.kernel, l.stride, l.padding);
        const auto w = conv_extent(shape[2], l.kernel, l.stride, l.padding);
        if (h < 1 || w < 1) fail("kernel does not fit");
        shape = {l.out, h, w};
        break;
      }
      case LayerKind::batchnorm2d:
        if (shape.size() != 3 || shape[0] != l.in || l.in != l.out) fail("channel mismatch");
        break;
      case LayerKind::relu: break;
      case LayerKind::max_pool:
      case LayerKind::avg_pool: {
        if (shape.size() != 3) fail("needs a spatial input");
        if (shape[1] < l.kernel || shape[2] < l.kernel) fail("pool window larger than input");
        shape = {shape[0], conv_extent(shape[1], l.kernel, l.stride, 0), conv_extent(shape[2], l.kernel, l.stride, 0)};
        break;
      }
      case LayerKind::flatten: shape = {static_cast<std::int64_t>(element_count(shape))}; break;
      case LayerKind::add:
        if (l.skip_from < 0 || static_cast<std::size_t>(l.skip_from) >= i) fail("skip source must precede it");
        if (output_shapes_[static_cast<std::size_t>(l.skip_from)] != shape) fail("skip shape mismatch");
        break;
    }
    if (l.parameterized()) {
      param_ordinal_.push_back(static_cast<int>(param_layers_.size()));
      param_layers_.push_back(i);
    } else {
      param_ordinal_.push_back(-1);
      if (l.neq_tracked) fail("only parameterized layers can be tracked");
    }
    output_shapes_.push_back(shape);
  }
}

std::optional<std::size_t> ModelLayout::find_layer(const std::string& id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].id == id) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> ModelLayout::param_ordinal(std::size_t layer) const {
  const int o = param_ordinal_.at(layer);
  if (o < 0) return std::nullopt;
  return static_cast<std::size_t>(o);
}

std::size_t ModelLayout::observation_layer(std::size_t layer) const {
  if (layer + 1 < layers_.size() && layers_[layer + 1].kind == LayerKind::relu) return layer + 1;
  return layer;
}

std::size_t ModelLayout::values_per_neuron(std::size_t layer) const {
  const Shape& s = output_shapes_.at(observation_layer(layer));
  return s.size() == 3 ? static_cast<std::size_t>(s[1] * s[2]) : 1;
}

std::vector<NeuronId> ModelLayout::tracked_neurons() const {
  std::vector<NeuronId> out;
  for (std::size_t li : param_layers_) {
    const LayerSpec& l = layers_[li];
    if (!l.neq_tracked) continue;
    for (int n = 0; n < l.neuron_count(); ++n) out.push_back({li, n});
  }
  return out;
}

std::size_t ModelLayout::tracked_neuron_count() const {
  std::size_t n = 0;
  for (std::size_t li : param_layers_) {
    if (layers_[li].neq_tracked) n += static_cast<std::size_t>(layers_[li].neuron_count());
  }
  return n;
}

FreezeMask ModelLayout::all_live_mask() const {
  FreezeMask m;
  for (std::size_t li : param_layers_) m.layers.emplace_back(static_cast<std::size_t>(layers_[li].neuron_count()));
  return m;
}

FreezeMask ModelLayout::all_frozen_mask() const {
  FreezeMask m;
  for (std::size_t li : param_layers_) {
    m.layers.emplace_back(static_cast<std::size_t>(layers_[li].neuron_count()), true);
  }
  return m;
}

void ModelLayout::validate(const FreezeMask& mask) const {
  if (mask.layers.size() != param_layers_.size()) {
    throw ShapeError("mask covers " + std::to_string(mask.layers.size()) + " layers, model has " +
                     std::to_string(param_layers_.size()) + " parameterized layers");
  }
  for (std::size_t q = 0; q < param_layers_.size(); ++q) {
    if (mask.layers[q].size() != static_cast<std::size_t>(layers_[param_layers_[q]].neuron_count())) {
      throw ShapeError("mask for layer '" + layers_[param_layers_[q]].id + "' has wrong length");
    }
  }
}

bool ModelLayout::frozen(const FreezeMask& mask, const NeuronId& id) const {
  const auto q = param_ordinal(id.layer);
  if (!q) throw ShapeError("layer " + std::to_string(id.layer) + " has no neurons");
  return mask.layers.at(*q).frozen(static_cast<std::size_t>(id.index));
}

void ModelLayout::set_frozen(FreezeMask& mask, const NeuronId& id, bool frozen) const {
  const auto q = param_ordinal(id.layer);
  if (!q) throw ShapeError("layer " + std::to_string(id.layer) + " has no neurons");
  mask.layers.at(*q).set_frozen(static_cast<std::size_t>(id.index), frozen);
}

std::size_t ModelLayout::updated_tracked_count(const FreezeMask& mask) const {
  validate(mask);
  std::size_t n = 0;
  for (std::size_t q = 0; q < param_layers_.size(); ++q) {
    if (layers_[param_layers_[q]].neq_tracked) n += mask.layers[q].live_count();
  }
  return n;
}

ModelLayout build_layout(const ArchSpec& arch) {
  for (auto w : arch.widths) {
    if (w < 1) throw ConfigError("widths", "layer widths must be >= 1");
  }
  if (arch.classes < 1) throw ConfigError("classes", "need at least one class");
  for (auto e : arch.input_shape) {
    if (e < 1) throw ConfigError("input_shape", "extents must be >= 1");
  }
  std::vector<LayerSpec> layers;
  auto add = [&](LayerSpec l) {
    layers.push_back(std::move(l));
    return static_cast<int>(layers.size()) - 1;
  };
  auto conv = [&](const std::string& id, int in, int out, int stride) {
    add({LayerKind::conv2d, id, in, out, 3, stride, 1, -1, true});
  };
  auto bn = [&](const std::string& id, int ch) { add({LayerKind::batchnorm2d, id, ch, ch, 0, 1, 0, -1, true}); };
  auto relu = [&](const std::string& id) { add({LayerKind::relu, id}); };

  if (arch.name == "mlp") {
    int features = static_cast<int>(element_count(arch.input_shape));
    if (arch.input_shape.size() > 1) add({LayerKind::flatten, "flatten"});
    for (std::size_t i = 0; i < arch.widths.size(); ++i) {
      const std::string id = "fc" + std::to_string(i + 1);
      add({LayerKind::linear, id, features, arch.widths[i], 0, 1, 0, -1, true});
      relu(id + ".relu");
      features = arch.widths[i];
    }
    add({LayerKind::linear, "classifier", features, arch.classes, 0, 1, 0, -1, false});
  } else if (arch.name == "smallcnn" || arch.name == "smallresnet") {
    if (arch.input_shape.size() != 3) throw ConfigError("input_shape", arch.name + " needs {C, H, W} inputs");
    if (arch.widths.empty()) throw ConfigError("widths", arch.name + " needs at least one stage");
    const int cin = static_cast<int>(arch.input_shape[0]);
    if (arch.name == "smallcnn") {
      int ch = cin;
      for (std::size_t i = 0; i < arch.widths.size(); ++i) {
        const std::string s = std::to_string(i + 1);
        conv("conv" + s, ch, arch.widths[i], 1);
        if (arch.batchnorm) bn("bn" + s, arch.widths[i]);
        relu("relu" + s);
        add({LayerKind::max_pool, "pool" + s, 0, 0, 2, 2});
        ch = arch.widths[i];
      }
      add({LayerKind::flatten, "flatten"});
      // Feature count is resolved below once output shapes are known.
      add({LayerKind::linear, "classifier", 0, arch.classes, 0, 1, 0, -1, false});
    } else {
      if (arch.blocks_per_stage < 1) throw ConfigError("blocks_per_stage", "must be >= 1");
      conv("stem.conv", cin, arch.widths[0], 1);
      bn("stem.bn", arch.widths[0]);
      relu("stem.relu");
      for (std::size_t s = 0; s < arch.widths.size(); ++s) {
        const std::string st = "stage" + std::to_string(s + 1);
        const int w = arch.widths[s];
        if (s > 0) {
          conv(st + ".down.conv", arch.widths[s - 1], w, 2);
          bn(st + ".down.bn", w);
          relu(st + ".down.relu");
        }
        for (int b = 0; b < arch.blocks_per_stage; ++b) {
          const std::string bl = st + ".block" + std::to_string(b + 1);
          const int entry = static_cast<int>(layers.size()) - 1;
          conv(bl + ".conv1", w, w, 1);
          bn(bl + ".bn1", w);
          relu(bl + ".relu1");
          conv(bl + ".conv2", w, w, 1);
          bn(bl + ".bn2", w);
          add({LayerKind::add, bl + ".add", 0, 0, 0, 1, 0, entry});
          relu(bl + ".relu2");
        }
      }
      // Global average pool; kernel resolved below.
      add({LayerKind::avg_pool, "pool", 0, 0, 0, 1});
      add({LayerKind::flatten, "flatten"});
      add({LayerKind::linear, "classifier", arch.widths.back(), arch.classes, 0, 1, 0, -1, false});
    }
    // Resolve shape-dependent fields with a prefix walk.
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].kind == LayerKind::avg_pool && layers[i].kernel == 0) {
        const Shape s = ModelLayout(arch, {layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(i)})
                            .output_shape(i - 1);
        if (s[1] != s[2]) throw ConfigError("input_shape", "global pooling needs square feature maps");
        layers[i].kernel = static_cast<int>(s[1]);
        layers[i].stride = static_cast<int>(s[1]);
      }
      if (layers[i].kind == LayerKind::linear && layers[i].in == 0) {
        const Shape s = ModelLayout(arch, {layers.begin(), layers.begin() + static_cast<std::ptrdiff_t>(i)})
                            .output_shape(i - 1);
        layers[i].in = static_cast<int>(s[0]);
      }
    }
  } else {
    throw ConfigError("architecture", "unknown architecture '" + arch.name + "'");
  }
  return ModelLayout(arch, std::move(layers));
}

// ---------------------------------------------------------------------------
// model

template <typename T>
Model<T>::Model(ModelLayout layout, std::uint64_t seed) : layout_(std::move(layout)), seed_(seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  params_.resize(layout_.layers().size());
  for (std::size_t i = 0; i < layout_.layers().size(); ++i) {
    const LayerSpec& l = layout_.layer(i);
    LayerParams<T>& p = params_[i];
    const auto out = static_cast<std::int64_t>(l.out);
    if (l.kind == LayerKind::linear || l.kind == LayerKind::conv2d) {
      const Shape ws = l.kind == LayerKind::linear ? Shape{out, l.in} : Shape{out, l.in, l.kernel, l.kernel};
      p.weight = Tensor<T>(ws);
      const double fan_in = static_cast<double>(p.weight.size()) / static_cast<double>(out);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& w : p.weight.values()) w = static_cast<T>(normal(rng) * stddev);
      p.bias = Tensor<T>({out});
    } else if (l.kind == LayerKind::batchnorm2d) {
      p.weight = Tensor<T>({out}, T{1});
      p.bias = Tensor<T>({out});
      p.running_mean = Tensor<T>({out});
      p.running_var = Tensor<T>({out}, T{1});
    }
  }
}

template <typename T>
Tensor<T>& Model<T>::parameter(const std::string& layer_id, ParamRole role) {
  const auto li = layout_.find_layer(layer_id);
  if (!li) throw ShapeError("no layer '" + layer_id + "'");
  LayerParams<T>& p = params_[*li];
  Tensor<T>* t = nullptr;
  switch (role) {
    case ParamRole::weight: t = &p.weight; break;
    case ParamRole::bias: t = &p.bias; break;
    case ParamRole::running_mean: t = &p.running_mean; break;
    case ParamRole::running_var: t = &p.running_var; break;
  }
  if (t->empty()) {
    throw ShapeError("layer '" + layer_id + "' has no " + param_role_name(role) + " parameter");
  }
  return *t;
}

template <typename T>
const Tensor<T>& Model<T>::parameter(const std::string& layer_id, ParamRole role) const {
  return const_cast<Model*>(this)->parameter(layer_id, role);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.weight.size() + p.bias.size();
  return n;
}

template <typename T>
ForwardPass<T> Model<T>::forward(const Tensor<T>& x, Mode mode, bool keep_intermediates) const {
  const Shape& in = layout_.input_shape();
  if (x.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), x.shape().begin() + 1)) {
    throw ShapeError("model expects inputs of per-sample shape " + to_string(in) + ", got " + to_string(x.shape()));
  }
  ForwardPass<T> pass{Record<T>(keep_intermediates), 0, {}};
  auto& rec = pass.record;
  auto cur = rec.input(x);
  for (std::size_t i = 0; i < layout_.layers().size(); ++i) {
    const LayerSpec& l = layout_.layer(i);
    const LayerParams<T>& p = params_[i];
    switch (l.kind) {
      case LayerKind::linear: cur = rec.linear(cur, p.weight, p.bias); break;
      case LayerKind::conv2d: cur = rec.conv2d(cur, p.weight, p.bias, {l.stride, l.padding}); break;
      case LayerKind::batchnorm2d:
        cur = mode == Mode::train ? rec.batchnorm2d_train(cur, p.weight, p.bias, 1e-5)
                                  : rec.batchnorm2d_eval(cur, p.weight, p.bias, p.running_mean, p.running_var, 1e-5);
        break;
      case LayerKind::relu: cur = rec.relu(cur); break;
      case LayerKind::max_pool: cur = rec.max_pool2d(cur, {l.kernel, l.stride}); break;
      case LayerKind::avg_pool: cur = rec.avg_pool2d(cur, {l.kernel, l.stride}); break;
      case LayerKind::flatten: cur = rec.flatten(cur); break;
      case LayerKind::add: cur = rec.add(cur, pass.layer_outputs[static_cast<std::size_t>(l.skip_from)]); break;
    }
    pass.layer_outputs.push_back(cur);
  }
  pass.output = cur;
  return pass;
}

template <typename T>
void Model<T>::update_running_stats(const ForwardPass<T>& pass, const FreezeMask& mask, double momentum) {
  layout_.validate(mask);
  for (std::size_t q = 0; q < layout_.param_layers().size(); ++q) {
    const std::size_t li = layout_.param_layers()[q];
    if (layout_.layer(li).kind != LayerKind::batchnorm2d) continue;
    const auto mean = pass.record.batch_mean(q);
    const auto var = pass.record.batch_var(q);
    const double n = static_cast<double>(pass.record.batch_count(q));
    const double unbias = n > 1 ? n / (n - 1) : 1.0;
    LayerParams<T>& p = params_[li];
    for (std::size_t c = 0; c < mean.size(); ++c) {
      if (mask.layers[q].frozen(c)) continue;
      p.running_mean[c] = static_cast<T>((1.0 - momentum) * static_cast<double>(p.running_mean[c]) + momentum * mean[c]);
      p.running_var[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(p.running_var[c]) + momentum * var[c] * unbias);
    }
  }
}

template <typename T>
Model<T> build_model(const ArchSpec& arch, std::uint64_t seed) {
  return Model<T>(build_layout(arch), seed);
}

template <typename T>
Tensor<T> neuron_output_view(const Model<T>& model, const ForwardPass<T>& pass, const NeuronId& id) {
  const ModelLayout& layout = model.layout();
  if (id.layer >= layout.layers().size()) throw ShapeError("neuron layer index out of range");
  const LayerSpec& l = layout.layer(id.layer);
  if (!l.neq_tracked) throw ShapeError("layer '" + l.id + "' is not tracked");
  if (id.index < 0 || id.index >= l.neuron_count()) {
    throw ShapeError("neuron index " + std::to_string(id.index) + " out of range for layer '" + l.id + "'");
  }
  if (pass.layer_outputs.size() != layout.layers().size()) throw StateError("forward pass is incomplete");
  const Tensor<T>& v = pass.record.value(pass.layer_outputs[layout.observation_layer(id.layer)]);
  const auto B = static_cast<std::size_t>(v.dim(0));
  const auto C = static_cast<std::size_t>(v.dim(1));
  const std::size_t per = v.size() / (B * C);
  std::vector<T> out(B * per);
  for (std::size_t b = 0; b < B; ++b) {
    const T* src = v.data() + (b * C + static_cast<std::size_t>(id.index)) * per;
    std::copy_n(src, per, out.data() + b * per);
  }
  return Tensor<T>({static_cast<std::int64_t>(B * per)}, std::move(out));
}

template class Model<float>;
template class Model<double>;
template Model<float> build_model(const ArchSpec&, std::uint64_t);
template Model<double> build_model(const ArchSpec&, std::uint64_t);
template Tensor<float> neuron_output_view(const Model<float>&, const ForwardPass<float>&, const NeuronId&);
template Tensor<double> neuron_output_view(const Model<double>&, const ForwardPass<double>&, const NeuronId&);

}  // namespace neq

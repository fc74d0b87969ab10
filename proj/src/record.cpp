#include "neq/record.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "neq/kernels.hpp"

namespace neq {

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::linear: return "linear";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm2d: return "batchnorm2d";
    case OpKind::relu: return "relu";
    case OpKind::max_pool2d: return "max_pool2d";
    case OpKind::avg_pool2d: return "avg_pool2d";
    case OpKind::flatten: return "flatten";
    case OpKind::add: return "add";
  }
  return "unknown";
}

template <typename T>
std::optional<std::size_t> LayerGradient<T>::row_of(std::int32_t neuron) const {
  auto it = std::lower_bound(neurons.begin(), neurons.end(), neuron);
  if (it == neurons.end() || *it != neuron) return std::nullopt;
  return static_cast<std::size_t>(it - neurons.begin());
}

template <typename T>
std::size_t GradientSet<T>::input_grad_op_count() const noexcept {
  return static_cast<std::size_t>(std::count(input_grad_computed_.begin(), input_grad_computed_.end(), true));
}

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) + " input, got shape " +
                     to_string(t.shape()));
  }
}

std::int64_t pooled_extent(std::int64_t in, int kernel, int stride, int padding, const char* op) {
  const std::int64_t span = in + 2 * padding - kernel;
  if (span < 0) {
    throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return span / stride + 1;
}

// Transpose rows x cols row-major src into dst (cols x rows).
template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

}  // namespace

template <typename T>
typename Record<T>::ValueId Record<T>::push(OpKind kind, std::vector<ValueId> inputs, Tensor<T> out,
                                            Payload payload, bool parameterized) {
  out.require_finite(op_name(kind));
  values_.push_back(std::move(out));
  Node node{kind, std::move(inputs), values_.size() - 1, -1, std::move(payload)};
  if (parameterized) {
    node.param_index = static_cast<int>(param_nodes_.size());
    param_nodes_.push_back(nodes_.size());
  }
  nodes_.push_back(std::move(node));
  return values_.size() - 1;
}

template <typename T>
typename Record<T>::ValueId Record<T>::input(Tensor<T> x) {
  x.require_finite("input");
  values_.push_back(std::move(x));
  return values_.size() - 1;
}

template <typename T>
const Tensor<T>& Record<T>::value(ValueId id) const {
  if (id >= values_.size()) throw StateError("value id " + std::to_string(id) + " not in record");
  return values_[id];
}

template <typename T>
const typename Record<T>::Node& Record<T>::param_node(std::size_t param_index) const {
  if (param_index >= param_nodes_.size()) {
    throw StateError("parameterized op " + std::to_string(param_index) + " not in record");
  }
  return nodes_[param_nodes_[param_index]];
}

template <typename T>
std::size_t Record<T>::param_neurons(std::size_t param_index) const {
  const Node& n = param_node(param_index);
  return static_cast<std::size_t>(values_[n.output].dim(1));
}

template <typename T>
std::span<const double> Record<T>::batch_mean(std::size_t param_index) const {
  const auto* bn = std::get_if<BatchNormData>(&param_node(param_index).payload);
  if (!bn || !bn->train) throw StateError("op is not a train-mode batch-norm");
  return bn->mean;
}

template <typename T>
std::span<const double> Record<T>::batch_var(std::size_t param_index) const {
  const auto* bn = std::get_if<BatchNormData>(&param_node(param_index).payload);
  if (!bn || !bn->train) throw StateError("op is not a train-mode batch-norm");
  return bn->var;
}

template <typename T>
std::size_t Record<T>::batch_count(std::size_t param_index) const {
  const auto* bn = std::get_if<BatchNormData>(&param_node(param_index).payload);
  if (!bn || !bn->train) throw StateError("op is not a train-mode batch-norm");
  return bn->count;
}

// ---------------------------------------------------------------------------
// forward

template <typename T>
typename Record<T>::ValueId Record<T>::linear(ValueId xid, const Tensor<T>& weight, const Tensor<T>& bias) {
  const Tensor<T>& x = value(xid);
  require_rank(x, 2, "linear");
  require_rank(weight, 2, "linear weight");
  const auto batch = static_cast<std::size_t>(x.dim(0));
  const auto in = static_cast<std::size_t>(x.dim(1));
  const auto out = static_cast<std::size_t>(weight.dim(0));
  if (static_cast<std::size_t>(weight.dim(1)) != in) {
    throw ShapeError("linear: input has " + std::to_string(in) + " features, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.size() != out) throw ShapeError("linear: bias length does not match output count");

  std::vector<T> wt(in * out);
  transpose(weight.data(), out, in, wt.data());
  Tensor<T> y({static_cast<std::int64_t>(batch), static_cast<std::int64_t>(out)});
  kernels::gemm_accumulate(batch, out, in, x.data(), in, wt.data(), out, y.data(), out);
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t o = 0; o < out; ++o) y[n * out + o] = y[n * out + o] + bias[o];
  }
  return push(OpKind::linear, {xid}, std::move(y), LinearData{&weight, &bias}, true);
}

template <typename T>
typename Record<T>::ValueId Record<T>::conv2d(ValueId xid, const Tensor<T>& weight, const Tensor<T>& bias,
                                              Conv2dGeometry g) {
  if (g.stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(g.stride));
  if (g.padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(g.padding));
  const Tensor<T>& x = value(xid);
  require_rank(x, 4, "conv2d");
  require_rank(weight, 4, "conv2d weight");
  const auto B = static_cast<std::size_t>(x.dim(0));
  const auto cin = static_cast<std::size_t>(x.dim(1));
  const auto H = x.dim(2), W = x.dim(3);
  const auto cout = static_cast<std::size_t>(weight.dim(0));
  const auto kh = static_cast<int>(weight.dim(2)), kw = static_cast<int>(weight.dim(3));
  if (static_cast<std::size_t>(weight.dim(1)) != cin) {
    throw ShapeError("conv2d: input has " + std::to_string(cin) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.size() != cout) throw ShapeError("conv2d: bias length does not match output channels");
  const auto ho = pooled_extent(H, kh, g.stride, g.padding, "conv2d");
  const auto wo = pooled_extent(W, kw, g.stride, g.padding, "conv2d");
  const std::size_t P = static_cast<std::size_t>(ho * wo);
  const std::size_t K = cin * static_cast<std::size_t>(kh * kw);
  const std::size_t plane = static_cast<std::size_t>(H * W);

  std::vector<T> cols(B * K * P, T{0});
  for (std::size_t b = 0; b < B; ++b) {
    T* cb = cols.data() + b * K * P;
    const T* xb = x.data() + b * cin * plane;
    for (std::size_t c = 0; c < cin; ++c) {
      for (int ki = 0; ki < kh; ++ki) {
        for (int kj = 0; kj < kw; ++kj) {
          T* row = cb + ((c * kh + ki) * kw + kj) * P;
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            const std::int64_t ih = oh * g.stride - g.padding + ki;
            if (ih < 0 || ih >= H) continue;
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const std::int64_t iw = ow * g.stride - g.padding + kj;
              if (iw < 0 || iw >= W) continue;
              row[oh * wo + ow] = xb[c * plane + ih * W + iw];
            }
          }
        }
      }
    }
  }

  Tensor<T> y({static_cast<std::int64_t>(B), static_cast<std::int64_t>(cout), ho, wo});
  for (std::size_t b = 0; b < B; ++b) {
    T* yb = y.data() + b * cout * P;
    kernels::gemm_accumulate(cout, P, K, weight.data(), K, cols.data() + b * K * P, P, yb, P);
    for (std::size_t o = 0; o < cout; ++o) {
      for (std::size_t p = 0; p < P; ++p) yb[o * P + p] = yb[o * P + p] + bias[o];
    }
  }
  if (!keep_) cols.clear();
  return push(OpKind::conv2d, {xid}, std::move(y), ConvData{&weight, &bias, g, std::move(cols)}, true);
}

template <typename T>
typename Record<T>::ValueId Record<T>::batchnorm2d_train(ValueId xid, const Tensor<T>& gamma, const Tensor<T>& beta,
                                                         double eps) {
  const Tensor<T>& x = value(xid);
  require_rank(x, 4, "batchnorm2d");
  const auto B = static_cast<std::size_t>(x.dim(0));
  const auto C = static_cast<std::size_t>(x.dim(1));
  const auto plane = static_cast<std::size_t>(x.dim(2) * x.dim(3));
  if (gamma.size() != C || beta.size() != C) throw ShapeError("batchnorm2d: affine parameters do not match channels");
  const std::size_t count = B * plane;

  BatchNormData d{&gamma, &beta, true, std::vector<double>(C), std::vector<double>(C), std::vector<double>(C), count, {}};
  d.xhat.resize(x.size());
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* xc = x.data() + (b * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) sum += static_cast<double>(xc[p]);
    }
    const double mean = sum / static_cast<double>(count);
    double sq = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const T* xc = x.data() + (b * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const double dv = static_cast<double>(xc[p]) - mean;
        sq += dv * dv;
      }
    }
    const double var = sq / static_cast<double>(count);
    const double inv = 1.0 / std::sqrt(var + eps);
    d.mean[c] = mean;
    d.var[c] = var;
    d.inv_std[c] = inv;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T xh = static_cast<T>((static_cast<double>(x[off + p]) - mean) * inv);
        d.xhat[off + p] = xh;
        y[off + p] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (!keep_) d.xhat.clear();
  return push(OpKind::batchnorm2d, {xid}, std::move(y), std::move(d), true);
}

template <typename T>
typename Record<T>::ValueId Record<T>::batchnorm2d_eval(ValueId xid, const Tensor<T>& gamma, const Tensor<T>& beta,
                                                        const Tensor<T>& running_mean, const Tensor<T>& running_var,
                                                        double eps) {
  const Tensor<T>& x = value(xid);
  require_rank(x, 4, "batchnorm2d");
  const auto B = static_cast<std::size_t>(x.dim(0));
  const auto C = static_cast<std::size_t>(x.dim(1));
  const auto plane = static_cast<std::size_t>(x.dim(2) * x.dim(3));
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C || running_var.size() != C) {
    throw ShapeError("batchnorm2d: parameters do not match channels");
  }
  BatchNormData d{&gamma, &beta, false, std::vector<double>(C), std::vector<double>(C), std::vector<double>(C), B * plane, {}};
  d.xhat.resize(x.size());
  Tensor<T> y(x.shape());
  for (std::size_t c = 0; c < C; ++c) {
    d.mean[c] = static_cast<double>(running_mean[c]);
    d.var[c] = static_cast<double>(running_var[c]);
    d.inv_std[c] = 1.0 / std::sqrt(d.var[c] + eps);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t off = (b * C + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        const T xh = static_cast<T>((static_cast<double>(x[off + p]) - d.mean[c]) * d.inv_std[c]);
        d.xhat[off + p] = xh;
        y[off + p] = gamma[c] * xh + beta[c];
      }
    }
  }
  if (!keep_) d.xhat.clear();
  return push(OpKind::batchnorm2d, {xid}, std::move(y), std::move(d), true);
}

template <typename T>
typename Record<T>::ValueId Record<T>::relu(ValueId xid) {
  const Tensor<T>& x = value(xid);
  Tensor<T> y(x.shape());
  kernels::relu_forward(x.values(), y.values());
  return push(OpKind::relu, {xid}, std::move(y), NoData{}, false);
}

template <typename T>
typename Record<T>::ValueId Record<T>::max_pool2d(ValueId xid, Pool2dGeometry g) {
  if (g.kernel < 1 || g.stride < 1) throw ShapeError("max_pool2d: kernel and stride must be >= 1");
  const Tensor<T>& x = value(xid);
  require_rank(x, 4, "max_pool2d");
  const auto BC = static_cast<std::size_t>(x.dim(0) * x.dim(1));
  const auto H = x.dim(2), W = x.dim(3);
  const auto ho = pooled_extent(H, g.kernel, g.stride, 0, "max_pool2d");
  const auto wo = pooled_extent(W, g.kernel, g.stride, 0, "max_pool2d");
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  PoolData d{g, std::vector<std::uint32_t>(y.size())};
  for (std::size_t bc = 0; bc < BC; ++bc) {
    const T* xp = x.data() + bc * static_cast<std::size_t>(H * W);
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        std::int64_t best = (oh * g.stride) * W + ow * g.stride;
        for (int ki = 0; ki < g.kernel; ++ki) {
          for (int kj = 0; kj < g.kernel; ++kj) {
            const std::int64_t idx = (oh * g.stride + ki) * W + ow * g.stride + kj;
            if (xp[idx] > xp[best]) best = idx;
          }
        }
        const std::size_t o = bc * static_cast<std::size_t>(ho * wo) + static_cast<std::size_t>(oh * wo + ow);
        y[o] = xp[best];
        d.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return push(OpKind::max_pool2d, {xid}, std::move(y), std::move(d), false);
}

template <typename T>
typename Record<T>::ValueId Record<T>::avg_pool2d(ValueId xid, Pool2dGeometry g) {
  if (g.kernel < 1 || g.stride < 1) throw ShapeError("avg_pool2d: kernel and stride must be >= 1");
  const Tensor<T>& x = value(xid);
  require_rank(x, 4, "avg_pool2d");
  const auto BC = static_cast<std::size_t>(x.dim(0) * x.dim(1));
  const auto H = x.dim(2), W = x.dim(3);
  const auto ho = pooled_extent(H, g.kernel, g.stride, 0, "avg_pool2d");
  const auto wo = pooled_extent(W, g.kernel, g.stride, 0, "avg_pool2d");
  const T scale = T{1} / static_cast<T>(g.kernel * g.kernel);
  Tensor<T> y({x.dim(0), x.dim(1), ho, wo});
  for (std::size_t bc = 0; bc < BC; ++bc) {
    const T* xp = x.data() + bc * static_cast<std::size_t>(H * W);
    for (std::int64_t oh = 0; oh < ho; ++oh) {
      for (std::int64_t ow = 0; ow < wo; ++ow) {
        T s{0};
        for (int ki = 0; ki < g.kernel; ++ki) {
          for (int kj = 0; kj < g.kernel; ++kj) s = s + xp[(oh * g.stride + ki) * W + ow * g.stride + kj];
        }
        y[bc * static_cast<std::size_t>(ho * wo) + static_cast<std::size_t>(oh * wo + ow)] = s * scale;
      }
    }
  }
  return push(OpKind::avg_pool2d, {xid}, std::move(y), PoolData{g, {}}, false);
}

template <typename T>
typename Record<T>::ValueId Record<T>::flatten(ValueId xid) {
  const Tensor<T>& x = value(xid);
  if (x.rank() < 2) throw ShapeError("flatten expects a batched input");
  const auto batch = x.dim(0);
  Tensor<T> y = x.reshaped({batch, static_cast<std::int64_t>(x.size()) / batch});
  return push(OpKind::flatten, {xid}, std::move(y), NoData{}, false);
}

template <typename T>
typename Record<T>::ValueId Record<T>::add(ValueId aid, ValueId bid) {
  const Tensor<T>& a = value(aid);
  const Tensor<T>& b = value(bid);
  if (a.shape() != b.shape()) {
    throw ShapeError("add: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " differ");
  }
  Tensor<T> y = a;
  kernels::add_inplace(y.values(), b.values());
  return push(OpKind::add, {aid, bid}, std::move(y), NoData{}, false);
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
GradientSet<T> Record<T>::backward(ValueId output, const Tensor<T>& loss_gradient,
                                   std::span<const GateVector> gates) const {
  if (!keep_) throw StateError("backward on an inference-only record");
  if (output >= values_.size()) throw StateError("backward before forward: output value not recorded");
  if (loss_gradient.shape() != values_[output].shape()) {
    throw ShapeError("loss gradient shape " + to_string(loss_gradient.shape()) + " does not match output " +
                     to_string(values_[output].shape()));
  }
  if (gates.size() != param_nodes_.size()) {
    throw ShapeError("backward needs " + std::to_string(param_nodes_.size()) + " gate vectors, got " +
                     std::to_string(gates.size()));
  }
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if (gates[i].size() != param_neurons(i)) {
      throw ShapeError("gate vector " + std::to_string(i) + " has length " + std::to_string(gates[i].size()) +
                       ", op has " + std::to_string(param_neurons(i)) + " neurons");
    }
  }

  std::vector<std::optional<LayerGradient<T>>> layer_grads(param_nodes_.size());
  std::vector<bool> input_done(nodes_.size(), false);

  // Earliest op that is a parameterized op with a live neuron.
  std::size_t first_live = nodes_.size();
  for (std::size_t i = 0; i < param_nodes_.size(); ++i) {
    if (gates[i].any_live()) {
      first_live = param_nodes_[i];
      break;
    }
  }
  if (first_live == nodes_.size()) return GradientSet<T>(std::move(layer_grads), std::move(input_done));

  std::vector<std::optional<Tensor<T>>> grads(values_.size());
  grads[output] = loss_gradient;

  auto accumulate = [&](ValueId id, Tensor<T>&& g) {
    if (!grads[id]) {
      grads[id] = std::move(g);
    } else {
      kernels::add_inplace(grads[id]->values(), std::span<const T>(g.values()));
    }
  };

  for (std::size_t step = nodes_.size(); step-- > first_live;) {
    const Node& node = nodes_[step];
    if (!grads[node.output]) continue;
    const Tensor<T>& dy = *grads[node.output];
    const bool need_input = step > first_live;
    const GateVector* gate = node.param_index >= 0 ? &gates[static_cast<std::size_t>(node.param_index)] : nullptr;
    const std::vector<std::int32_t> live = gate ? gate->live_indices() : std::vector<std::int32_t>{};

    switch (node.kind) {
      case OpKind::linear: {
        const auto& d = std::get<LinearData>(node.payload);
        const Tensor<T>& x = values_[node.inputs[0]];
        const auto B = static_cast<std::size_t>(x.dim(0));
        const auto in = static_cast<std::size_t>(x.dim(1));
        const auto out = static_cast<std::size_t>(d.weight->dim(0));
        if (!live.empty()) {
          const std::size_t L = live.size();
          std::vector<T> dyt(L * B);
          for (std::size_t r = 0; r < L; ++r) {
            for (std::size_t n = 0; n < B; ++n) dyt[r * B + n] = dy[n * out + static_cast<std::size_t>(live[r])];
          }
          LayerGradient<T> lg{live, Tensor<T>({static_cast<std::int64_t>(L), static_cast<std::int64_t>(in)}),
                              Tensor<T>({static_cast<std::int64_t>(L)})};
          kernels::gemm_accumulate(L, in, B, dyt.data(), B, x.data(), in, lg.weight.data(), in);
          for (std::size_t r = 0; r < L; ++r) {
            T s{0};
            for (std::size_t n = 0; n < B; ++n) s = s + dyt[r * B + n];
            lg.bias[r] = s;
          }
          layer_grads[static_cast<std::size_t>(node.param_index)] = std::move(lg);
        }
        if (need_input) {
          Tensor<T> dx(x.shape());
          kernels::gemm_accumulate(B, in, out, dy.data(), out, d.weight->data(), in, dx.data(), in);
          accumulate(node.inputs[0], std::move(dx));
          input_done[step] = true;
        }
        break;
      }
      case OpKind::conv2d: {
        const auto& d = std::get<ConvData>(node.payload);
        const Tensor<T>& x = values_[node.inputs[0]];
        const auto B = static_cast<std::size_t>(x.dim(0));
        const auto cin = static_cast<std::size_t>(x.dim(1));
        const auto H = x.dim(2), W = x.dim(3);
        const auto cout = static_cast<std::size_t>(d.weight->dim(0));
        const int kh = static_cast<int>(d.weight->dim(2)), kw = static_cast<int>(d.weight->dim(3));
        const auto ho = dy.dim(2), wo = dy.dim(3);
        const std::size_t P = static_cast<std::size_t>(ho * wo);
        const std::size_t K = cin * static_cast<std::size_t>(kh * kw);
        if (!live.empty()) {
          const std::size_t L = live.size();
          LayerGradient<T> lg{live, Tensor<T>({static_cast<std::int64_t>(L), static_cast<std::int64_t>(K)}),
                              Tensor<T>({static_cast<std::int64_t>(L)})};
          std::vector<T> colt(P * K);
          std::vector<T> packed(L * P);
          for (std::size_t b = 0; b < B; ++b) {
            transpose(d.cols.data() + b * K * P, K, P, colt.data());
            const T* dyb = dy.data() + b * cout * P;
            for (std::size_t r = 0; r < L; ++r) {
              std::copy_n(dyb + static_cast<std::size_t>(live[r]) * P, P, packed.data() + r * P);
            }
            kernels::gemm_accumulate(L, K, P, packed.data(), P, colt.data(), K, lg.weight.data(), K);
          }
          for (std::size_t r = 0; r < L; ++r) {
            T s{0};
            for (std::size_t b = 0; b < B; ++b) {
              const T* row = dy.data() + (b * cout + static_cast<std::size_t>(live[r])) * P;
              for (std::size_t p = 0; p < P; ++p) s = s + row[p];
            }
            lg.bias[r] = s;
          }
          layer_grads[static_cast<std::size_t>(node.param_index)] = std::move(lg);
        }
        if (need_input) {
          std::vector<T> wt(K * cout);
          transpose(d.weight->data(), cout, K, wt.data());
          Tensor<T> dx(x.shape());
          std::vector<T> dcols(K * P);
          const std::size_t plane = static_cast<std::size_t>(H * W);
          for (std::size_t b = 0; b < B; ++b) {
            std::fill(dcols.begin(), dcols.end(), T{0});
            kernels::gemm_accumulate(K, P, cout, wt.data(), cout, dy.data() + b * cout * P, P, dcols.data(), P);
            T* dxb = dx.data() + b * cin * plane;
            for (std::size_t c = 0; c < cin; ++c) {
              for (int ki = 0; ki < kh; ++ki) {
                for (int kj = 0; kj < kw; ++kj) {
                  const T* row = dcols.data() + ((c * kh + ki) * kw + kj) * P;
                  for (std::int64_t oh = 0; oh < ho; ++oh) {
                    const std::int64_t ih = oh * d.geometry.stride - d.geometry.padding + ki;
                    if (ih < 0 || ih >= H) continue;
                    for (std::int64_t ow = 0; ow < wo; ++ow) {
                      const std::int64_t iw = ow * d.geometry.stride - d.geometry.padding + kj;
                      if (iw < 0 || iw >= W) continue;
                      T& dst = dxb[c * plane + static_cast<std::size_t>(ih * W + iw)];
                      dst = dst + row[oh * wo + ow];
                    }
                  }
                }
              }
            }
          }
          accumulate(node.inputs[0], std::move(dx));
          input_done[step] = true;
        }
        break;
      }
      case OpKind::batchnorm2d: {
        const auto& d = std::get<BatchNormData>(node.payload);
        const Tensor<T>& x = values_[node.inputs[0]];
        const auto B = static_cast<std::size_t>(x.dim(0));
        const auto C = static_cast<std::size_t>(x.dim(1));
        const auto plane = static_cast<std::size_t>(x.dim(2) * x.dim(3));
        // Per-channel sums of dy and dy * xhat, needed by both paths.
        std::vector<T> sum_dy(C, T{0}), sum_dy_xhat(C, T{0});
        for (std::size_t c = 0; c < C; ++c) {
          T s{0}, sx{0};
          for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * plane;
            for (std::size_t p = 0; p < plane; ++p) {
              s = s + dy[off + p];
              sx = sx + dy[off + p] * d.xhat[off + p];
            }
          }
          sum_dy[c] = s;
          sum_dy_xhat[c] = sx;
        }
        if (!live.empty()) {
          const std::size_t L = live.size();
          LayerGradient<T> lg{live, Tensor<T>({static_cast<std::int64_t>(L), 1}),
                              Tensor<T>({static_cast<std::int64_t>(L)})};
          for (std::size_t r = 0; r < L; ++r) {
            lg.weight[r] = sum_dy_xhat[static_cast<std::size_t>(live[r])];
            lg.bias[r] = sum_dy[static_cast<std::size_t>(live[r])];
          }
          layer_grads[static_cast<std::size_t>(node.param_index)] = std::move(lg);
        }
        if (need_input) {
          Tensor<T> dx(x.shape());
          const T n = static_cast<T>(d.count);
          for (std::size_t c = 0; c < C; ++c) {
            const T g = (*d.gamma)[c];
            const T inv = static_cast<T>(d.inv_std[c]);
            for (std::size_t b = 0; b < B; ++b) {
              const std::size_t off = (b * C + c) * plane;
              if (d.train) {
                const T scale = g * inv / n;
                for (std::size_t p = 0; p < plane; ++p) {
                  dx[off + p] = scale * (n * dy[off + p] - sum_dy[c] - d.xhat[off + p] * sum_dy_xhat[c]);
                }
              } else {
                const T scale = g * inv;
                for (std::size_t p = 0; p < plane; ++p) dx[off + p] = scale * dy[off + p];
              }
            }
          }
          accumulate(node.inputs[0], std::move(dx));
          input_done[step] = true;
        }
        break;
      }
      case OpKind::relu: {
        if (!need_input) break;
        const Tensor<T>& x = values_[node.inputs[0]];
        Tensor<T> dx(x.shape());
        kernels::relu_backward(x.values(), dy.values(), dx.values());
        accumulate(node.inputs[0], std::move(dx));
        input_done[step] = true;
        break;
      }
      case OpKind::max_pool2d: {
        if (!need_input) break;
        const auto& d = std::get<PoolData>(node.payload);
        const Tensor<T>& x = values_[node.inputs[0]];
        const std::size_t in_plane = static_cast<std::size_t>(x.dim(2) * x.dim(3));
        const std::size_t out_plane = static_cast<std::size_t>(dy.dim(2) * dy.dim(3));
        Tensor<T> dx(x.shape());
        for (std::size_t o = 0; o < dy.size(); ++o) {
          T& dst = dx[(o / out_plane) * in_plane + d.argmax[o]];
          dst = dst + dy[o];
        }
        accumulate(node.inputs[0], std::move(dx));
        input_done[step] = true;
        break;
      }
      case OpKind::avg_pool2d: {
        if (!need_input) break;
        const auto& d = std::get<PoolData>(node.payload);
        const Tensor<T>& x = values_[node.inputs[0]];
        const auto W = x.dim(3);
        const auto ho = dy.dim(2), wo = dy.dim(3);
        const std::size_t BC = static_cast<std::size_t>(x.dim(0) * x.dim(1));
        const T scale = T{1} / static_cast<T>(d.geometry.kernel * d.geometry.kernel);
        Tensor<T> dx(x.shape());
        for (std::size_t bc = 0; bc < BC; ++bc) {
          T* dxp = dx.data() + bc * static_cast<std::size_t>(x.dim(2) * W);
          const T* dyp = dy.data() + bc * static_cast<std::size_t>(ho * wo);
          for (std::int64_t oh = 0; oh < ho; ++oh) {
            for (std::int64_t ow = 0; ow < wo; ++ow) {
              const T gval = dyp[oh * wo + ow] * scale;
              for (int ki = 0; ki < d.geometry.kernel; ++ki) {
                for (int kj = 0; kj < d.geometry.kernel; ++kj) {
                  T& dst = dxp[(oh * d.geometry.stride + ki) * W + ow * d.geometry.stride + kj];
                  dst = dst + gval;
                }
              }
            }
          }
        }
        accumulate(node.inputs[0], std::move(dx));
        input_done[step] = true;
        break;
      }
      case OpKind::flatten: {
        if (!need_input) break;
        accumulate(node.inputs[0], dy.reshaped(values_[node.inputs[0]].shape()));
        input_done[step] = true;
        break;
      }
      case OpKind::add: {
        if (!need_input) break;
        accumulate(node.inputs[0], Tensor<T>(dy));
        accumulate(node.inputs[1], Tensor<T>(dy));
        input_done[step] = true;
        break;
      }
      case OpKind::input: break;
    }
    grads[node.output].reset();
  }
  return GradientSet<T>(std::move(layer_grads), std::move(input_done));
}

template struct LayerGradient<float>;
template struct LayerGradient<double>;
template class GradientSet<float>;
template class GradientSet<double>;
template class Record<float>;
template class Record<double>;

}  // namespace neq

#include "neq/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "neq/errors.hpp"

namespace neq {

std::vector<std::string> TrackerConfig::validate() const {
  if (!(mu_eq >= 0.0 && mu_eq < 1.0)) throw ConfigError("mu_eq", "must lie in [0, 1)");
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon", "must be a finite value >= 0");
  if (probe_size < 1) throw ConfigError("probe_size", "must be >= 1");
  std::vector<std::string> warnings;
  if (mu_eq > 0.5) {
    warnings.push_back("mu_eq = " + std::to_string(mu_eq) +
                       " exceeds 0.5; the velocity is no longer bounded by 2 for similarities in [0, 1]");
  }
  return warnings;
}

template <typename T>
NeuronSignature<T> make_signature(const NeuronId& neuron, int epoch, std::span<const T> raw) {
  NeuronSignature<T> s{neuron, epoch, std::vector<T>(raw.size()), false};
  double sq = 0.0;
  for (T v : raw) sq += static_cast<double>(v) * static_cast<double>(v);
  if (sq == 0.0) {
    s.zero = true;
    return s;
  }
  const double norm = std::sqrt(sq);
  for (std::size_t i = 0; i < raw.size(); ++i) s.values[i] = static_cast<T>(static_cast<double>(raw[i]) / norm);
  return s;
}

template <typename T>
std::vector<NeuronSignature<T>> extract_signatures(const Model<T>& model, const Tensor<T>& probe, int epoch) {
  const ModelLayout& layout = model.layout();
  if (probe.rank() == 0 || probe.dim(0) == 0) throw DataError("probe set is empty");
  const auto ids = layout.tracked_neurons();
  std::vector<std::vector<T>> raw(ids.size());
  const std::int64_t P = probe.dim(0);
  const std::size_t per_sample = probe.size() / static_cast<std::size_t>(P);
  // Chunks keep memory flat for large probes; concatenation stays sample-major.
  constexpr std::int64_t chunk = 256;
  for (std::int64_t start = 0; start < P; start += chunk) {
    const std::int64_t n = std::min(chunk, P - start);
    Shape s = probe.shape();
    s[0] = n;
    const auto first = probe.values().begin() + static_cast<std::ptrdiff_t>(start) * static_cast<std::ptrdiff_t>(per_sample);
    Tensor<T> part(s, std::vector<T>(first, first + n * static_cast<std::ptrdiff_t>(per_sample)));
    auto pass = model.forward(part, Mode::eval, false);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto v = neuron_output_view(model, pass, ids[k]);
      raw[k].insert(raw[k].end(), v.values().begin(), v.values().end());
    }
  }
  std::vector<NeuronSignature<T>> out;
  out.reserve(ids.size());
  for (std::size_t k = 0; k < ids.size(); ++k) out.push_back(make_signature<T>(ids[k], epoch, raw[k]));
  return out;
}

template <typename T>
double phi(const NeuronSignature<T>& current, const NeuronSignature<T>& previous) {
  if (current.neuron != previous.neuron) throw StateError("signatures belong to different neurons");
  if (current.epoch != previous.epoch + 1) {
    throw StateError("signatures are from epochs " + std::to_string(previous.epoch) + " and " +
                     std::to_string(current.epoch) + ", expected consecutive");
  }
  if (current.values.size() != previous.values.size()) throw ShapeError("signature lengths differ");
  if (current.zero && previous.zero) return 1.0;
  if (current.zero || previous.zero) return 0.0;
  // Renormalizing in double removes the rounding left by storing signatures
  // in training precision.
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < current.values.size(); ++i) {
    const double a = current.values[i];
    const double b = previous.values[i];
    dot += a * b;
    na += a * a;
    nb += b * b;
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double update_velocity(EquilibriumState& state, double phi_t, double mu_eq) {
  if (!state.prev_phi) throw StateError("velocity needs a previous similarity value");
  const double delta = phi_t - *state.prev_phi;
  const double v = delta - mu_eq * state.velocity.value_or(0.0);
  state.delta_phi = delta;
  state.velocity = v;
  state.prev_phi = phi_t;
  return v;
}

double closed_form_velocity(std::span<const double> history, double mu_eq, std::size_t t) {
  if (t >= history.size()) throw StateError("similarity history shorter than t + 1");
  if (mu_eq == 0.0) {
    if (t == 0) throw StateError("two-term velocity needs t >= 1");
    return history[t] - history[t - 1];
  }
  double v = history[t];
  double mpow_prev = 1.0;  // mu^(m-1)
  for (std::size_t m = 1; m <= t; ++m) {
    const double mpow = mpow_prev * mu_eq;
    const double term = (mpow_prev + mpow) * history[t - m];
    v += (m % 2 == 1) ? -term : term;
    mpow_prev = mpow;
  }
  return v;
}

std::vector<bool> select_nonequilibrium(std::span<EquilibriumState> states, double epsilon) {
  std::vector<bool> frozen(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    auto& s = states[i];
    // An exact zero counts as below any threshold, so epsilon = 0 still
    // freezes perfectly stationary neurons.
    s.frozen = s.velocity.has_value() && (std::abs(*s.velocity) < epsilon || *s.velocity == 0.0);
    frozen[i] = s.frozen;
  }
  return frozen;
}

namespace {

void put(std::ostream& os, const std::optional<double>& v) {
  if (v) os << *v;
}

}  // namespace

void write_diagnostics_csv(const std::filesystem::path& path, const ModelLayout& layout,
                           std::span<const NeuronDiagnostics> rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << std::setprecision(17);
  os << "layer_id,neuron_index,phi,delta_phi,velocity,frozen\n";
  for (const auto& r : rows) {
    os << layout.layer(r.neuron.layer).id << ',' << r.neuron.index << ',';
    put(os, r.phi);
    os << ',';
    put(os, r.delta_phi);
    os << ',';
    put(os, r.velocity);
    os << ',' << (r.frozen ? 1 : 0) << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

template <typename T>
Tracker<T>::Tracker(const ModelLayout& layout, TrackerConfig config)
    : layout_(layout), config_(config), neurons_(layout.tracked_neurons()) {
  config_.validate();
  states_.reserve(neurons_.size());
  for (const auto& id : neurons_) states_.push_back(EquilibriumState{id, {}, {}, {}, false});
}

template <typename T>
typename Tracker<T>::StepResult Tracker<T>::step(const Model<T>& model, const Tensor<T>& probe, int epoch) {
  return step(extract_signatures(model, probe, epoch), epoch);
}

template <typename T>
typename Tracker<T>::StepResult Tracker<T>::step(std::vector<NeuronSignature<T>> signatures, int epoch) {
  if (epoch != last_epoch_ + 1) {
    throw StateError("tracker expected epoch " + std::to_string(last_epoch_ + 1) + ", got " + std::to_string(epoch));
  }
  if (signatures.size() != neurons_.size()) throw ShapeError("signature count does not match tracked neurons");
  StepResult out{layout_.all_live_mask(), {}};
  out.diagnostics.reserve(neurons_.size());
  for (std::size_t k = 0; k < neurons_.size(); ++k) {
    auto& sig = signatures[k];
    if (sig.neuron != neurons_[k] || sig.epoch != epoch) throw StateError("signature order or epoch mismatch");
    if (!signatures_.empty() && sig.values.size() != signatures_[k].values.size()) {
      throw ShapeError("signature length changed between epochs");
    }
    auto& st = states_[k];
    NeuronDiagnostics d{neurons_[k], {}, {}, {}, false};
    if (!signatures_.empty()) {
      const double p = phi(sig, signatures_[k]);
      d.phi = p;
      if (st.prev_phi) {
        update_velocity(st, p, config_.mu_eq);
        d.delta_phi = st.delta_phi;
        d.velocity = st.velocity;
      } else {
        st.prev_phi = p;
      }
    }
    out.diagnostics.push_back(d);
  }
  const auto frozen = select_nonequilibrium(states_, config_.epsilon);
  for (std::size_t k = 0; k < neurons_.size(); ++k) {
    out.diagnostics[k].frozen = frozen[k];
    layout_.set_frozen(out.mask, neurons_[k], frozen[k]);
  }
  signatures_ = std::move(signatures);
  last_epoch_ = epoch;
  return out;
}

template <typename T>
std::size_t Tracker<T>::stored_values() const noexcept {
  std::size_t n = 0;
  for (const auto& s : signatures_) n += s.values.size();
  return n;
}

template NeuronSignature<float> make_signature(const NeuronId&, int, std::span<const float>);
template NeuronSignature<double> make_signature(const NeuronId&, int, std::span<const double>);
template std::vector<NeuronSignature<float>> extract_signatures(const Model<float>&, const Tensor<float>&, int);
template std::vector<NeuronSignature<double>> extract_signatures(const Model<double>&, const Tensor<double>&, int);
template double phi(const NeuronSignature<float>&, const NeuronSignature<float>&);
template double phi(const NeuronSignature<double>&, const NeuronSignature<double>&);
template class Tracker<float>;
template class Tracker<double>;

}  // namespace neq

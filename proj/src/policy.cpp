#include "neq/policy.hpp"

#include <fstream>
#include <random>
#include <sstream>

#include "neq/errors.hpp"

namespace neq {

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) noexcept {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(master) ^ stream) ^ index);
}

FreezeMask stochastic_mask(const ModelLayout& layout, double p, std::uint64_t epoch_seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("p", "must lie in [0, 1]");
  FreezeMask mask = layout.all_live_mask();
  std::mt19937_64 rng(epoch_seed);
  for (const auto& id : layout.tracked_neurons()) {
    // 53-bit uniform in [0, 1); p = 1 freezes everything, p = 0 nothing.
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    layout.set_frozen(mask, id, u < p);
  }
  return mask;
}

void write_mask_replay(const std::filesystem::path& path, const ModelLayout& layout, const MaskSequence& masks) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "# epoch layer_id neuron_index\n";
  for (const auto& [epoch, mask] : masks) {
    layout.validate(mask);
    for (std::size_t q = 0; q < mask.layers.size(); ++q) {
      const auto& id = layout.layer(layout.param_layers()[q]).id;
      for (std::size_t i = 0; i < mask.layers[q].size(); ++i) {
        if (mask.layers[q].frozen(i)) os << epoch << ' ' << id << ' ' << i << '\n';
      }
    }
  }
  if (!os) throw IoError("write failed for " + path.string());
}

MaskSequence read_mask_replay(const std::filesystem::path& path, const ModelLayout& layout) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  MaskSequence out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    int epoch = 0;
    std::string layer_id;
    long long index = -1;
    std::string extra;
    if (!(ls >> epoch >> layer_id >> index) || (ls >> extra) || epoch < 1) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'epoch layer_id neuron_index'");
    }
    const auto li = layout.find_layer(layer_id);
    if (!li || !layout.layer(*li).parameterized()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown parameterized layer '" + layer_id + "'");
    }
    if (index < 0 || index >= layout.layer(*li).neuron_count()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": neuron index out of range");
    }
    auto [it, inserted] = out.try_emplace(epoch, layout.all_live_mask());
    layout.set_frozen(it->second, NeuronId{*li, static_cast<std::int32_t>(index)}, true);
  }
  return out;
}

FreezeMask replay_mask(const MaskSequence& masks, const ModelLayout& layout, int epoch) {
  const auto it = masks.find(epoch);
  if (it == masks.end()) return layout.all_live_mask();
  layout.validate(it->second);
  return it->second;
}

}  // namespace neq

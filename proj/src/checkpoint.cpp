#include <bit>
#include <fstream>
#include <sstream>
#include <string>

#include "neq/model.hpp"

namespace neq {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are written in host order");

constexpr const char* kMagic = "neq-checkpoint";
constexpr int kVersion = 1;

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "float32" : "float64";
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
  auto p = stem;
  p += suffix;
  return p;
}

template <typename T>
std::vector<std::pair<ParamRole, const Tensor<T>*>> tensors_of(const LayerParams<T>& p) {
  std::vector<std::pair<ParamRole, const Tensor<T>*>> out;
  if (!p.weight.empty()) out.emplace_back(ParamRole::weight, &p.weight);
  if (!p.bias.empty()) out.emplace_back(ParamRole::bias, &p.bias);
  if (!p.running_mean.empty()) out.emplace_back(ParamRole::running_mean, &p.running_mean);
  if (!p.running_var.empty()) out.emplace_back(ParamRole::running_var, &p.running_var);
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& stem) {
  std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  std::ofstream man(with_suffix(stem, ".manifest"));
  if (!bin || !man) throw IoError("cannot write checkpoint at " + stem.string());
  man << kMagic << ' ' << kVersion << '\n';
  man << "precision " << precision_name<T>() << '\n';
  man << "seed " << model.seed() << '\n';
  man << "architecture " << model.layout().arch().name << '\n';
  std::uint64_t offset = 0;
  const auto& layers = model.layout().layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    for (const auto& [role, t] : tensors_of(model.params()[i])) {
      man << "tensor " << layers[i].id << ' ' << param_role_name(role) << ' ' << offset << ' ' << t->size();
      for (auto d : t->shape()) man << ' ' << d;
      man << '\n';
      bin.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
      offset += t->size() * sizeof(T);
    }
  }
  if (!bin || !man) throw IoError("failed writing checkpoint at " + stem.string());
}

template <typename T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& stem) {
  std::ifstream man(with_suffix(stem, ".manifest"));
  std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
  if (!man || !bin) throw IoError("cannot open checkpoint at " + stem.string());

  std::string word;
  int version = 0;
  man >> word >> version;
  if (word != kMagic || version != kVersion) throw DataError("not a version-1 checkpoint manifest");
  std::string key, precision;
  man >> key >> precision;
  if (key != "precision" || precision != precision_name<T>()) {
    throw DataError("checkpoint precision " + precision + " does not match " + precision_name<T>());
  }
  std::string line;
  std::getline(man, line);
  std::size_t loaded = 0;
  while (std::getline(man, line)) {
    std::istringstream is(line);
    is >> key;
    if (key != "tensor") continue;
    std::string layer_id, role_name;
    std::uint64_t offset = 0, count = 0;
    is >> layer_id >> role_name >> offset >> count;
    Shape shape;
    for (std::int64_t d; is >> d;) shape.push_back(d);
    ParamRole role{};
    if (role_name == "weight") role = ParamRole::weight;
    else if (role_name == "bias") role = ParamRole::bias;
    else if (role_name == "running_mean") role = ParamRole::running_mean;
    else if (role_name == "running_var") role = ParamRole::running_var;
    else throw DataError("unknown parameter role '" + role_name + "'");
    Tensor<T>& dst = model.parameter(layer_id, role);
    if (dst.shape() != shape || dst.size() != count) {
      throw DataError("checkpoint tensor " + layer_id + "/" + role_name + " has shape " + to_string(shape) +
                      ", model expects " + to_string(dst.shape()));
    }
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(count * sizeof(T)));
    if (!bin) throw DataError("checkpoint payload truncated at " + layer_id + "/" + role_name);
    ++loaded;
  }
  std::size_t expected = 0;
  for (const auto& p : model.params()) expected += tensors_of(p).size();
  if (loaded != expected) {
    throw DataError("checkpoint holds " + std::to_string(loaded) + " tensors, model has " + std::to_string(expected));
  }
}

template void save_checkpoint(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint(const Model<double>&, const std::filesystem::path&);
template void load_checkpoint(Model<float>&, const std::filesystem::path&);
template void load_checkpoint(Model<double>&, const std::filesystem::path&);

}  // namespace neq

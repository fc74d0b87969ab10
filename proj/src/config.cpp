#include "neq/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "neq/errors.hpp"

namespace neq {

using nlohmann::json;

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"architecture", "string", "mlp, smallcnn or smallresnet"},
      {"widths", "integer list", "hidden units (mlp) or channels per stage"},
      {"batchnorm", "boolean", "batch-norm after each conv (smallcnn)"},
      {"blocks_per_stage", "integer", "residual blocks per stage (smallresnet)"},
      {"dataset", "string", "synthetic or idx"},
      {"synthetic_kind", "string", "rings or moons"},
      {"n_samples", "integer", "synthetic sample count"},
      {"noise", "number", "synthetic noise level"},
      {"image_size", "integer", "synthetic image side (0: raw 2-D features)"},
      {"classes", "integer", "number of classes"},
      {"data_seed", "integer", "seed for data generation and the probe split"},
      {"train_images", "string", "IDX training images"},
      {"train_labels", "string", "IDX training labels"},
      {"test_images", "string", "IDX test images (probe and test sets)"},
      {"test_labels", "string", "IDX test labels"},
      {"heldout_fraction", "number", "share held out for probe and test when there are no test files"},
      {"epochs", "integer", "training epochs"},
      {"batch_size", "integer", "minibatch size"},
      {"optimizer", "string", "sgd or adam"},
      {"lr", "number", "initial learning rate (default 0.1 for sgd, 0.001 for adam)"},
      {"momentum", "number", "SGD momentum"},
      {"weight_decay", "number", "L2 weight decay"},
      {"beta1", "number", "Adam beta1"},
      {"beta2", "number", "Adam beta2"},
      {"adam_eps", "number", "Adam epsilon"},
      {"milestones", "integer list", "epochs after which the learning rate is divided"},
      {"lr_divisor", "number", "divisor applied at each milestone"},
      {"policy", "string", "neq, stochastic, none or replay"},
      {"mu_eq", "number", "equilibrium momentum"},
      {"epsilon", "number", "equilibrium threshold"},
      {"probe_size", "integer", "probe set size"},
      {"p", "number", "stochastic freeze probability"},
      {"replay_path", "string", "mask file for the replay policy"},
      {"seed", "integer", "master seed (initialization, batch order, stochastic masks)"},
      {"output_dir", "string", "run directory"},
      {"precision", "string", "float32 or float64"},
      {"diagnostics", "boolean", "write per-epoch tracker CSVs"},
      {"checkpoint", "boolean", "save the final model"},
      {"include_optimizer_flops", "boolean", "count optimizer arithmetic in backward FLOPs"},
  };
  return keys;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

class Reader {
 public:
  explicit Reader(const json& j) : j_(j) {
    if (!j.is_object()) throw ConfigError("config", "top level must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (!find_key(key)) throw ConfigError(key, "unknown key");
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  std::int64_t integer(const char* key, std::int64_t def, std::int64_t lo, std::int64_t hi) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(key, "expected an integer");
    const auto x = v.get<std::int64_t>();
    if (x < lo || x > hi) {
      throw ConfigError(key, "value " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                                 std::to_string(hi) + "]");
    }
    return x;
  }

  std::uint64_t seed(const char* key, std::uint64_t def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  double number(const char* key, double def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(key, "expected a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(key, "must be finite");
    return x;
  }

  bool boolean(const char* key, bool def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(key, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const char* key, const std::string& def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(key, "expected a string");
    return v.get<std::string>();
  }

  std::vector<int> int_list(const char* key, std::vector<int> def) const {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    if (!v.is_array()) throw ConfigError(key, "expected a list of integers");
    std::vector<int> out;
    for (const auto& e : v) {
      if (!e.is_number_integer()) throw ConfigError(key, "expected a list of integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

 private:
  const json& j_;
};

void require_range(const char* key, double x, double lo, double hi, bool lo_open = false, bool hi_open = false) {
  const bool ok = (lo_open ? x > lo : x >= lo) && (hi_open ? x < hi : x <= hi);
  if (!ok) {
    std::ostringstream os;
    os << "value " << x << " outside " << (lo_open ? '(' : '[') << lo << ", " << hi << (hi_open ? ')' : ']');
    throw ConfigError(key, os.str());
  }
}

}  // namespace

TrainConfig config_from_json(const json& j) {
  const Reader r(j);
  TrainConfig c;
  TrainSpec& s = c.spec;

  s.arch.name = r.string("architecture", "smallcnn");
  if (s.arch.name != "mlp" && s.arch.name != "smallcnn" && s.arch.name != "smallresnet") {
    throw ConfigError("architecture", "unknown architecture '" + s.arch.name + "'");
  }
  s.arch.widths = r.int_list("widths", {4, 8, 8});
  for (int w : s.arch.widths) {
    if (w < 1) throw ConfigError("widths", "every width must be >= 1");
  }
  s.arch.batchnorm = r.boolean("batchnorm", true);
  s.arch.blocks_per_stage = static_cast<int>(r.integer("blocks_per_stage", 1, 1, 64));
  s.arch.classes = static_cast<int>(r.integer("classes", 10, 2, 256));

  auto& d = c.dataset;
  d.source = r.string("dataset", "synthetic");
  if (d.source != "synthetic" && d.source != "idx") throw ConfigError("dataset", "expected synthetic or idx");
  d.synthetic_kind = r.string("synthetic_kind", "rings");
  if (d.synthetic_kind != "rings" && d.synthetic_kind != "moons") {
    throw ConfigError("synthetic_kind", "expected rings or moons");
  }
  d.n_samples = r.integer("n_samples", 2000, 0, 10'000'000);
  d.noise = r.number("noise", 0.02);
  require_range("noise", d.noise, 0.0, 10.0);
  d.image_size = static_cast<int>(r.integer("image_size", 12, 0, 1024));
  if (d.image_size > 0 && d.image_size < 4) throw ConfigError("image_size", "must be 0 or >= 4");
  d.data_seed = r.seed("data_seed", 1234);
  d.train_images = r.string("train_images", "");
  d.train_labels = r.string("train_labels", "");
  d.test_images = r.string("test_images", "");
  d.test_labels = r.string("test_labels", "");
  d.heldout_fraction = r.number("heldout_fraction", 0.5);
  require_range("heldout_fraction", d.heldout_fraction, 0.0, 1.0, true, true);
  if (d.source == "idx") {
    for (const char* key : {"train_images", "train_labels"}) {
      const std::string path = r.string(key, "");
      if (path.empty()) throw ConfigError(key, "required when dataset is idx");
      if (!std::filesystem::exists(path)) throw ConfigError(key, "file not found: " + path);
    }
    if (d.test_images.empty() != d.test_labels.empty()) {
      throw ConfigError(d.test_images.empty() ? "test_images" : "test_labels", "test images and labels go together");
    }
    for (const char* key : {"test_images", "test_labels"}) {
      const std::string path = r.string(key, "");
      if (!path.empty() && !std::filesystem::exists(path)) throw ConfigError(key, "file not found: " + path);
    }
  }

  s.epochs = static_cast<int>(r.integer("epochs", 60, 1, 100000));
  s.batch_size = static_cast<int>(r.integer("batch_size", 100, 1, 1'000'000));
  const std::string opt = r.string("optimizer", "sgd");
  if (opt == "sgd") {
    s.optimizer.kind = OptimizerKind::sgd;
  } else if (opt == "adam") {
    s.optimizer.kind = OptimizerKind::adam;
  } else {
    throw ConfigError("optimizer", "expected sgd or adam");
  }
  s.schedule.initial_lr = r.number("lr", s.optimizer.kind == OptimizerKind::sgd ? 0.1 : 0.001);
  require_range("lr", s.schedule.initial_lr, 0.0, 1e6);
  s.optimizer.momentum = r.number("momentum", 0.9);
  require_range("momentum", s.optimizer.momentum, 0.0, 1.0, false, true);
  s.optimizer.weight_decay = r.number("weight_decay", 5e-4);
  require_range("weight_decay", s.optimizer.weight_decay, 0.0, 1.0);
  s.optimizer.beta1 = r.number("beta1", 0.9);
  require_range("beta1", s.optimizer.beta1, 0.0, 1.0, false, true);
  s.optimizer.beta2 = r.number("beta2", 0.999);
  require_range("beta2", s.optimizer.beta2, 0.0, 1.0, false, true);
  s.optimizer.eps = r.number("adam_eps", 1e-8);
  require_range("adam_eps", s.optimizer.eps, 0.0, 1.0, true);
  const auto milestones = r.int_list("milestones", {24, 36});
  const double divisor = r.number("lr_divisor", 10.0);
  require_range("lr_divisor", divisor, 0.0, 1e6, true);
  s.schedule.milestones.clear();
  int prev = 0;
  for (int m : milestones) {
    if (m <= prev) throw ConfigError("milestones", "must be positive and strictly increasing");
    s.schedule.milestones.push_back({m, divisor});
    prev = m;
  }

  s.policy.kind = parse_policy(r.string("policy", "neq"));
  s.policy.tracker.mu_eq = r.number("mu_eq", 0.5);
  require_range("mu_eq", s.policy.tracker.mu_eq, 0.0, 1.0, false, true);
  s.policy.tracker.epsilon = r.number("epsilon", 0.001);
  require_range("epsilon", s.policy.tracker.epsilon, 0.0, 1e6);
  s.policy.tracker.probe_size = static_cast<int>(r.integer("probe_size", 50, 1, 1'000'000));
  s.policy.p = r.number("p", 0.5);
  require_range("p", s.policy.p, 0.0, 1.0);
  c.replay_path = r.string("replay_path", "");
  if (s.policy.kind == PolicyKind::replay && c.replay_path.empty()) {
    throw ConfigError("replay_path", "required by the replay policy");
  }
  if (s.policy.kind == PolicyKind::neq) c.warnings = s.policy.tracker.validate();

  s.seed = r.seed("seed", 0);
  c.output_dir = r.string("output_dir", "");
  const std::string prec = r.string("precision", "float32");
  if (prec == "float32") {
    c.precision = Precision::float32;
  } else if (prec == "float64") {
    c.precision = Precision::float64;
  } else {
    throw ConfigError("precision", "expected float32 or float64");
  }
  c.diagnostics = r.boolean("diagnostics", false);
  c.checkpoint = r.boolean("checkpoint", false);
  s.include_optimizer_flops = r.boolean("include_optimizer_flops", true);
  s.validate();
  return c;
}

TrainConfig parse_config(const std::filesystem::path& path) { return config_from_json(read_config_json(path)); }

json read_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  return j;
}

json resolved_json(const TrainConfig& c) {
  const TrainSpec& s = c.spec;
  const auto& d = c.dataset;
  json j;
  j["architecture"] = s.arch.name;
  j["widths"] = s.arch.widths;
  j["batchnorm"] = s.arch.batchnorm;
  j["blocks_per_stage"] = s.arch.blocks_per_stage;
  j["classes"] = s.arch.classes;
  j["dataset"] = d.source;
  j["synthetic_kind"] = d.synthetic_kind;
  j["n_samples"] = d.n_samples;
  j["noise"] = d.noise;
  j["image_size"] = d.image_size;
  j["data_seed"] = d.data_seed;
  j["train_images"] = d.train_images;
  j["train_labels"] = d.train_labels;
  j["test_images"] = d.test_images;
  j["test_labels"] = d.test_labels;
  j["heldout_fraction"] = d.heldout_fraction;
  j["epochs"] = s.epochs;
  j["batch_size"] = s.batch_size;
  j["optimizer"] = optimizer_name(s.optimizer.kind);
  j["lr"] = s.schedule.initial_lr;
  j["momentum"] = s.optimizer.momentum;
  j["weight_decay"] = s.optimizer.weight_decay;
  j["beta1"] = s.optimizer.beta1;
  j["beta2"] = s.optimizer.beta2;
  j["adam_eps"] = s.optimizer.eps;
  std::vector<int> ms;
  for (const auto& m : s.schedule.milestones) ms.push_back(m.epoch);
  j["milestones"] = ms;
  j["lr_divisor"] = s.schedule.milestones.empty() ? 10.0 : s.schedule.milestones.front().divisor;
  j["policy"] = policy_name(s.policy.kind);
  j["mu_eq"] = s.policy.tracker.mu_eq;
  j["epsilon"] = s.policy.tracker.epsilon;
  j["probe_size"] = s.policy.tracker.probe_size;
  j["p"] = s.policy.p;
  j["replay_path"] = c.replay_path;
  j["seed"] = s.seed;
  j["output_dir"] = c.output_dir;
  j["precision"] = c.precision == Precision::float32 ? "float32" : "float64";
  j["diagnostics"] = c.diagnostics;
  j["checkpoint"] = c.checkpoint;
  j["include_optimizer_flops"] = s.include_optimizer_flops;
  return j;
}

json parse_override(const std::string& key, const std::string& value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError(key, "unknown key");
  if (k->type == "string") return value;
  if (k->type == "integer list") {
    json arr = json::array();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        std::size_t used = 0;
        const long long v = std::stoll(item, &used);
        if (used != item.size()) throw std::invalid_argument(item);
        arr.push_back(v);
      } catch (const std::exception&) {
        throw ConfigError(key, "expected comma-separated integers, got '" + value + "'");
      }
    }
    return arr;
  }
  try {
    return json::parse(value);
  } catch (const json::parse_error&) {
    throw ConfigError(key, "expected " + k->type + ", got '" + value + "'");
  }
}

DataSplit load_data(TrainConfig& c) {
  const auto& d = c.dataset;
  const int probe = c.spec.policy.tracker.probe_size;
  const std::uint64_t split_seed = d.data_seed + 1;
  DataSplit split;
  if (d.source == "synthetic") {
    auto all = gen_synthetic(d.synthetic_kind, static_cast<std::size_t>(d.n_samples), d.noise, d.data_seed,
                             {c.spec.arch.classes, d.image_size});
    split = split_probe(all, probe, split_seed, d.heldout_fraction);
  } else {
    auto train = load_idx_dataset(d.train_images, d.train_labels, c.spec.arch.classes);
    if (!d.test_images.empty()) {
      auto held = load_idx_dataset(d.test_images, d.test_labels, c.spec.arch.classes);
      if (held.sample_shape != train.sample_shape) throw DataError("train and test images differ in size");
      auto [p, rest] = draw_probe(held, probe, split_seed);
      split = {std::move(train), std::move(p), std::move(rest)};
    } else {
      split = split_probe(train, probe, split_seed, d.heldout_fraction);
    }
  }
  c.spec.arch.input_shape = split.train.sample_shape;
  c.spec.arch.classes = split.train.classes;
  if (c.spec.arch.name == "mlp" || split.train.sample_shape.size() == 3) return split;
  throw ConfigError("architecture", c.spec.arch.name + " needs image data (set image_size > 0)");
}

}  // namespace neq

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "neq/config.hpp"
#include "neq/errors.hpp"

using namespace neq;
using nlohmann::json;

namespace {

const std::filesystem::path kGolden = NEQ_TEST_SOURCE_DIR "/golden";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string field_of(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("minimal config resolves to the committed golden dump") {
  auto c = parse_config(kGolden / "desk_recipe.json");
  CHECK(resolved_json(c).dump(2) + "\n" == slurp(kGolden / "desk_recipe.resolved.json"));
  CHECK(c.spec.epochs == 60);
  CHECK(c.spec.schedule.lr_at(25) == doctest::Approx(0.01));
  CHECK(c.warnings.empty());
}

TEST_CASE("resolved dump parses back to the same config") {
  json j{{"architecture", "smallresnet"}, {"widths", {4, 8}}, {"optimizer", "adam"}, {"policy", "stochastic"},
         {"p", 0.25}, {"seed", 17}, {"milestones", {5, 9}}, {"lr_divisor", 5.0}, {"precision", "float64"}};
  auto c = config_from_json(j);
  auto again = config_from_json(resolved_json(c));
  CHECK(resolved_json(again) == resolved_json(c));
  CHECK(c.spec.schedule.initial_lr == 0.001);  // Adam default
  CHECK(c.precision == Precision::float64);
}

TEST_CASE("range and type errors name the field") {
  CHECK(field_of({{"epsilon", -1}}) == "epsilon");
  CHECK(field_of({{"mu_eq", 1.0}}) == "mu_eq");
  CHECK(field_of({{"probe_size", 0}}) == "probe_size");
  CHECK(field_of({{"p", 1.5}}) == "p");
  CHECK(field_of({{"lr", -0.1}}) == "lr");
  CHECK(field_of({{"epochs", 0}}) == "epochs");
  CHECK(field_of({{"batch_size", "many"}}) == "batch_size");
  CHECK(field_of({{"milestones", {36, 24}}}) == "milestones");
  CHECK(field_of({{"widths", {4, 0}}}) == "widths");
  CHECK(field_of({{"momentum", 1.0}}) == "momentum");
  CHECK(field_of({{"optimizer", "rmsprop"}}) == "optimizer");
  CHECK(field_of({{"policy", "random"}}) == "policy");
  CHECK(field_of({{"precision", "half"}}) == "precision");
  CHECK(field_of({{"seed", -3}}) == "seed");
  CHECK(field_of({{"policy", "replay"}}) == "replay_path");
  CHECK(field_of({{"learning_rate", 0.1}}) == "learning_rate");
  CHECK(field_of({{"dataset", "idx"}}) == "train_images");
  CHECK(field_of({{"dataset", "idx"}, {"train_images", "/nonexistent/a"}, {"train_labels", "/nonexistent/b"}}) ==
        "train_images");
  CHECK(field_of(json::array()) == "config");
}

TEST_CASE("legal edge values") {
  auto zero = config_from_json({{"epsilon", 0.0}});
  CHECK(zero.spec.policy.tracker.epsilon == 0.0);
  CHECK(zero.warnings.empty());
  auto high = config_from_json({{"mu_eq", 0.9}});
  CHECK(high.warnings.size() == 1);
}

TEST_CASE("malformed or missing files") {
  const auto dir = std::filesystem::temp_directory_path() / "neq_test_config";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.json") << "{ \"epochs\": ";
  CHECK_THROWS_AS(parse_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(parse_config(dir / "absent.json"), IoError);
}

TEST_CASE("command-line overrides") {
  CHECK(parse_override("epsilon", "0.01") == json(0.01));
  CHECK(parse_override("milestones", "10,20") == json({10, 20}));
  CHECK(parse_override("policy", "none") == json("none"));
  CHECK(parse_override("batchnorm", "false") == json(false));
  CHECK_THROWS_AS(parse_override("milestones", "10,x"), ConfigError);
  CHECK_THROWS_AS(parse_override("nope", "1"), ConfigError);
  CHECK_THROWS_AS(parse_override("epochs", "ten"), ConfigError);
}

TEST_CASE("load_data sets the model input from the data") {
  auto c = config_from_json({{"n_samples", 400}, {"image_size", 10}, {"classes", 4}});
  auto d = load_data(c);
  CHECK(c.spec.arch.input_shape == Shape{1, 10, 10});
  CHECK(c.spec.arch.classes == 4);
  CHECK(d.probe.size() == 50);
  CHECK(d.train.size() == 200);
  CHECK(d.test.size() == 150);

  auto raw = config_from_json({{"image_size", 0}});
  CHECK_THROWS_AS(load_data(raw), ConfigError);
  auto mlp = config_from_json({{"image_size", 0}, {"architecture", "mlp"}, {"widths", {16}}});
  load_data(mlp);
  CHECK(mlp.spec.arch.input_shape == Shape{2});
}

// Command-line front end: train, sweep, plot, replay-mask.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "neq/config.hpp"
#include "neq/errors.hpp"
#include "neq/metrics.hpp"
#include "neq/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace neq;

namespace {

/// Flags shared by every subcommand that builds a config: --config plus one
/// option per config key.
struct ConfigFlags {
  std::string config_file;
  std::map<std::string, std::string> values;
  CLI::App* app = nullptr;

  void attach(CLI::App* sub) {
    app = sub;
    sub->add_option("-c,--config", config_file, "JSON config file; flags override its keys");
    for (const auto& k : config_keys()) sub->add_option("--" + k.name, values[k.name], k.help + " [" + k.type + "]");
  }

  json merged() const {
    json j = config_file.empty() ? json::object() : read_config_json(config_file);
    for (const auto& k : config_keys()) {
      if (app->count("--" + k.name)) j[k.name] = parse_override(k.name, values.at(k.name));
    }
    return j;
  }
};

fs::path output_root() {
  const char* env = std::getenv("NEQ_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path("runs");
}

std::string default_run_name(const TrainConfig& c) {
  return c.spec.arch.name + "-" + policy_name(c.spec.policy.kind) + "-seed" + std::to_string(c.spec.seed);
}

struct RunSummary {
  double final_accuracy = 0.0;
  double mean_bprop_flops = 0.0;  // per iteration, over all epochs
  double mean_updated_fraction = 0.0;
  std::vector<MetricsRecord> log;
};

template <typename T>
RunSummary train_into(TrainConfig c, const fs::path& dir, bool verbose) {
  fs::create_directories(dir);
  auto data = load_data(c);
  if (c.spec.policy.kind == PolicyKind::replay) {
    c.spec.policy.replay = read_mask_replay(c.replay_path, build_layout(c.spec.arch));
  }
  c.output_dir = dir.string();
  write_text(dir / "resolved_config.json", resolved_json(c).dump(2) + "\n");

  TrainHooks<T> hooks;
  if (c.diagnostics) {
    fs::create_directories(dir / "diagnostics");
    hooks.on_tracker = [&](int epoch, const typename Tracker<T>::StepResult& r) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.csv", epoch);
      write_diagnostics_csv(dir / "diagnostics" / name, build_layout(c.spec.arch), r.diagnostics);
    };
  }
  auto result = run_training<T>(c.spec, data, hooks);
  if (verbose) {
    for (const auto& r : result.log) {
      std::printf("epoch %3d  lr %-8.4g loss %-9.5f acc %.4f  updated %.3f  bprop %.4g\n", r.epoch, r.lr, r.train_loss,
                  r.test_accuracy, r.updated_fraction, r.bprop_flops_mean);
    }
  }
  write_metrics(result.log, dir / "metrics.csv");
  write_timing(result.log, dir / "timing.csv");
  write_iteration_flops(result.iteration_flops, dir / "iteration_flops.txt");
  write_mask_replay(dir / "masks.txt", result.model.layout(), result.masks);
  std::vector<int> milestones;
  for (const auto& m : c.spec.schedule.milestones) milestones.push_back(m.epoch);
  emit_plots(result.log, milestones, dir / "plot.svg", default_run_name(c));
  if (c.checkpoint) save_checkpoint(result.model, dir / "model");

  RunSummary s;
  s.final_accuracy = result.log.back().test_accuracy;
  for (const auto& r : result.log) {
    s.mean_bprop_flops += r.bprop_flops_mean;
    s.mean_updated_fraction += r.updated_fraction;
  }
  s.mean_bprop_flops /= static_cast<double>(result.log.size());
  s.mean_updated_fraction /= static_cast<double>(result.log.size());
  s.log = std::move(result.log);
  return s;
}

RunSummary train_into(const TrainConfig& c, const fs::path& dir, bool verbose) {
  return c.precision == Precision::float64 ? train_into<double>(c, dir, verbose) : train_into<float>(c, dir, verbose);
}

fs::path resolve_dir(const TrainConfig& c, const std::string& fallback_name) {
  return c.output_dir.empty() ? output_root() / fallback_name : fs::path(c.output_dir);
}

void print_warnings(const TrainConfig& c) {
  for (const auto& w : c.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigFlags& flags, bool quiet) {
  auto c = config_from_json(flags.merged());
  print_warnings(c);
  const auto dir = resolve_dir(c, default_run_name(c));
  auto s = train_into(c, dir, !quiet);
  std::printf("run %s: final accuracy %.4f, mean bprop FLOPs/iteration %.6g, mean updated fraction %.4f\n",
              dir.string().c_str(), s.final_accuracy, s.mean_bprop_flops, s.mean_updated_fraction);
  return 0;
}

struct Stat {
  double mean = 0.0, std = 0.0;
};

Stat stat(const std::vector<double>& v) {
  Stat s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) s.std += (x - s.mean) * (x - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(v.size() - 1));
  }
  return s;
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item.find_first_not_of("0123456789") != std::string::npos || item.size() > 19) {
      throw ConfigError("seeds", "expected comma-separated non-negative integers, got '" + text + "'");
    }
    out.push_back(std::stoull(item));
  }
  if (out.empty()) throw ConfigError("seeds", "at least one seed is required");
  return out;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& seeds_text, const std::vector<std::string>& grids, int jobs) {
  const json base = flags.merged();
  const auto seeds = parse_seeds(seeds_text);

  // key=v1,v2,... ; every combination is run for every seed
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& g : grids) {
    const auto eq = g.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("grid", "expected key=v1,v2,... got '" + g + "'");
    std::pair<std::string, std::vector<std::string>> axis{g.substr(0, eq), {}};
    if (axis.first == "seed") throw ConfigError("grid", "use --seeds for the seed axis");
    std::stringstream ss(g.substr(eq + 1));
    std::string v;
    while (std::getline(ss, v, ',')) {
      if (!v.empty()) axis.second.push_back(v);
    }
    if (axis.second.empty()) throw ConfigError("grid", "no values for '" + axis.first + "'");
    parse_override(axis.first, axis.second.front());  // rejects unknown keys early
    axes.push_back(std::move(axis));
  }
  std::vector<std::vector<std::string>> combos{{}};
  for (const auto& [key, values] : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& c : combos) {
      for (const auto& v : values) {
        auto e = c;
        e.push_back(v);
        next.push_back(std::move(e));
      }
    }
    combos = std::move(next);
  }

  struct Job {
    std::size_t combo;
    TrainConfig config;
    fs::path dir;
  };
  const auto probe_cfg = config_from_json(base);
  print_warnings(probe_cfg);
  const fs::path root = resolve_dir(probe_cfg, "sweep");
  std::vector<Job> todo;
  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    std::string name;
    json j = base;
    j.erase("output_dir");
    for (std::size_t a = 0; a < axes.size(); ++a) {
      j[axes[a].first] = parse_override(axes[a].first, combos[ci][a]);
      name += axes[a].first + "=" + combos[ci][a] + "_";
    }
    for (auto seed : seeds) {
      j["seed"] = seed;
      todo.push_back({ci, config_from_json(j), root / (name + "seed" + std::to_string(seed))});
    }
  }

  std::vector<RunSummary> results(todo.size());
  jobs = std::max(1, jobs);
  for (std::size_t start = 0; start < todo.size(); start += static_cast<std::size_t>(jobs)) {
    std::vector<std::future<RunSummary>> running;
    const std::size_t end = std::min(todo.size(), start + static_cast<std::size_t>(jobs));
    for (std::size_t i = start; i < end; ++i) {
      running.push_back(std::async(std::launch::async, [&, i] { return train_into(todo[i].config, todo[i].dir, false); }));
    }
    for (std::size_t i = start; i < end; ++i) {
      results[i] = running[i - start].get();
      std::printf("done %s: final accuracy %.4f, mean bprop FLOPs %.6g\n", todo[i].dir.string().c_str(),
                  results[i].final_accuracy, results[i].mean_bprop_flops);
      std::fflush(stdout);
    }
  }

  std::ostringstream csv;
  for (const auto& a : axes) csv << a.first << ',';
  csv << "runs,final_accuracy_mean,final_accuracy_std,bprop_flops_mean,bprop_flops_std,updated_fraction_mean,"
         "updated_fraction_std\n";
  std::printf("\n");
  for (std::size_t ci = 0; ci < combos.size(); ++ci) {
    std::vector<double> acc, flops, frac;
    for (std::size_t i = 0; i < todo.size(); ++i) {
      if (todo[i].combo != ci) continue;
      acc.push_back(results[i].final_accuracy);
      flops.push_back(results[i].mean_bprop_flops);
      frac.push_back(results[i].mean_updated_fraction);
    }
    const auto sa = stat(acc), sf = stat(flops), su = stat(frac);
    std::string label;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      csv << combos[ci][a] << ',';
      label += axes[a].first + "=" + combos[ci][a] + " ";
    }
    char line[512];
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", acc.size(), sa.mean, sa.std, sf.mean,
                  sf.std, su.mean, su.std);
    csv << line;
    std::printf("%-32s accuracy %.2f%% +- %.2f  bprop FLOPs %.4gM +- %.3gM  updated %.3f\n",
                label.empty() ? "(base)" : label.c_str(), 100 * sa.mean, 100 * sa.std, sf.mean / 1e6, sf.std / 1e6,
                su.mean);
  }
  write_text(root / "summary.csv", csv.str());
  std::printf("summary written to %s\n", (root / "summary.csv").string().c_str());
  return 0;
}

int cmd_plot(const std::string& metrics, std::string out, std::string milestones_text, const std::string& title) {
  const auto log = read_metrics(metrics);
  std::vector<int> milestones;
  const auto sibling = fs::path(metrics).parent_path() / "resolved_config.json";
  if (milestones_text.empty() && fs::exists(sibling)) {
    for (const auto& m : read_config_json(sibling).value("milestones", json::array())) milestones.push_back(m.get<int>());
  } else if (!milestones_text.empty()) {
    for (const auto& m : parse_override("milestones", milestones_text)) milestones.push_back(m.get<int>());
  }
  if (out.empty()) out = (fs::path(metrics).parent_path() / "plot.svg").string();
  emit_plots(log, milestones, out, title);
  std::printf("plot written to %s\n", out.c_str());
  return 0;
}

int cmd_replay(const std::string& run_dir, std::string masks, std::string out, bool quiet) {
  json j = read_config_json(fs::path(run_dir) / "resolved_config.json");
  if (masks.empty()) masks = (fs::path(run_dir) / "masks.txt").string();
  j["policy"] = "replay";
  j["replay_path"] = masks;
  j["output_dir"] = out.empty() ? (fs::path(run_dir) / "replay").string() : out;
  auto c = config_from_json(j);
  const fs::path dir = c.output_dir;
  train_into(c, dir, !quiet);
  std::ifstream a(fs::path(run_dir) / "metrics.csv", std::ios::binary), b(dir / "metrics.csv", std::ios::binary);
  const std::string original((std::istreambuf_iterator<char>(a)), {}), replayed((std::istreambuf_iterator<char>(b)), {});
  if (original.empty()) {
    std::printf("replayed into %s (no original metrics to compare)\n", dir.string().c_str());
    return 0;
  }
  if (original != replayed) {
    throw Error("replay_mismatch", "metrics of the replayed run differ from " + (fs::path(run_dir) / "metrics.csv").string());
  }
  std::printf("replay identical: %s matches %s\n", (dir / "metrics.csv").string().c_str(),
              (fs::path(run_dir) / "metrics.csv").string().c_str());
  return 0;
}

int error_line(const std::string& category, const std::string& field, const std::string& message, int code) {
  std::fprintf(stderr, "neq: error category=%s%s message=%s\n", category.c_str(),
               field.empty() ? "" : (" field=" + field).c_str(), json(message).dump().c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuron-equilibrium training harness"};
  app.require_subcommand(1);
  app.fallthrough();
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "no per-epoch output");

  ConfigFlags train_flags, sweep_flags;
  auto* train = app.add_subcommand("train", "train one configuration");
  train_flags.attach(train);

  auto* sweep = app.add_subcommand("sweep", "grid of configurations over a seed list, with mean and std summary");
  sweep_flags.attach(sweep);
  std::string seeds = "0,1,2,3,4";
  std::vector<std::string> grids;
  int jobs = 1;
  sweep->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();
  sweep->add_option("--grid", grids, "key=v1,v2,... (repeatable), e.g. epsilon=0.0001,0.001,0.01");
  sweep->add_option("-j,--jobs", jobs, "runs in parallel")->capture_default_str();

  auto* plot = app.add_subcommand("plot", "render a metrics CSV as an SVG");
  std::string metrics, plot_out, plot_milestones, plot_title;
  plot->add_option("metrics", metrics, "metrics.csv")->required();
  plot->add_option("-o,--output", plot_out, "SVG path (default: plot.svg next to the CSV)");
  plot->add_option("--milestones", plot_milestones, "comma-separated epochs (default: from resolved_config.json)");
  plot->add_option("--title", plot_title, "plot title");

  auto* replay = app.add_subcommand("replay-mask", "retrain a run from its recorded masks and compare metrics");
  std::string run_dir, masks, replay_out;
  replay->add_option("run_dir", run_dir, "directory of a finished run")->required();
  replay->add_option("--masks", masks, "mask file (default: <run_dir>/masks.txt)");
  replay->add_option("-o,--output", replay_out, "output directory (default: <run_dir>/replay)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return error_line("usage", "", e.what(), 2);
  }

  try {
    if (*train) return cmd_train(train_flags, quiet);
    if (*sweep) return cmd_sweep(sweep_flags, seeds, grids, jobs);
    if (*plot) return cmd_plot(metrics, plot_out, plot_milestones, plot_title);
    if (*replay) return cmd_replay(run_dir, masks, replay_out, quiet);
  } catch (const ConfigError& e) {
    return error_line(e.category(), e.field(), e.what(), 2);
  } catch (const Error& e) {
    const int code = e.category() == "data" || e.category() == "io" ? 3 : e.category() == "replay_mismatch" ? 5 : 4;
    return error_line(e.category(), "", e.what(), code);
  } catch (const fs::filesystem_error& e) {
    return error_line("io", "", e.what(), 3);
  } catch (const std::exception& e) {
    return error_line("internal", "", e.what(), 4);
  }
  return 0;
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neq/trainer.hpp"

namespace neq {

/// Header of metrics.csv. Wall time is kept out of this file so two runs of
/// the same config compare byte for byte; it goes to timing.csv instead.
inline constexpr const char* kMetricsHeader =
    "epoch,bprop_flops_mean,bprop_flops_std,updated_neurons,updated_fraction,train_loss,test_accuracy,lr";
inline constexpr const char* kTimingHeader = "epoch,wall_seconds";

/// Checks the record invariants: non-empty, epochs strictly increasing,
/// fraction in [0, 1]. Throws StateError.
void validate_log(const std::vector<MetricsRecord>& log);

std::string format_metrics(const std::vector<MetricsRecord>& log);
void write_metrics(const std::vector<MetricsRecord>& log, const std::filesystem::path& path);
void write_timing(const std::vector<MetricsRecord>& log, const std::filesystem::path& path);
/// Parses a file written by write_metrics (wall_seconds stays 0).
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

/// One row per epoch: epoch followed by the FLOPs of each iteration.
void write_iteration_flops(const std::vector<std::vector<std::int64_t>>& flops, const std::filesystem::path& path);

/// Three stacked panels (backward FLOPs, updated fraction, test accuracy)
/// against epoch, with dashed lines at the schedule milestones.
std::string render_plot(const std::vector<MetricsRecord>& log, const std::vector<int>& milestones,
                        const std::string& title = "");
void emit_plots(const std::vector<MetricsRecord>& log, const std::vector<int>& milestones,
                const std::filesystem::path& path, const std::string& title = "");

/// Writes text, throwing IoError if the file cannot be written.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace neq

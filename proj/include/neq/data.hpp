#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "neq/tensor.hpp"

namespace neq {

/// Samples stored flat in 32-bit precision; any sample count including zero.
struct Dataset {
  Shape sample_shape;               // {C, H, W} images or {features}
  std::vector<float> x;             // size() * sample_size() values, sample-major
  std::vector<std::int32_t> y;
  int classes = 0;

  std::size_t size() const noexcept { return y.size(); }
  std::size_t sample_size() const noexcept { return element_count(sample_shape); }
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Stacks the given samples into [n, ...sample_shape]. Throws DataError if
  /// indices is empty.
  template <typename T>
  Tensor<T> batch(std::span<const std::size_t> indices) const;
  template <typename T>
  Tensor<T> all() const;
  /// Throws DataError on inconsistent sizes or labels outside [0, classes).
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Reads an IDX image file (magic 0x803, [N, H, W] unsigned bytes) and
/// label file (magic 0x801). Pixels become k / 255 and the result has
/// shape {1, H, W} per sample.
Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, int classes = 10);

/// Writes single-channel image data with pixels in [0, 1] rounded to the
/// nearest k / 255. Pixels already on that grid round-trip exactly.
void write_idx_dataset(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels);

struct SyntheticOptions {
  int classes = 2;       // rings: number of radius bands; moons is always 2
  int image_size = 0;    // 0: raw 2-D feature vectors; else rendered S x S images
};

/// "rings": class k lives in radius band k; "moons": two interleaved arcs.
/// Deterministic in seed, classes balanced (label i % classes). Image
/// pixels are quantized to k / 255.
Dataset gen_synthetic(const std::string& kind, std::size_t n, double noise, std::uint64_t seed,
                      SyntheticOptions options = {});

struct DataSplit {
  Dataset train;
  Dataset probe;
  Dataset test;
};

/// Draws the probe set from a held-out pool, stratified by class when
/// possible, and returns (probe, remainder). Throws ConfigError if
/// probe_size < 1 or exceeds the pool.
std::pair<Dataset, Dataset> draw_probe(const Dataset& heldout, int probe_size, std::uint64_t seed);

/// Splits one dataset: a stratified held-out fraction is set aside, the
/// probe is drawn from it, and the rest of it is the test set.
DataSplit split_probe(const Dataset& data, int probe_size, std::uint64_t seed, double heldout_fraction = 0.25);

}  // namespace neq

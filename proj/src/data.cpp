#include "neq/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "neq/errors.hpp"

namespace neq {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{sample_shape, {}, {}, classes};
  const std::size_t per = sample_size();
  out.x.reserve(indices.size() * per);
  out.y.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw DataError("sample index out of range");
    out.x.insert(out.x.end(), x.begin() + static_cast<std::ptrdiff_t>(i * per),
                 x.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.y.push_back(y[i]);
  }
  return out;
}

template <typename T>
Tensor<T> Dataset::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t per = sample_size();
  std::vector<T> v(indices.size() * per);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw DataError("sample index out of range");
    const float* src = x.data() + indices[b] * per;
    std::transform(src, src + per, v.begin() + static_cast<std::ptrdiff_t>(b * per),
                   [](float f) { return static_cast<T>(f); });
  }
  Shape s{static_cast<std::int64_t>(indices.size())};
  s.insert(s.end(), sample_shape.begin(), sample_shape.end());
  return Tensor<T>(std::move(s), std::move(v));
}

template <typename T>
Tensor<T> Dataset::all() const {
  std::vector<std::size_t> idx(size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return batch<T>(idx);
}

void Dataset::validate() const {
  if (x.size() != size() * sample_size()) throw DataError("sample data does not match labels and sample shape");
  for (auto label : y) {
    if (label < 0 || label >= classes) {
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template Tensor<float> Dataset::batch(std::span<const std::size_t>) const;
template Tensor<double> Dataset::batch(std::span<const std::size_t>) const;
template Tensor<float> Dataset::all() const;
template Tensor<double> Dataset::all() const;

// ---------------------------------------------------------------------------
// IDX

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

void put_be32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  os.write(b.data(), 4);
}

/// Returns dims after checking magic and payload length.
std::vector<std::uint32_t> idx_header(const std::vector<unsigned char>& b, std::uint32_t magic, std::size_t rank,
                                      const std::filesystem::path& path) {
  const std::size_t header = 4 + 4 * rank;
  if (b.size() < header) throw DataError(path.string() + ": truncated IDX header");
  if (be32(b, 0) != magic) throw DataError(path.string() + ": bad IDX magic number");
  std::vector<std::uint32_t> dims(rank);
  std::size_t payload = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    dims[i] = be32(b, 4 + 4 * i);
    payload *= dims[i];
  }
  if (b.size() < header + payload) throw DataError(path.string() + ": truncated IDX payload");
  if (b.size() > header + payload) throw DataError(path.string() + ": trailing bytes after IDX payload");
  return dims;
}

}  // namespace

Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels, int classes) {
  if (classes < 1 || classes > 256) throw ConfigError("classes", "must lie in [1, 256] for IDX labels");
  const auto ib = read_file(images);
  const auto lb = read_file(labels);
  const auto idims = idx_header(ib, 0x00000803, 3, images);
  const auto ldims = idx_header(lb, 0x00000801, 1, labels);
  if (idims[0] != ldims[0]) {
    throw DataError("image count " + std::to_string(idims[0]) + " does not match label count " +
                    std::to_string(ldims[0]));
  }
  if (idims[0] > 0 && (idims[1] == 0 || idims[2] == 0)) throw DataError(images.string() + ": zero image extent");
  Dataset d;
  d.sample_shape = {1, std::max<std::int64_t>(idims[1], 1), std::max<std::int64_t>(idims[2], 1)};
  d.classes = classes;
  const std::size_t n = idims[0];
  const std::size_t per = std::size_t{idims[1]} * idims[2];
  d.x.resize(n * per);
  for (std::size_t i = 0; i < n * per; ++i) d.x[i] = static_cast<float>(ib[16 + i]) / 255.0f;
  d.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.y[i] = lb[8 + i];
  d.validate();
  return d;
}

void write_idx_dataset(const Dataset& data, const std::filesystem::path& images, const std::filesystem::path& labels) {
  data.validate();
  if (data.sample_shape.size() != 3 || data.sample_shape[0] != 1) {
    throw DataError("IDX export needs single-channel {1, H, W} samples");
  }
  if (data.classes > 256) throw DataError("IDX labels hold at most 256 classes");
  std::ofstream io(images, std::ios::binary), lo(labels, std::ios::binary);
  if (!io) throw IoError("cannot write " + images.string());
  if (!lo) throw IoError("cannot write " + labels.string());
  put_be32(io, 0x00000803);
  put_be32(io, static_cast<std::uint32_t>(data.size()));
  put_be32(io, static_cast<std::uint32_t>(data.sample_shape[1]));
  put_be32(io, static_cast<std::uint32_t>(data.sample_shape[2]));
  for (float v : data.x) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DataError("IDX export needs pixels in [0, 1]");
    io.put(static_cast<char>(std::lround(v * 255.0f)));
  }
  put_be32(lo, 0x00000801);
  put_be32(lo, static_cast<std::uint32_t>(data.size()));
  for (auto label : data.y) lo.put(static_cast<char>(label));
  if (!io || !lo) throw IoError("IDX write failed");
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

float quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<float>(std::lround(c * 255.0)) / 255.0f;
}

}  // namespace

Dataset gen_synthetic(const std::string& kind, std::size_t n, double noise, std::uint64_t seed,
                      SyntheticOptions options) {
  if (kind != "rings" && kind != "moons") throw ConfigError("synthetic_kind", "unknown synthetic kind '" + kind + "'");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ConfigError("noise", "must be >= 0");
  if (options.image_size < 0 || (options.image_size > 0 && options.image_size < 4)) {
    throw ConfigError("image_size", "must be 0 or >= 4");
  }
  const int classes = kind == "moons" ? 2 : options.classes;
  if (classes < 2) throw ConfigError("classes", "synthetic data needs at least 2 classes");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int S = options.image_size;

  Dataset d;
  d.classes = classes;
  d.sample_shape = S > 0 ? Shape{1, S, S} : Shape{2};
  d.x.reserve(n * d.sample_size());
  d.y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(classes));
    const double theta = 2.0 * std::numbers::pi * uni(rng);
    double px = 0.0, py = 0.0, radius = 0.0;
    if (kind == "rings") {
      // Band k covers radii [(k + 0.15) / C, (k + 0.85) / C] before noise.
      radius = (k + 0.15 + 0.7 * uni(rng) + noise * gauss(rng)) / classes;
      px = radius * std::cos(theta);
      py = radius * std::sin(theta);
    } else {
      const double t = std::numbers::pi * uni(rng);
      px = k == 0 ? std::cos(t) : 1.0 - std::cos(t);
      py = k == 0 ? std::sin(t) : 0.5 - std::sin(t);
      px += noise * gauss(rng);
      py += noise * gauss(rng);
    }
    if (S == 0) {
      d.x.push_back(static_cast<float>(px));
      d.x.push_back(static_cast<float>(py));
    } else {
      const double half = (S - 1) / 2.0;
      const double cx = half + (uni(rng) - 0.5);
      const double cy = half + (uni(rng) - 0.5);
      for (int r = 0; r < S; ++r) {
        for (int c = 0; c < S; ++c) {
          double v = 0.0;
          if (kind == "rings") {
            const double R = 1.0 + std::max(radius, 0.0) * (half - 1.0);
            const double dist = std::hypot(r - cy, c - cx);
            v = std::exp(-(dist - R) * (dist - R) / (2.0 * 0.6 * 0.6));
          } else {
            // Map the plane region [-1.5, 2.5] x [-1, 1.5] onto the canvas.
            const double mx = (px + 1.5) / 4.0 * (S - 1);
            const double my = (1.5 - py) / 2.5 * (S - 1);
            v = std::exp(-((c - mx) * (c - mx) + (r - my) * (r - my)) / 2.0);
          }
          d.x.push_back(quantize(v + 0.1 * noise * gauss(rng)));
        }
      }
    }
    d.y.push_back(k);
  }
  return d;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

/// Shuffled indices per class (a single group when labels are unknown).
std::vector<std::vector<std::size_t>> class_groups(const Dataset& d, std::mt19937_64& rng) {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(std::max(d.classes, 1)));
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto k = d.classes > 0 ? static_cast<std::size_t>(d.y[i]) : 0;
    groups.at(k).push_back(i);
  }
  for (auto& g : groups) std::shuffle(g.begin(), g.end(), rng);
  return groups;
}

}  // namespace

std::pair<Dataset, Dataset> draw_probe(const Dataset& heldout, int probe_size, std::uint64_t seed) {
  if (probe_size < 1) throw ConfigError("probe_size", "must be >= 1");
  if (static_cast<std::size_t>(probe_size) > heldout.size()) {
    throw ConfigError("probe_size", "probe of " + std::to_string(probe_size) + " exceeds the held-out pool of " +
                                        std::to_string(heldout.size()));
  }
  std::mt19937_64 rng(seed);
  auto groups = class_groups(heldout, rng);
  // Round-robin over classes gives an even stratification and falls back to
  // the remaining classes when one runs out.
  std::vector<std::size_t> probe, rest;
  std::vector<std::size_t> cursor(groups.size(), 0);
  while (probe.size() < static_cast<std::size_t>(probe_size)) {
    for (std::size_t k = 0; k < groups.size() && probe.size() < static_cast<std::size_t>(probe_size); ++k) {
      if (cursor[k] < groups[k].size()) probe.push_back(groups[k][cursor[k]++]);
    }
  }
  std::vector<bool> taken(heldout.size(), false);
  for (auto i : probe) taken[i] = true;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    if (!taken[i]) rest.push_back(i);
  }
  return {heldout.subset(probe), heldout.subset(rest)};
}

DataSplit split_probe(const Dataset& data, int probe_size, std::uint64_t seed, double heldout_fraction) {
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) throw ConfigError("heldout_fraction", "must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  auto groups = class_groups(data, rng);
  std::vector<bool> held(data.size(), false);
  for (const auto& g : groups) {
    const auto take = static_cast<std::size_t>(std::floor(static_cast<double>(g.size()) * heldout_fraction));
    for (std::size_t j = 0; j < take; ++j) held[g[j]] = true;
  }
  std::vector<std::size_t> train_idx, held_idx;
  for (std::size_t i = 0; i < data.size(); ++i) (held[i] ? held_idx : train_idx).push_back(i);
  auto [probe, test] = draw_probe(data.subset(held_idx), probe_size, rng());
  return {data.subset(train_idx), std::move(probe), std::move(test)};
}

}  // namespace neq

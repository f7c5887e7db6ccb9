#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hnd {

struct MapDims {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::size_t area() const noexcept { return static_cast<std::size_t>(height) * width; }
  friend bool operator==(const MapDims&, const MapDims&) = default;
};

// HNDA v1 layout, all integers little-endian:
//   "HNDA" | version u32 = 1 | U u32 | N u32 | h u32 | w u32
//   | layer_name_len u32 | layer_name (UTF-8)
//   | N x (id_len u32 | id UTF-8)
//   | U*N*h*w float32 LE, index order (unit, image, row, col)
inline constexpr std::uint32_t kHndaVersion = 1;

// One layer's activations: U units x N images x h x w finite floats.
// Immutable after construction; file-backed sets read slices on demand with
// positional reads, so concurrent readers need no locking.
class ActivationSet {
 public:
  ActivationSet() = default;

  // Throws NonFiniteValue / InvalidArgument on bad input.
  static ActivationSet from_values(std::string layer_name, std::uint32_t unit_count,
                                   std::vector<std::string> image_ids, MapDims dims, std::vector<float> values);

  const std::string& layer_name() const noexcept { return layer_name_; }
  std::uint32_t unit_count() const noexcept { return unit_count_; }
  std::size_t image_count() const noexcept { return image_ids_.size(); }
  const std::vector<std::string>& image_ids() const noexcept { return image_ids_; }
  MapDims map_dims() const noexcept { return dims_; }
  bool file_backed() const noexcept;

  // N*h*w values of one unit, image-major.
  std::vector<float> unit_slice(std::uint32_t unit) const;
  void read_map(std::uint32_t unit, std::size_t image, std::span<float> out) const;

  struct Storage;

 private:
  friend ActivationSet read_activations(const std::filesystem::path& path);

  std::string layer_name_;
  std::uint32_t unit_count_ = 0;
  std::vector<std::string> image_ids_;
  MapDims dims_;
  std::shared_ptr<const Storage> storage_;
};

// Opens and validates an HNDA file. The payload is scanned once for
// non-finite values but not retained.
ActivationSet read_activations(const std::filesystem::path& path);
void write_activations(const std::filesystem::path& path, const ActivationSet& set);

struct UnitSummary {
  std::uint32_t unit_index = 0;
  std::vector<float> max_scores;  // per image, max over the h x w map
  float layer_max = 0.0f;         // max over every unit, image and pixel
};

std::vector<float> map_maxima(std::span<const float> unit_slice, MapDims dims);

// Per-unit maxima plus the layer-wide maximum. `jobs` = 0 uses all cores.
std::vector<UnitSummary> unit_summaries(const ActivationSet& set, unsigned jobs = 1);

enum class QuantileMethod { Exact, Reservoir };

struct QuantileOptions {
  QuantileMethod method = QuantileMethod::Exact;
  std::size_t reservoir_size = std::size_t{1} << 16;
  std::uint64_t seed = 0;
};

inline constexpr double kDefaultActivationQuantile = 0.005;

// Smallest sample value T with at most floor(q * M) of the M values strictly
// above it.
float upper_quantile(std::span<const float> values, double q);

float activation_quantile(const ActivationSet& set, std::uint32_t unit, double q, const QuantileOptions& options = {});
float activation_quantile(std::span<const float> unit_slice, double q, const QuantileOptions& options = {});

}  // namespace hnd

#include "hnd/activation_store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "hnd/errors.hpp"
#include "hnd/parallel.hpp"

namespace hnd {

namespace {

constexpr std::array<char, 4> kMagic{'H', 'N', 'D', 'A'};

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0x0000FF00u) | ((v << 8) & 0x00FF0000u) | (v << 24);
}

std::uint32_t from_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return byteswap32(v);
}

void floats_from_le(std::span<float> values) {
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& f : values) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
  }
}

class FileHandle {
 public:
  explicit FileHandle(const std::filesystem::path& path) : fd_(::open(path.c_str(), O_RDONLY | O_CLOEXEC)) {
    if (fd_ < 0) throw Error(ErrorCode::Io, "cannot open activation file " + path.string());
  }
  FileHandle(const FileHandle&) = delete;
  FileHandle& operator=(const FileHandle&) = delete;
  ~FileHandle() {
    if (fd_ >= 0) ::close(fd_);
  }

  // Reads exactly out.size() bytes at `offset`; false on short read.
  bool read_at(std::uint64_t offset, std::span<std::byte> out) const {
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      done += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  int fd_;
};

void check_finite(std::span<const float> values, std::size_t base_index) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]))
      throw Error(ErrorCode::NonFiniteValue, "non-finite activation at flat index " + std::to_string(base_index + i));
  }
}

}  // namespace

struct ActivationSet::Storage {
  std::vector<float> values;
  std::unique_ptr<FileHandle> file;
  std::uint64_t payload_offset = 0;
};

bool ActivationSet::file_backed() const noexcept { return storage_ && storage_->file != nullptr; }

ActivationSet ActivationSet::from_values(std::string layer_name, std::uint32_t unit_count,
                                         std::vector<std::string> image_ids, MapDims dims,
                                         std::vector<float> values) {
  const std::size_t expected = static_cast<std::size_t>(unit_count) * image_ids.size() * dims.area();
  if (values.size() != expected)
    throw Error(ErrorCode::InvalidArgument, "activation payload has " + std::to_string(values.size()) +
                                                " values, expected " + std::to_string(expected));
  check_finite(values, 0);
  ActivationSet set;
  set.layer_name_ = std::move(layer_name);
  set.unit_count_ = unit_count;
  set.image_ids_ = std::move(image_ids);
  set.dims_ = dims;
  auto storage = std::make_shared<Storage>();
  storage->values = std::move(values);
  set.storage_ = std::move(storage);
  return set;
}

void ActivationSet::read_map(std::uint32_t unit, std::size_t image, std::span<float> out) const {
  if (unit >= unit_count_ || image >= image_ids_.size() || out.size() != dims_.area())
    throw Error(ErrorCode::InvalidArgument, "activation map index out of range");
  const std::size_t offset = (static_cast<std::size_t>(unit) * image_ids_.size() + image) * dims_.area();
  if (!storage_->file) {
    std::copy_n(storage_->values.begin() + static_cast<std::ptrdiff_t>(offset), out.size(), out.begin());
    return;
  }
  if (!storage_->file->read_at(storage_->payload_offset + offset * sizeof(float), std::as_writable_bytes(out)))
    throw Error(ErrorCode::TruncatedFile, "short read from activation file");
  floats_from_le(out);
}

std::vector<float> ActivationSet::unit_slice(std::uint32_t unit) const {
  if (unit >= unit_count_) throw Error(ErrorCode::InvalidArgument, "unit index out of range");
  const std::size_t len = image_ids_.size() * dims_.area();
  std::vector<float> out(len);
  const std::size_t offset = static_cast<std::size_t>(unit) * len;
  if (!storage_->file) {
    std::copy_n(storage_->values.begin() + static_cast<std::ptrdiff_t>(offset), len, out.begin());
    return out;
  }
  if (!storage_->file->read_at(storage_->payload_offset + offset * sizeof(float),
                               std::as_writable_bytes(std::span<float>(out))))
    throw Error(ErrorCode::TruncatedFile, "short read from activation file");
  floats_from_le(out);
  return out;
}

ActivationSet read_activations(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::Io, "activation file not found: " + path.string());
  auto file = std::make_unique<FileHandle>(path);
  const std::uint64_t file_size = std::filesystem::file_size(path);
  std::uint64_t cursor = 0;

  auto read_bytes = [&](std::span<std::byte> out, const char* what) {
    if (cursor + out.size() > file_size || !file->read_at(cursor, out))
      throw Error(ErrorCode::TruncatedFile, std::string("file ends inside ") + what + ": " + path.string());
    cursor += out.size();
  };
  auto read_u32 = [&](const char* what) {
    std::uint32_t v = 0;
    read_bytes(std::as_writable_bytes(std::span<std::uint32_t>(&v, 1)), what);
    return from_le(v);
  };
  auto read_string = [&](const char* what) {
    const std::uint32_t len = read_u32(what);
    if (cursor + len > file_size)
      throw Error(ErrorCode::TruncatedFile, std::string("file ends inside ") + what + ": " + path.string());
    std::string s(len, '\0');
    read_bytes(std::as_writable_bytes(std::span<char>(s.data(), s.size())), what);
    return s;
  };

  std::array<char, 4> magic{};
  if (file_size < magic.size()) throw Error(ErrorCode::BadMagic, "not an HNDA file: " + path.string());
  read_bytes(std::as_writable_bytes(std::span<char>(magic)), "magic");
  if (magic != kMagic) throw Error(ErrorCode::BadMagic, "not an HNDA file: " + path.string());
  const std::uint32_t version = read_u32("version");
  if (version != kHndaVersion)
    throw Error(ErrorCode::VersionUnsupported, "HNDA version " + std::to_string(version) + " in " + path.string());

  ActivationSet set;
  set.unit_count_ = read_u32("header");
  const std::uint32_t image_count = read_u32("header");
  set.dims_.height = read_u32("header");
  set.dims_.width = read_u32("header");
  set.layer_name_ = read_string("layer name");
  set.image_ids_.reserve(image_count);
  for (std::uint32_t i = 0; i < image_count; ++i) set.image_ids_.push_back(read_string("image id"));

  const std::uint64_t value_count = static_cast<std::uint64_t>(set.unit_count_) * image_count * set.dims_.area();
  if (file_size - cursor < value_count * sizeof(float))
    throw Error(ErrorCode::TruncatedFile, "payload holds " + std::to_string((file_size - cursor) / sizeof(float)) +
                                              " of " + std::to_string(value_count) + " values: " + path.string());

  // Validate the payload in bounded chunks.
  constexpr std::size_t kChunk = std::size_t{1} << 20;
  std::vector<float> buffer;
  for (std::uint64_t done = 0; done < value_count;) {
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(kChunk, value_count - done));
    buffer.resize(n);
    if (!file->read_at(cursor + done * sizeof(float), std::as_writable_bytes(std::span<float>(buffer))))
      throw Error(ErrorCode::TruncatedFile, "short payload read: " + path.string());
    floats_from_le(buffer);
    check_finite(buffer, done);
    done += n;
  }

  auto storage = std::make_shared<ActivationSet::Storage>();
  storage->file = std::move(file);
  storage->payload_offset = cursor;
  set.storage_ = std::move(storage);
  return set;
}

void write_activations(const std::filesystem::path& path, const ActivationSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  auto put_u32 = [&](std::uint32_t v) {
    v = from_le(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
  };
  auto put_string = [&](const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
  };
  out.write(kMagic.data(), kMagic.size());
  put_u32(kHndaVersion);
  put_u32(set.unit_count());
  put_u32(static_cast<std::uint32_t>(set.image_count()));
  put_u32(set.map_dims().height);
  put_u32(set.map_dims().width);
  put_string(set.layer_name());
  for (const auto& id : set.image_ids()) put_string(id);
  for (std::uint32_t u = 0; u < set.unit_count(); ++u) {
    auto slice = set.unit_slice(u);
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& f : slice) f = std::bit_cast<float>(byteswap32(std::bit_cast<std::uint32_t>(f)));
    }
    out.write(reinterpret_cast<const char*>(slice.data()), static_cast<std::streamsize>(slice.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

std::vector<float> map_maxima(std::span<const float> unit_slice, MapDims dims) {
  const std::size_t area = dims.area();
  std::vector<float> maxima;
  if (area == 0) return maxima;
  maxima.reserve(unit_slice.size() / area);
  for (std::size_t off = 0; off + area <= unit_slice.size(); off += area)
    maxima.push_back(*std::max_element(unit_slice.begin() + static_cast<std::ptrdiff_t>(off),
                                       unit_slice.begin() + static_cast<std::ptrdiff_t>(off + area)));
  return maxima;
}

std::vector<UnitSummary> unit_summaries(const ActivationSet& set, unsigned jobs) {
  std::vector<UnitSummary> summaries(set.unit_count());
  parallel_for(set.unit_count(), jobs, [&](std::size_t u) {
    summaries[u].unit_index = static_cast<std::uint32_t>(u);
    summaries[u].max_scores = map_maxima(set.unit_slice(static_cast<std::uint32_t>(u)), set.map_dims());
  });
  float layer_max = 0.0f;
  bool first = true;
  for (const auto& s : summaries) {
    for (float v : s.max_scores) {
      if (first || v > layer_max) layer_max = v;
      first = false;
    }
  }
  for (auto& s : summaries) s.layer_max = layer_max;
  return summaries;
}

float upper_quantile(std::span<const float> values, double q) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "quantile of an empty sample");
  if (!(q > 0.0 && q < 1.0)) throw Error(ErrorCode::InvalidArgument, "quantile must lie in (0,1)");
  // The relative slack absorbs representation error in q * M (0.05 * 100).
  const double allowed = std::floor(q * static_cast<double>(values.size()) * (1.0 + 1e-12));
  const std::size_t k = std::min(static_cast<std::size_t>(allowed), values.size() - 1);
  std::vector<float> work(values.begin(), values.end());
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(k), work.end(), std::greater<>());
  return work[k];
}

float activation_quantile(std::span<const float> unit_slice, double q, const QuantileOptions& options) {
  if (options.method == QuantileMethod::Exact || unit_slice.size() <= options.reservoir_size)
    return upper_quantile(unit_slice, q);
  std::mt19937_64 rng(options.seed);
  std::vector<float> reservoir(unit_slice.begin(), unit_slice.begin() + static_cast<std::ptrdiff_t>(options.reservoir_size));
  for (std::size_t i = options.reservoir_size; i < unit_slice.size(); ++i) {
    const std::uint64_t j = rng() % (i + 1);
    if (j < options.reservoir_size) reservoir[j] = unit_slice[i];
  }
  return upper_quantile(reservoir, q);
}

float activation_quantile(const ActivationSet& set, std::uint32_t unit, double q, const QuantileOptions& options) {
  const auto slice = set.unit_slice(unit);
  return activation_quantile(slice, q, options);
}

}  // namespace hnd

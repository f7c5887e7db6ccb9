#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace hnd {

// Row-major binary raster; any nonzero cell is foreground.
class BinaryRaster {
 public:
  BinaryRaster() = default;
  BinaryRaster(int width, int height);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty_dims() const noexcept { return width_ == 0 || height_ == 0; }

  bool at(int x, int y) const { return cells_[index(x, y)] != 0; }
  void set(int x, int y, bool value = true) { cells_[index(x, y)] = value ? 1 : 0; }

  const std::vector<std::uint8_t>& cells() const noexcept { return cells_; }
  std::vector<std::uint8_t>& cells() noexcept { return cells_; }

  std::size_t foreground_count() const noexcept;

  friend bool operator==(const BinaryRaster&, const BinaryRaster&) = default;

 private:
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
};

// Binary PGM (P5) with maxval <= 255.
PgmHeader read_pgm_header(const std::filesystem::path& path);
BinaryRaster read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const BinaryRaster& raster);

}  // namespace hnd

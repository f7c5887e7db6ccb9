#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/raster.hpp"

namespace hnd::test {

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = std::filesystem::temp_directory_path() /
            ("hnd_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline BinaryRaster rect_mask(int w, int h, int x0, int y0, int x1, int y1) {
  BinaryRaster r(w, h);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x) r.set(x, y);
  return r;
}

inline BinaryRaster random_mask(std::mt19937_64& rng, int w, int h, double density = 0.5) {
  std::bernoulli_distribution bit(density);
  BinaryRaster r(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) r.set(x, y, bit(rng));
  return r;
}

inline ImageRecord image(std::string id, std::map<std::string, std::string> global, std::set<std::string> local = {},
                         int w = 8, int h = 8) {
  ImageRecord rec;
  rec.image_id = std::move(id);
  rec.source_path = "images/" + rec.image_id + ".png";
  rec.global_labels = std::move(global);
  rec.local_labels = std::move(local);
  rec.width = w;
  rec.height = h;
  return rec;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

}  // namespace hnd::test

#include "hnd/raster.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <string>

#include "hnd/errors.hpp"

namespace hnd {

BinaryRaster::BinaryRaster(int width, int height)
    : width_(width), height_(height), cells_(static_cast<std::size_t>(width) * height, 0) {
  if (width < 0 || height < 0) throw Error(ErrorCode::InvalidArgument, "negative raster dimensions");
}

std::size_t BinaryRaster::foreground_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(cells_.begin(), cells_.end(), [](std::uint8_t c) { return c != 0; }));
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!token.empty()) break;
    } else {
      token.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return token;
}

int parse_positive(const std::string& token, const std::filesystem::path& path) {
  try {
    std::size_t used = 0;
    int value = std::stoi(token, &used);
    if (used != token.size() || value <= 0) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw Error(ErrorCode::ParseError, "bad PGM header field '" + token + "' in " + path.string());
  }
}

PgmHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  if (next_token(in) != "P5") throw Error(ErrorCode::ParseError, "not a binary PGM (P5): " + path.string());
  PgmHeader header;
  header.width = parse_positive(next_token(in), path);
  header.height = parse_positive(next_token(in), path);
  header.maxval = parse_positive(next_token(in), path);
  if (header.maxval > 255) throw Error(ErrorCode::ParseError, "PGM maxval above 255: " + path.string());
  return header;
}

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return in;
}

}  // namespace

PgmHeader read_pgm_header(const std::filesystem::path& path) {
  auto in = open_binary(path);
  return parse_header(in, path);
}

BinaryRaster read_pgm(const std::filesystem::path& path) {
  auto in = open_binary(path);
  const PgmHeader header = parse_header(in, path);
  BinaryRaster raster(header.width, header.height);
  auto& cells = raster.cells();
  in.read(reinterpret_cast<char*>(cells.data()), static_cast<std::streamsize>(cells.size()));
  if (static_cast<std::size_t>(in.gcount()) != cells.size())
    throw Error(ErrorCode::TruncatedFile, "PGM payload too short: " + path.string());
  for (auto& c : cells) c = c != 0 ? 1 : 0;
  return raster;
}

void write_pgm(const std::filesystem::path& path, const BinaryRaster& raster) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << "P5\n" << raster.width() << ' ' << raster.height() << "\n255\n";
  std::vector<char> bytes(raster.cells().size());
  std::transform(raster.cells().begin(), raster.cells().end(), bytes.begin(),
                 [](std::uint8_t c) { return c != 0 ? static_cast<char>(255) : '\0'; });
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

}  // namespace hnd

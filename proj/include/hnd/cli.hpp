#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace hnd::cli {

struct RunConfig {
  std::filesystem::path manifest;
  std::vector<std::pair<std::string, std::filesystem::path>> activations;  // layer -> HNDA file
  double quantile = 0.005;
  std::string quantile_method = "exact";
  std::map<std::string, double> bias_thresholds;
  double iou_cutoff = 0.04;
  double local_factor = 1.5;
  std::filesystem::path out = ".";
  std::uint64_t seed = 0;
  unsigned jobs = 0;
  std::string format = "json";
  std::string model_name = "model";
  bool iou_csv = false;
};

// Parses `layer=path`; throws hnd::Error(InvalidArgument) otherwise.
std::pair<std::string, std::filesystem::path> parse_layer_binding(const std::string& text);

// Throws hnd::Error(InvalidArgument) for out-of-range thresholds.
void validate(const RunConfig& config);

// Entry point for the `hnd` tool. Exit codes: 0 ok, 2 I/O, 3 validation,
// 4 internal.
int run(int argc, char** argv);
int run(std::vector<std::string> args);

}  // namespace hnd::cli

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/baseline.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/stage1_global.hpp"
#include "hnd/stage2_parts.hpp"
#include "hnd/stage3_local.hpp"

namespace hnd {

struct UnitInterpretation {
  std::uint32_t unit_index = 0;
  std::vector<GlobalProbabilities> global;  // one per analysed category
  IoUTable stage2;
  std::optional<LocalPairing> stage3;
  BaselinePairing baseline;
  bool inactive = false;  // all-zero unit; Stage II/III skipped
  bool interpretable = false;

  friend bool operator==(const UnitInterpretation&, const UnitInterpretation&) = default;
};

// Any global bias flag, or a Stage-II region.
bool is_interpretable(const UnitInterpretation& unit);

// Key used for global subgroups in count tables: "Category/Subgroup".
std::string subgroup_key(const std::string& category, const std::string& subgroup);

struct RatioStat {
  double mean_ratio = 0.0;  // mean of P / mean(P) over probabilities above the mean
  std::size_t samples = 0;
  friend bool operator==(const RatioStat&, const RatioStat&) = default;
};

struct DissectionReport {
  std::string model_name;
  std::string layer_name;
  std::size_t unit_count = 0;

  std::map<std::string, std::size_t> local_concept_counts;
  std::map<std::string, std::size_t> global_concept_counts;
  std::map<std::string, std::size_t> region_counts;
  std::map<std::string, std::size_t> concept_type_counts;
  // local concept -> "Category/Subgroup" -> units holding both pairings
  std::map<std::string, std::map<std::string, std::size_t>> overlap;

  std::size_t interpretable_units = 0;
  double coverage = 0.0;

  // IoU-only accounting, reported next to the hierarchical numbers.
  std::map<std::string, std::size_t> baseline_concept_counts;
  std::size_t baseline_interpretable_units = 0;
  double baseline_coverage = 0.0;

  std::map<std::string, RatioStat> category_ratio_stats;
  std::map<std::string, RatioStat> region_ratio_stats;

  std::vector<std::string> warnings;

  friend bool operator==(const DissectionReport&, const DissectionReport&) = default;
};

DissectionReport aggregate(std::span<const UnitInterpretation> units, const ConceptDictionary& dict,
                           const std::string& model_name = {}, const std::string& layer_name = {},
                           std::vector<std::string> warnings = {});

struct LayerReport {
  DissectionReport summary;
  std::vector<UnitInterpretation> units;
  friend bool operator==(const LayerReport&, const LayerReport&) = default;
};

struct ModelReport {
  std::string model_name;
  std::vector<LayerReport> layers;
  friend bool operator==(const ModelReport&, const ModelReport&) = default;
};

std::string report_to_json(const ModelReport& report);
ModelReport report_from_json(const std::string& text);
void write_report_json(const std::filesystem::path& path, const ModelReport& report);
ModelReport read_report_json(const std::filesystem::path& path);

// histogram_local.csv, histogram_global.csv, overlap.csv, coverage.csv,
// bias_curves.csv and baseline_histogram.csv.
void write_report_tables(const std::filesystem::path& dir, const ModelReport& report, const ConceptDictionary& dict);

// unit,concept,iou rows for every layer.
void write_iou_csv(const std::filesystem::path& path, const ModelReport& report);

struct RankedImage {
  std::string image_id;
  double score = 0.0;
  friend bool operator==(const RankedImage&, const RankedImage&) = default;
};

// Per class, images by descending max activation of `unit` (or the maximum
// over all units when no unit is given), ties by ascending image id, at most
// k each. Labels for images absent from the summaries are ignored.
std::map<std::string, std::vector<RankedImage>> top_activated_images(
    std::span<const UnitSummary> summaries, const std::vector<std::string>& image_ids,
    const std::map<std::string, std::string>& class_labels, const std::vector<std::string>& classes, std::size_t k,
    std::optional<std::uint32_t> unit = std::nullopt);

struct LayerProbabilities {
  std::string layer_name;
  std::vector<GlobalProbabilities> units;
};

struct LayerCount {
  std::string layer_name;
  std::size_t biased_units = 0;
  std::size_t unit_count = 0;
  friend bool operator==(const LayerCount&, const LayerCount&) = default;
};

// Units with any subgroup probability strictly above `threshold`.
std::vector<LayerCount> biased_unit_counts(std::span<const LayerProbabilities> layers, double threshold);

// Ascending probabilities of `subgroup` over the active units.
std::vector<double> sorted_probability_curve(std::span<const GlobalProbabilities> units, const std::string& subgroup);

// Steepest rise of a sorted curve plotted over x in [0, 1], measured across
// a window of max(1, n/20) points.
double max_curve_slope(std::span<const double> sorted_curve);

}  // namespace hnd

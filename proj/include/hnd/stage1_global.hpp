#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"

namespace hnd {

// One image of the analysis set with its label. `image_index` indexes the
// ActivationSet's image order.
struct SelectedImage {
  std::size_t image_index = 0;
  std::string image_id;
  std::string label;
};

// Images of `set` labeled for `category`, in activation-set order. Images
// missing from the dictionary are ignored.
std::vector<SelectedImage> category_selection(const ConceptDictionary& dict, const ActivationSet& set,
                                              const std::string& category);

// Max score scaled by the layer maximum and floored at zero. A nonpositive
// layer maximum disables scaling.
double normalized_max_score(float max_score, float layer_max);

struct RankItem {
  double score = 0.0;
  const std::string* image_id = nullptr;
};

// 1-based ranks, lowest score -> 1; ties broken by ascending image id.
std::vector<std::size_t> rank_ascending(std::span<const RankItem> items);

struct RankedEntry {
  std::size_t image_index = 0;
  std::string image_id;
  std::string subgroup;
  double score = 0.0;  // normalized max activation
  std::size_t rank = 0;
};

struct RankedMaps {
  std::string category;
  std::vector<RankedEntry> entries;  // ascending rank
};

// Throws EmptySelection when `selection` is empty.
RankedMaps rank_maps(const UnitSummary& summary, std::span<const SelectedImage> selection, const std::string& category);

struct ConceptScores {
  std::map<std::string, double> raw_scores;      // subgroup -> sum(R * MS) / N_s
  std::map<std::string, std::size_t> support;    // subgroup -> N_s
  std::vector<std::string> dropped_subgroups;    // declared, but no images
};

ConceptScores concept_scores(const RankedMaps& ranked, const GlobalCategory& category);

struct GlobalProbabilities {
  std::uint32_t unit_index = 0;
  std::string category;
  std::map<std::string, double> raw_scores;
  std::map<std::string, double> probabilities;
  std::map<std::string, std::size_t> support;
  std::vector<std::string> dropped_subgroups;
  std::optional<std::string> biased_subgroup;
  bool inactive = false;

  friend bool operator==(const GlobalProbabilities&, const GlobalProbabilities&) = default;
};

// Normalizes concept scores to probabilities and applies the category's bias
// threshold. Requires at least two subgroups with support. All-zero scores
// mark the unit inactive with uniform probabilities.
GlobalProbabilities global_probabilities(std::uint32_t unit, const GlobalCategory& category,
                                         const ConceptScores& scores);

// rank_maps -> concept_scores -> global_probabilities for one unit.
GlobalProbabilities score_category(const UnitSummary& summary, std::span<const SelectedImage> selection,
                                   const GlobalCategory& category);

enum class ColorScheme { Color, Gray };

inline constexpr const char* kColorSubgroup = "Color";
inline constexpr const char* kGraySubgroup = "Gray";

// Two-subgroup {Color, Gray} category with the 0.55 threshold.
GlobalCategory color_scheme_category();

struct ColorSchemeProbability {
  std::uint32_t unit_index = 0;
  double p_color = 0.5;
  double p_gray = 0.5;
  bool biased = false;
  bool inactive = false;
};

std::vector<ColorSchemeProbability> color_scheme_probabilities(const ActivationSet& set,
                                                               const std::map<std::string, ColorScheme>& labels,
                                                               unsigned jobs = 1);

}  // namespace hnd

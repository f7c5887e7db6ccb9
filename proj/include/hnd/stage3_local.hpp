#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/stage2_parts.hpp"

namespace hnd {

inline constexpr double kDefaultLocalFactor = 1.5;

// An analysis image labeled with at least one concept of the region, with
// every region concept it carries.
struct RegionImage {
  std::size_t image_index = 0;
  std::string image_id;
  std::vector<std::string> concepts;
};

std::vector<RegionImage> select_region_maps(const ActivationSet& set, const ConceptDictionary& dict,
                                            const std::string& region);
std::vector<RegionImage> select_region_maps(const std::vector<std::string>& image_ids, const ConceptDictionary& dict,
                                            const std::string& region);

struct ConceptProvenance {
  double raw_score = 0.0;  // sum(R * MS) / N_k before IoU scaling
  double iou = 0.0;
  std::size_t support = 0;  // N_k

  friend bool operator==(const ConceptProvenance&, const ConceptProvenance&) = default;
};

struct LocalPairing {
  std::uint32_t unit_index = 0;
  std::string region;
  std::size_t region_size = 0;  // K
  double threshold = 0.0;       // local_factor / K
  std::map<std::string, double> concept_probabilities;
  std::set<std::string> paired_concepts;
  std::map<std::string, ConceptProvenance> provenance;
  // No concept of the region received score mass (empty support or all-zero
  // scores); the unit keeps its Stage-II region only.
  bool region_only = false;

  friend bool operator==(const LocalPairing&, const LocalPairing&) = default;
};

// Ranks the region-support images by normalized max activation, accumulates
// rank-weighted scores per concept (an image feeds every concept it carries),
// scales each concept score by its IoU, normalizes, and pairs concepts whose
// probability exceeds local_factor / K.
LocalPairing local_probabilities(std::span<const RegionImage> selection, const UnitSummary& summary,
                                 const IoUTable& iou_table, const ConceptDictionary& dict, const std::string& region,
                                 double local_factor = kDefaultLocalFactor);

}  // namespace hnd

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/raster.hpp"

namespace hnd {

inline constexpr double kDefaultIouCutoff = 0.04;

// Bilinear, center-aligned upsample of an h x w map to target_w x
// target_h (sample point x_in = (x_out + 0.5) * w / W - 0.5, clamped to the
// edge), then foreground where value >= threshold.
BinaryRaster threshold_and_upsample(std::span<const float> map, MapDims dims, float threshold, int target_width,
                                    int target_height);

// Running sums of |M & L| and |M | L| over images.
struct IouAccumulator {
  std::uint64_t intersection = 0;
  std::uint64_t union_count = 0;
  std::size_t images = 0;

  void add(const BinaryRaster& unit_mask, const BinaryRaster& concept_mask);
  double value() const;
};

// Dataset-level IoU: sum of intersections over sum of unions. Throws
// EmptySelection (no labeled images) when the spans are empty.
double iou(std::span<const BinaryRaster> unit_masks, std::span<const BinaryRaster> concept_masks);

struct IoUTable {
  std::uint32_t unit_index = 0;
  float threshold = 0.0f;
  std::map<std::string, double> scores;  // concept -> IoU
  std::string top_concept;
  double top_iou = 0.0;
  std::optional<std::string> assigned_region;

  friend bool operator==(const IoUTable&, const IoUTable&) = default;
};

// Looks up the mask of a labeled (image, concept) pair.
using MaskLookup = std::function<const BinaryRaster&(const std::string& image_id, const std::string& concept_name)>;

// IoU of one unit against every local concept labeled in the analysis set;
// concepts without labeled images are absent from the table.
IoUTable score_unit_iou(const ConceptDictionary& dict, const ActivationSet& set, std::uint32_t unit, float threshold,
                        const MaskLookup& masks);
IoUTable score_unit_iou(const ConceptDictionary& dict, std::span<const float> unit_slice,
                        const std::vector<std::string>& image_ids, MapDims dims, std::uint32_t unit, float threshold,
                        const MaskLookup& masks);

// Picks the top concept (ties -> lower name) and assigns its region when the
// top IoU reaches `cutoff`.
IoUTable assign_region(IoUTable table, const ConceptDictionary& dict, double cutoff = kDefaultIouCutoff);

}  // namespace hnd

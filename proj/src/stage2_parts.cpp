#include "hnd/stage2_parts.hpp"

#include <algorithm>
#include <cmath>

#include "hnd/errors.hpp"

namespace hnd {

namespace {

struct Tap {
  std::uint32_t lo = 0;
  std::uint32_t hi = 0;
  float frac = 0.0f;
};

// Source taps along one axis for center-aligned sampling with edge clamp.
std::vector<Tap> axis_taps(std::uint32_t source, int target) {
  std::vector<Tap> taps(static_cast<std::size_t>(target));
  const double scale = static_cast<double>(source) / target;
  const double last = static_cast<double>(source) - 1.0;
  for (int i = 0; i < target; ++i) {
    const double pos = std::clamp((i + 0.5) * scale - 0.5, 0.0, last);
    const auto lo = static_cast<std::uint32_t>(std::floor(pos));
    const std::uint32_t hi = std::min(lo + 1, source - 1);
    taps[static_cast<std::size_t>(i)] = Tap{lo, hi, static_cast<float>(pos - lo)};
  }
  return taps;
}

}  // namespace

BinaryRaster threshold_and_upsample(std::span<const float> map, MapDims dims, float threshold, int target_width,
                                    int target_height) {
  if (dims.area() == 0 || map.size() != dims.area())
    throw Error(ErrorCode::InvalidArgument, "activation map size does not match its dimensions");
  if (target_width <= 0 || target_height <= 0) throw Error(ErrorCode::InvalidArgument, "target size must be positive");
  if (!std::isfinite(threshold)) throw Error(ErrorCode::InvalidArgument, "threshold must be finite");

  const auto xs = axis_taps(dims.width, target_width);
  const auto ys = axis_taps(dims.height, target_height);
  BinaryRaster out(target_width, target_height);
  auto& cells = out.cells();
  const std::uint32_t w = dims.width;
  for (int y = 0; y < target_height; ++y) {
    const Tap& ty = ys[static_cast<std::size_t>(y)];
    const float* row0 = map.data() + static_cast<std::size_t>(ty.lo) * w;
    const float* row1 = map.data() + static_cast<std::size_t>(ty.hi) * w;
    for (int x = 0; x < target_width; ++x) {
      const Tap& tx = xs[static_cast<std::size_t>(x)];
      const float top = row0[tx.lo] + (row0[tx.hi] - row0[tx.lo]) * tx.frac;
      const float bottom = row1[tx.lo] + (row1[tx.hi] - row1[tx.lo]) * tx.frac;
      const float value = top + (bottom - top) * ty.frac;
      cells[static_cast<std::size_t>(y) * target_width + x] = value >= threshold ? 1 : 0;
    }
  }
  return out;
}

void IouAccumulator::add(const BinaryRaster& unit_mask, const BinaryRaster& concept_mask) {
  if (unit_mask.width() != concept_mask.width() || unit_mask.height() != concept_mask.height())
    throw Error(ErrorCode::DimensionMismatch, "unit and concept masks differ in size");
  const auto& a = unit_mask.cells();
  const auto& b = concept_mask.cells();
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ma = a[i] != 0, mb = b[i] != 0;
    inter += static_cast<std::uint64_t>(ma && mb);
    uni += static_cast<std::uint64_t>(ma || mb);
  }
  intersection += inter;
  union_count += uni;
  ++images;
}

double IouAccumulator::value() const {
  return union_count == 0 ? 0.0 : static_cast<double>(intersection) / static_cast<double>(union_count);
}

double iou(std::span<const BinaryRaster> unit_masks, std::span<const BinaryRaster> concept_masks) {
  if (unit_masks.size() != concept_masks.size())
    throw Error(ErrorCode::InvalidArgument, "unit and concept mask lists differ in length");
  if (unit_masks.empty()) throw Error(ErrorCode::EmptySelection, "IoU undefined without labeled images");
  IouAccumulator acc;
  for (std::size_t i = 0; i < unit_masks.size(); ++i) acc.add(unit_masks[i], concept_masks[i]);
  return acc.value();
}

IoUTable score_unit_iou(const ConceptDictionary& dict, std::span<const float> unit_slice,
                        const std::vector<std::string>& image_ids, MapDims dims, std::uint32_t unit, float threshold,
                        const MaskLookup& masks) {
  const std::size_t area = dims.area();
  if (unit_slice.size() != image_ids.size() * area)
    throw Error(ErrorCode::InvalidArgument, "unit slice does not match image count");
  std::map<std::string, IouAccumulator> acc;
  for (std::size_t n = 0; n < image_ids.size(); ++n) {
    const ImageRecord* rec = dict.find_image(image_ids[n]);
    if (rec == nullptr || rec->local_labels.empty()) continue;
    const BinaryRaster unit_mask =
        threshold_and_upsample(unit_slice.subspan(n * area, area), dims, threshold, rec->width, rec->height);
    for (const auto& concept_name : rec->local_labels) acc[concept_name].add(unit_mask, masks(rec->image_id, concept_name));
  }
  IoUTable table;
  table.unit_index = unit;
  table.threshold = threshold;
  for (const auto& [name, a] : acc) table.scores[name] = a.value();
  return table;
}

IoUTable score_unit_iou(const ConceptDictionary& dict, const ActivationSet& set, std::uint32_t unit, float threshold,
                        const MaskLookup& masks) {
  const auto slice = set.unit_slice(unit);
  return score_unit_iou(dict, slice, set.image_ids(), set.map_dims(), unit, threshold, masks);
}

IoUTable assign_region(IoUTable table, const ConceptDictionary& dict, double cutoff) {
  table.top_concept.clear();
  table.top_iou = 0.0;
  table.assigned_region.reset();
  // std::map iterates names ascending, so strict > keeps the lower name on ties.
  bool first = true;
  for (const auto& [name, value] : table.scores) {
    if (first || value > table.top_iou) {
      table.top_concept = name;
      table.top_iou = value;
      first = false;
    }
  }
  if (!first && table.top_iou >= cutoff) table.assigned_region = dict.concept_named(table.top_concept).region;
  return table;
}

}  // namespace hnd

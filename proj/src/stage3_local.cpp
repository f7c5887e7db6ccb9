#include "hnd/stage3_local.hpp"

#include <algorithm>

#include "hnd/errors.hpp"
#include "hnd/stage1_global.hpp"

namespace hnd {

std::vector<RegionImage> select_region_maps(const std::vector<std::string>& image_ids, const ConceptDictionary& dict,
                                            const std::string& region) {
  const auto region_concepts = dict.concepts_in_region(region);
  if (region_concepts.empty()) throw Error(ErrorCode::UnknownConcept, "unknown region '" + region + "'");
  std::vector<RegionImage> selection;
  for (std::size_t n = 0; n < image_ids.size(); ++n) {
    const ImageRecord* rec = dict.find_image(image_ids[n]);
    if (rec == nullptr) continue;
    RegionImage image{n, image_ids[n], {}};
    for (const auto& c : region_concepts)
      if (rec->local_labels.contains(c)) image.concepts.push_back(c);
    if (!image.concepts.empty()) selection.push_back(std::move(image));
  }
  return selection;
}

std::vector<RegionImage> select_region_maps(const ActivationSet& set, const ConceptDictionary& dict,
                                            const std::string& region) {
  return select_region_maps(set.image_ids(), dict, region);
}

LocalPairing local_probabilities(std::span<const RegionImage> selection, const UnitSummary& summary,
                                 const IoUTable& iou_table, const ConceptDictionary& dict, const std::string& region,
                                 double local_factor) {
  LocalPairing out;
  out.unit_index = summary.unit_index;
  out.region = region;
  out.region_size = dict.region_size(region);
  out.threshold = local_factor / static_cast<double>(out.region_size);
  if (selection.empty()) {
    out.region_only = true;
    return out;
  }

  std::vector<RankItem> items;
  items.reserve(selection.size());
  for (const auto& img : selection) {
    if (img.image_index >= summary.max_scores.size())
      throw Error(ErrorCode::InvalidArgument, "region image outside the unit summary");
    items.push_back(RankItem{normalized_max_score(summary.max_scores[img.image_index], summary.layer_max), &img.image_id});
  }
  const auto ranks = rank_ascending(items);
  std::vector<std::size_t> order(selection.size());
  for (std::size_t i = 0; i < selection.size(); ++i) order[ranks[i] - 1] = i;

  std::map<std::string, double> sums;
  std::map<std::string, std::size_t> support;
  for (const std::size_t i : order) {
    for (const auto& c : selection[i].concepts) {
      sums[c] += static_cast<double>(ranks[i]) * items[i].score;
      ++support[c];
    }
  }

  std::map<std::string, double> scaled;
  double total = 0.0;
  for (const auto& [c, sum] : sums) {
    ConceptProvenance prov;
    prov.support = support[c];
    prov.raw_score = sum / static_cast<double>(prov.support);
    auto it = iou_table.scores.find(c);
    prov.iou = it == iou_table.scores.end() ? 0.0 : it->second;
    scaled[c] = prov.raw_score * prov.iou;
    total += scaled[c];
    out.provenance[c] = prov;
  }
  if (!(total > 0.0)) {
    out.region_only = true;
    return out;
  }
  for (const auto& [c, s] : scaled) {
    const double p = s / total;
    out.concept_probabilities[c] = p;
    if (p > out.threshold) out.paired_concepts.insert(c);
  }
  return out;
}

}  // namespace hnd

#include "hnd/pipeline.hpp"

#include <algorithm>
#include <set>

#include "hnd/errors.hpp"
#include "hnd/parallel.hpp"

namespace hnd {

namespace {

struct CategoryPlan {
  GlobalCategory category;
  std::vector<SelectedImage> selection;
};

void check_image_ids(const ConceptDictionary& dict, const ActivationSet& set) {
  for (const auto& id : set.image_ids())
    if (dict.find_image(id) == nullptr)
      throw Error(ErrorCode::UnknownImage,
                  "layer '" + set.layer_name() + "' references image '" + id + "' missing from the dictionary");
}

std::vector<CategoryPlan> plan_categories(const ConceptDictionary& dict, const ActivationSet& set,
                                          const DissectOptions& options, const std::vector<std::string>& only,
                                          std::vector<std::string>& warnings) {
  for (const auto& [name, threshold] : options.bias_thresholds) {
    dict.category(name);
    if (!(threshold > 0.0 && threshold < 1.0))
      throw Error(ErrorCode::InvalidArgument, "bias threshold for '" + name + "' outside (0,1)");
  }
  std::vector<CategoryPlan> plans;
  for (const auto& category : dict.categories()) {
    if (!only.empty() && std::find(only.begin(), only.end(), category.name) == only.end()) continue;
    CategoryPlan plan{category, category_selection(dict, set, category.name)};
    if (auto it = options.bias_thresholds.find(category.name); it != options.bias_thresholds.end())
      plan.category.bias_threshold = it->second;
    std::set<std::string> present;
    for (const auto& s : plan.selection) present.insert(s.label);
    for (const auto& s : category.subgroups)
      if (!present.contains(s))
        warnings.push_back("category '" + category.name + "': subgroup '" + s +
                           "' has no images in the analysis set and is excluded");
    if (present.size() < 2) {
      warnings.push_back("category '" + category.name + "' skipped: fewer than two subgroups have images");
      continue;
    }
    plans.push_back(std::move(plan));
  }
  for (const auto& name : only) dict.category(name);
  return plans;
}

bool all_zero(const std::vector<float>& values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return v <= 0.0f; });
}

}  // namespace

LayerDissection dissect_layer(const ConceptDictionary& dict, const ActivationSet& set, const DissectOptions& options) {
  if (!(options.quantile > 0.0 && options.quantile < 1.0))
    throw Error(ErrorCode::InvalidArgument, "activation quantile outside (0,1)");
  if (!(options.iou_cutoff > 0.0 && options.iou_cutoff < 1.0))
    throw Error(ErrorCode::InvalidArgument, "IoU cutoff outside (0,1)");
  if (!(options.local_factor > 0.0)) throw Error(ErrorCode::InvalidArgument, "local factor must be positive");
  check_image_ids(dict, set);

  LayerDissection out;
  out.layer_name = set.layer_name();
  const auto plans = plan_categories(dict, set, options, {}, out.warnings);
  out.summaries = unit_summaries(set, options.jobs);
  if (!out.summaries.empty() && !(out.summaries.front().layer_max > 0.0f))
    out.warnings.push_back("layer '" + set.layer_name() + "' is inactive: every activation is zero");

  // Masks are resolved up front so workers only read shared state.
  std::map<ConceptDictionary::MaskKey, BinaryRaster> read_masks;
  std::map<ConceptDictionary::MaskKey, const BinaryRaster*> mask_index;
  std::set<std::string> labeled_concepts;
  for (const auto& id : set.image_ids()) {
    const ImageRecord* rec = dict.find_image(id);
    for (const auto& c : rec->local_labels) {
      labeled_concepts.insert(c);
      ConceptDictionary::MaskKey key{id, c};
      if (const BinaryRaster* loaded = dict.loaded_mask(id, c)) {
        mask_index[key] = loaded;
      } else {
        auto [it, _] = read_masks.emplace(key, dict.mask(id, c));
        mask_index[key] = &it->second;
      }
    }
  }
  for (const auto& c : dict.concepts())
    if (!labeled_concepts.contains(c.name))
      out.warnings.push_back("concept '" + c.name + "' has no labeled images and is omitted from IoU tables");
  const MaskLookup lookup = [&](const std::string& image_id, const std::string& concept_name) -> const BinaryRaster& {
    return *mask_index.at(ConceptDictionary::MaskKey{image_id, concept_name});
  };

  std::map<std::string, std::vector<RegionImage>> region_selection;
  for (const auto& region : dict.regions()) region_selection[region.name] = select_region_maps(set, dict, region.name);

  out.units.resize(set.unit_count());
  parallel_for(set.unit_count(), options.jobs, [&](std::size_t u) {
    const auto unit = static_cast<std::uint32_t>(u);
    const UnitSummary& summary = out.summaries[u];
    UnitInterpretation interp;
    interp.unit_index = unit;
    interp.inactive = all_zero(summary.max_scores);
    for (const auto& plan : plans) interp.global.push_back(score_category(summary, plan.selection, plan.category));
    interp.stage2.unit_index = unit;
    interp.baseline.unit_index = unit;
    if (!interp.inactive) {
      const auto slice = set.unit_slice(unit);
      const float threshold = activation_quantile(slice, options.quantile, options.quantile_options);
      interp.stage2 = assign_region(
          score_unit_iou(dict, slice, set.image_ids(), set.map_dims(), unit, threshold, lookup), dict, options.iou_cutoff);
      interp.baseline = baseline_pair(interp.stage2, options.iou_cutoff);
      if (interp.stage2.assigned_region) {
        const auto& region = *interp.stage2.assigned_region;
        interp.stage3 = local_probabilities(region_selection.at(region), summary, interp.stage2, dict, region,
                                            options.local_factor);
      }
    }
    interp.interpretable = is_interpretable(interp);
    out.units[u] = std::move(interp);
  });

  std::size_t inactive_units = 0;
  for (const auto& u : out.units) inactive_units += u.inactive ? 1 : 0;
  if (inactive_units > 0)
    out.warnings.push_back(std::to_string(inactive_units) + " inactive unit(s) in layer '" + set.layer_name() + "'");
  for (const auto& u : out.units)
    if (u.stage3 && u.stage3->region_only)
      out.warnings.push_back("unit " + std::to_string(u.unit_index) + ": no Stage-III score mass in region '" +
                             u.stage3->region + "', reported region-only");
  return out;
}

LayerDissection global_only(const ConceptDictionary& dict, const ActivationSet& set, const DissectOptions& options,
                            const std::vector<std::string>& categories) {
  check_image_ids(dict, set);
  LayerDissection out;
  out.layer_name = set.layer_name();
  const auto plans = plan_categories(dict, set, options, categories, out.warnings);
  out.summaries = unit_summaries(set, options.jobs);
  out.units.resize(set.unit_count());
  parallel_for(set.unit_count(), options.jobs, [&](std::size_t u) {
    UnitInterpretation interp;
    interp.unit_index = static_cast<std::uint32_t>(u);
    interp.stage2.unit_index = interp.unit_index;
    interp.baseline.unit_index = interp.unit_index;
    interp.inactive = all_zero(out.summaries[u].max_scores);
    for (const auto& plan : plans) interp.global.push_back(score_category(out.summaries[u], plan.selection, plan.category));
    interp.interpretable = is_interpretable(interp);
    out.units[u] = std::move(interp);
  });
  return out;
}

LayerReport make_layer_report(const LayerDissection& layer, const ConceptDictionary& dict,
                              const std::string& model_name) {
  LayerReport report;
  report.summary = aggregate(layer.units, dict, model_name, layer.layer_name, layer.warnings);
  report.units = layer.units;
  return report;
}

}  // namespace hnd

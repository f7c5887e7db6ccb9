#pragma once

#include <map>
#include <string>
#include <vector>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/report.hpp"

namespace hnd {

struct DissectOptions {
  double quantile = kDefaultActivationQuantile;
  QuantileOptions quantile_options;
  double iou_cutoff = kDefaultIouCutoff;
  double local_factor = kDefaultLocalFactor;
  std::map<std::string, double> bias_thresholds;  // per-category overrides
  unsigned jobs = 0;                              // 0 = all cores
};

struct LayerDissection {
  std::string layer_name;
  std::vector<UnitSummary> summaries;
  std::vector<UnitInterpretation> units;
  std::vector<std::string> warnings;
};

// Stages I-III plus the IoU-only baseline for every unit of one layer.
// Results are independent of `jobs`.
LayerDissection dissect_layer(const ConceptDictionary& dict, const ActivationSet& set, const DissectOptions& options);

// Stage I only, for the listed categories (all categories when empty).
LayerDissection global_only(const ConceptDictionary& dict, const ActivationSet& set, const DissectOptions& options,
                            const std::vector<std::string>& categories = {});

LayerReport make_layer_report(const LayerDissection& layer, const ConceptDictionary& dict,
                              const std::string& model_name);

}  // namespace hnd

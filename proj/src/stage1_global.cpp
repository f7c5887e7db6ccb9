#include "hnd/stage1_global.hpp"

#include <algorithm>
#include <numeric>

#include "hnd/errors.hpp"
#include "hnd/parallel.hpp"

namespace hnd {

std::vector<SelectedImage> category_selection(const ConceptDictionary& dict, const ActivationSet& set,
                                              const std::string& category) {
  dict.category(category);
  std::vector<SelectedImage> selection;
  const auto& ids = set.image_ids();
  for (std::size_t n = 0; n < ids.size(); ++n) {
    const ImageRecord* rec = dict.find_image(ids[n]);
    if (rec == nullptr) continue;
    if (auto it = rec->global_labels.find(category); it != rec->global_labels.end())
      selection.push_back(SelectedImage{n, ids[n], it->second});
  }
  return selection;
}

double normalized_max_score(float max_score, float layer_max) {
  const double ms = std::max(0.0, static_cast<double>(max_score));
  return layer_max > 0.0f ? ms / static_cast<double>(layer_max) : ms;
}

std::vector<std::size_t> rank_ascending(std::span<const RankItem> items) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (items[a].score != items[b].score) return items[a].score < items[b].score;
    return *items[a].image_id < *items[b].image_id;
  });
  std::vector<std::size_t> ranks(items.size());
  for (std::size_t r = 0; r < order.size(); ++r) ranks[order[r]] = r + 1;
  return ranks;
}

RankedMaps rank_maps(const UnitSummary& summary, std::span<const SelectedImage> selection,
                     const std::string& category) {
  if (selection.empty()) throw Error(ErrorCode::EmptySelection, "no images selected for category '" + category + "'");
  std::vector<RankItem> items;
  items.reserve(selection.size());
  for (const auto& sel : selection) {
    if (sel.image_index >= summary.max_scores.size())
      throw Error(ErrorCode::InvalidArgument, "selected image outside the unit summary");
    items.push_back(RankItem{normalized_max_score(summary.max_scores[sel.image_index], summary.layer_max), &sel.image_id});
  }
  const auto ranks = rank_ascending(items);

  RankedMaps ranked;
  ranked.category = category;
  ranked.entries.resize(selection.size());
  for (std::size_t i = 0; i < selection.size(); ++i) {
    ranked.entries[ranks[i] - 1] =
        RankedEntry{selection[i].image_index, selection[i].image_id, selection[i].label, items[i].score, ranks[i]};
  }
  return ranked;
}

ConceptScores concept_scores(const RankedMaps& ranked, const GlobalCategory& category) {
  ConceptScores scores;
  std::map<std::string, double> sums;
  for (const auto& s : category.subgroups) {
    sums[s] = 0.0;
    scores.support[s] = 0;
  }
  // Entries are in rank order, so accumulation order never depends on the
  // input image order.
  for (const auto& e : ranked.entries) {
    auto it = sums.find(e.subgroup);
    if (it == sums.end())
      throw Error(ErrorCode::UnknownConcept, "subgroup '" + e.subgroup + "' not in category '" + category.name + "'");
    it->second += static_cast<double>(e.rank) * e.score;
    ++scores.support[e.subgroup];
  }
  for (const auto& s : category.subgroups) {
    const std::size_t n = scores.support[s];
    if (n == 0) {
      scores.dropped_subgroups.push_back(s);
      scores.support.erase(s);
      continue;
    }
    scores.raw_scores[s] = sums[s] / static_cast<double>(n);
  }
  return scores;
}

GlobalProbabilities global_probabilities(std::uint32_t unit, const GlobalCategory& category,
                                         const ConceptScores& scores) {
  if (scores.raw_scores.size() < 2)
    throw Error(ErrorCode::EmptySelection,
                "category '" + category.name + "' needs two subgroups with images, has " +
                    std::to_string(scores.raw_scores.size()));
  GlobalProbabilities out;
  out.unit_index = unit;
  out.category = category.name;
  out.raw_scores = scores.raw_scores;
  out.support = scores.support;
  out.dropped_subgroups = scores.dropped_subgroups;

  double total = 0.0;
  for (const auto& s : category.subgroups)
    if (auto it = scores.raw_scores.find(s); it != scores.raw_scores.end()) total += it->second;

  if (!(total > 0.0)) {
    out.inactive = true;
    const double uniform = 1.0 / static_cast<double>(scores.raw_scores.size());
    for (const auto& [s, _] : scores.raw_scores) out.probabilities[s] = uniform;
    return out;
  }

  std::optional<std::string> best;
  double best_p = -1.0;
  for (const auto& s : category.subgroups) {
    auto it = scores.raw_scores.find(s);
    if (it == scores.raw_scores.end()) continue;
    const double p = it->second / total;
    out.probabilities[s] = p;
    if (p > best_p) {
      best_p = p;
      best = s;
    }
  }
  if (best_p > category.bias_threshold) out.biased_subgroup = best;
  return out;
}

GlobalProbabilities score_category(const UnitSummary& summary, std::span<const SelectedImage> selection,
                                   const GlobalCategory& category) {
  const auto ranked = rank_maps(summary, selection, category.name);
  return global_probabilities(summary.unit_index, category, concept_scores(ranked, category));
}

GlobalCategory color_scheme_category() {
  return GlobalCategory{"ColorScheme", {kColorSubgroup, kGraySubgroup}, GlobalCategory::default_threshold(2)};
}

std::vector<ColorSchemeProbability> color_scheme_probabilities(const ActivationSet& set,
                                                               const std::map<std::string, ColorScheme>& labels,
                                                               unsigned jobs) {
  const GlobalCategory category = color_scheme_category();
  std::vector<SelectedImage> selection;
  const auto& ids = set.image_ids();
  for (std::size_t n = 0; n < ids.size(); ++n) {
    if (auto it = labels.find(ids[n]); it != labels.end())
      selection.push_back(SelectedImage{n, ids[n], it->second == ColorScheme::Color ? kColorSubgroup : kGraySubgroup});
  }
  const auto summaries = unit_summaries(set, jobs);
  std::vector<ColorSchemeProbability> out(summaries.size());
  parallel_for(summaries.size(), jobs, [&](std::size_t u) {
    const auto probs = score_category(summaries[u], selection, category);
    out[u] = ColorSchemeProbability{probs.unit_index, probs.probabilities.at(kColorSubgroup),
                                    probs.probabilities.at(kGraySubgroup), probs.biased_subgroup.has_value(),
                                    probs.inactive};
  });
  return out;
}

}  // namespace hnd

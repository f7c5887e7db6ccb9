#include "hnd/report.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "hnd/errors.hpp"

namespace hnd {

using nlohmann::json;

bool is_interpretable(const UnitInterpretation& unit) {
  if (unit.stage2.assigned_region) return true;
  return std::any_of(unit.global.begin(), unit.global.end(),
                     [](const GlobalProbabilities& g) { return g.biased_subgroup.has_value(); });
}

std::string subgroup_key(const std::string& category, const std::string& subgroup) {
  return category + "/" + subgroup;
}

namespace {

struct RatioAccumulator {
  double sum = 0.0;
  std::size_t samples = 0;
  void add(double ratio) {
    sum += ratio;
    ++samples;
  }
  RatioStat stat() const { return RatioStat{samples == 0 ? 0.0 : sum / static_cast<double>(samples), samples}; }
};

}  // namespace

DissectionReport aggregate(std::span<const UnitInterpretation> units, const ConceptDictionary& dict,
                           const std::string& model_name, const std::string& layer_name,
                           std::vector<std::string> warnings) {
  DissectionReport report;
  report.model_name = model_name;
  report.layer_name = layer_name;
  report.unit_count = units.size();
  report.warnings = std::move(warnings);

  std::map<std::string, RatioAccumulator> category_ratios, region_ratios;
  for (const auto& unit : units) {
    std::vector<std::string> biased;
    for (const auto& g : unit.global) {
      if (g.biased_subgroup) {
        const auto key = subgroup_key(g.category, *g.biased_subgroup);
        ++report.global_concept_counts[key];
        biased.push_back(key);
      }
      if (g.inactive || g.probabilities.empty()) continue;
      const double mean = 1.0 / static_cast<double>(g.probabilities.size());
      for (const auto& [_, p] : g.probabilities)
        if (p > mean) category_ratios[g.category].add(p / mean);
    }

    if (unit.stage2.assigned_region) ++report.region_counts[*unit.stage2.assigned_region];
    if (unit.stage3 && !unit.stage3->region_only) {
      const auto& pairing = *unit.stage3;
      const double mean = 1.0 / static_cast<double>(pairing.region_size);
      for (const auto& [_, p] : pairing.concept_probabilities)
        if (p > mean) region_ratios[pairing.region].add(p / mean);
      for (const auto& concept_name : pairing.paired_concepts) {
        ++report.local_concept_counts[concept_name];
        ++report.concept_type_counts[to_string(dict.concept_named(concept_name).kind)];
        for (const auto& key : biased) ++report.overlap[concept_name][key];
      }
    }

    if (unit.interpretable) ++report.interpretable_units;
    if (unit.baseline.top_concept) {
      ++report.baseline_concept_counts[*unit.baseline.top_concept];
      ++report.baseline_interpretable_units;
    }
  }
  if (!units.empty()) {
    report.coverage = static_cast<double>(report.interpretable_units) / static_cast<double>(units.size());
    report.baseline_coverage =
        static_cast<double>(report.baseline_interpretable_units) / static_cast<double>(units.size());
  }
  for (const auto& [name, acc] : category_ratios) report.category_ratio_stats[name] = acc.stat();
  for (const auto& [name, acc] : region_ratios) report.region_ratio_stats[name] = acc.stat();
  return report;
}

// ---------------------------------------------------------------------------
// JSON

void to_json(json& j, const RatioStat& s) { j = json{{"mean_ratio", s.mean_ratio}, {"samples", s.samples}}; }
void from_json(const json& j, RatioStat& s) {
  j.at("mean_ratio").get_to(s.mean_ratio);
  j.at("samples").get_to(s.samples);
}

void to_json(json& j, const GlobalProbabilities& g) {
  j = json{{"category", g.category},
           {"raw_scores", g.raw_scores},
           {"probabilities", g.probabilities},
           {"support", g.support},
           {"dropped_subgroups", g.dropped_subgroups},
           {"biased_subgroup", g.biased_subgroup ? json(*g.biased_subgroup) : json(nullptr)},
           {"inactive", g.inactive}};
}
void from_json(const json& j, GlobalProbabilities& g) {
  j.at("category").get_to(g.category);
  j.at("raw_scores").get_to(g.raw_scores);
  j.at("probabilities").get_to(g.probabilities);
  j.at("support").get_to(g.support);
  j.at("dropped_subgroups").get_to(g.dropped_subgroups);
  const auto& b = j.at("biased_subgroup");
  g.biased_subgroup = b.is_null() ? std::nullopt : std::optional<std::string>(b.get<std::string>());
  j.at("inactive").get_to(g.inactive);
}

void to_json(json& j, const IoUTable& t) {
  j = json{{"threshold", t.threshold},
           {"scores", t.scores},
           {"top_concept", t.top_concept},
           {"top_iou", t.top_iou},
           {"assigned_region", t.assigned_region ? json(*t.assigned_region) : json(nullptr)}};
}
void from_json(const json& j, IoUTable& t) {
  j.at("threshold").get_to(t.threshold);
  j.at("scores").get_to(t.scores);
  j.at("top_concept").get_to(t.top_concept);
  j.at("top_iou").get_to(t.top_iou);
  const auto& r = j.at("assigned_region");
  t.assigned_region = r.is_null() ? std::nullopt : std::optional<std::string>(r.get<std::string>());
}

void to_json(json& j, const ConceptProvenance& p) {
  j = json{{"raw_score", p.raw_score}, {"iou", p.iou}, {"support", p.support}};
}
void from_json(const json& j, ConceptProvenance& p) {
  j.at("raw_score").get_to(p.raw_score);
  j.at("iou").get_to(p.iou);
  j.at("support").get_to(p.support);
}

void to_json(json& j, const LocalPairing& p) {
  j = json{{"region", p.region},
           {"region_size", p.region_size},
           {"threshold", p.threshold},
           {"concept_probabilities", p.concept_probabilities},
           {"paired_concepts", p.paired_concepts},
           {"provenance", p.provenance},
           {"region_only", p.region_only}};
}
void from_json(const json& j, LocalPairing& p) {
  j.at("region").get_to(p.region);
  j.at("region_size").get_to(p.region_size);
  j.at("threshold").get_to(p.threshold);
  j.at("concept_probabilities").get_to(p.concept_probabilities);
  j.at("paired_concepts").get_to(p.paired_concepts);
  j.at("provenance").get_to(p.provenance);
  j.at("region_only").get_to(p.region_only);
}

void to_json(json& j, const UnitInterpretation& u) {
  j = json{{"unit", u.unit_index},
           {"inactive", u.inactive},
           {"interpretable", u.interpretable},
           {"global", u.global},
           {"stage2", u.stage2},
           {"stage3", u.stage3 ? json(*u.stage3) : json(nullptr)},
           {"baseline", json{{"top_concept", u.baseline.top_concept ? json(*u.baseline.top_concept) : json(nullptr)},
                             {"top_iou", u.baseline.top_iou}}}};
}
void from_json(const json& j, UnitInterpretation& u) {
  j.at("unit").get_to(u.unit_index);
  j.at("inactive").get_to(u.inactive);
  j.at("interpretable").get_to(u.interpretable);
  j.at("global").get_to(u.global);
  for (auto& g : u.global) g.unit_index = u.unit_index;
  j.at("stage2").get_to(u.stage2);
  u.stage2.unit_index = u.unit_index;
  if (j.at("stage3").is_null()) {
    u.stage3.reset();
  } else {
    u.stage3 = j.at("stage3").get<LocalPairing>();
    u.stage3->unit_index = u.unit_index;
  }
  const auto& b = j.at("baseline");
  u.baseline.unit_index = u.unit_index;
  u.baseline.top_concept =
      b.at("top_concept").is_null() ? std::nullopt : std::optional<std::string>(b.at("top_concept").get<std::string>());
  b.at("top_iou").get_to(u.baseline.top_iou);
}

void to_json(json& j, const DissectionReport& r) {
  j = json{{"model", r.model_name},
           {"layer", r.layer_name},
           {"unit_count", r.unit_count},
           {"local_concept_counts", r.local_concept_counts},
           {"global_concept_counts", r.global_concept_counts},
           {"region_counts", r.region_counts},
           {"concept_type_counts", r.concept_type_counts},
           {"overlap", r.overlap},
           {"interpretable_units", r.interpretable_units},
           {"coverage", r.coverage},
           {"baseline_concept_counts", r.baseline_concept_counts},
           {"baseline_interpretable_units", r.baseline_interpretable_units},
           {"baseline_coverage", r.baseline_coverage},
           {"probability_ratio_stats", json{{"categories", r.category_ratio_stats}, {"regions", r.region_ratio_stats}}},
           {"warnings", r.warnings}};
}
void from_json(const json& j, DissectionReport& r) {
  j.at("model").get_to(r.model_name);
  j.at("layer").get_to(r.layer_name);
  j.at("unit_count").get_to(r.unit_count);
  j.at("local_concept_counts").get_to(r.local_concept_counts);
  j.at("global_concept_counts").get_to(r.global_concept_counts);
  j.at("region_counts").get_to(r.region_counts);
  j.at("concept_type_counts").get_to(r.concept_type_counts);
  j.at("overlap").get_to(r.overlap);
  j.at("interpretable_units").get_to(r.interpretable_units);
  j.at("coverage").get_to(r.coverage);
  j.at("baseline_concept_counts").get_to(r.baseline_concept_counts);
  j.at("baseline_interpretable_units").get_to(r.baseline_interpretable_units);
  j.at("baseline_coverage").get_to(r.baseline_coverage);
  j.at("probability_ratio_stats").at("categories").get_to(r.category_ratio_stats);
  j.at("probability_ratio_stats").at("regions").get_to(r.region_ratio_stats);
  j.at("warnings").get_to(r.warnings);
}

std::string report_to_json(const ModelReport& report) {
  json doc;
  doc["model"] = report.model_name;
  doc["layers"] = json::array();
  for (const auto& layer : report.layers) {
    json node = layer.summary;
    node["units"] = layer.units;
    doc["layers"].push_back(std::move(node));
  }
  return doc.dump(2) + "\n";
}

ModelReport report_from_json(const std::string& text) {
  try {
    const json doc = json::parse(text);
    ModelReport report;
    doc.at("model").get_to(report.model_name);
    for (const auto& node : doc.at("layers")) {
      LayerReport layer;
      node.get_to(layer.summary);
      node.at("units").get_to(layer.units);
      report.layers.push_back(std::move(layer));
    }
    return report;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("bad report document: ") + e.what());
  }
}

void write_report_json(const std::filesystem::path& path, const ModelReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << report_to_json(report);
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

ModelReport read_report_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return report_from_json(text);
}

// ---------------------------------------------------------------------------
// CSV tables

namespace {

std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n") == std::string::npos) return value;
  std::string quoted = "\"";
  for (char c : value) {
    if (c == '"') quoted.push_back('"');
    quoted.push_back(c);
  }
  quoted.push_back('"');
  return quoted;
}

class CsvWriter {
 public:
  CsvWriter(std::filesystem::path path, const std::string& header) : path_(std::move(path)) { buffer_ << header << '\n'; }

  template <typename... Args>
  void row(const Args&... cells) {
    bool first = true;
    ((buffer_ << (first ? "" : ",") << cell(cells), first = false), ...);
    buffer_ << '\n';
  }

  void save() const {
    std::ofstream out(path_, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + path_.string());
    out << buffer_.str();
    if (!out) throw Error(ErrorCode::Io, "write failed: " + path_.string());
  }

 private:
  static std::string cell(const std::string& s) { return csv_field(s); }
  static std::string cell(const char* s) { return csv_field(s); }
  static std::string cell(double v) { return fmt::format("{}", v); }
  static std::string cell(std::size_t v) { return std::to_string(v); }
  static std::string cell(std::uint32_t v) { return std::to_string(v); }

  std::filesystem::path path_;
  std::ostringstream buffer_;
};

std::pair<std::string, std::string> split_key(const std::string& key) {
  const auto slash = key.find('/');
  return {key.substr(0, slash), slash == std::string::npos ? std::string{} : key.substr(slash + 1)};
}

}  // namespace

void write_report_tables(const std::filesystem::path& dir, const ModelReport& report, const ConceptDictionary& dict) {
  std::filesystem::create_directories(dir);
  {
    CsvWriter csv(dir / "histogram_local.csv", "layer,concept,region,kind,units");
    for (const auto& layer : report.layers)
      for (const auto& [name, count] : layer.summary.local_concept_counts) {
        const auto& c = dict.concept_named(name);
        csv.row(layer.summary.layer_name, name, c.region, to_string(c.kind), count);
      }
    csv.save();
  }
  {
    CsvWriter csv(dir / "histogram_global.csv", "layer,category,subgroup,units");
    for (const auto& layer : report.layers)
      for (const auto& [key, count] : layer.summary.global_concept_counts) {
        const auto [cat, sub] = split_key(key);
        csv.row(layer.summary.layer_name, cat, sub, count);
      }
    csv.save();
  }
  {
    CsvWriter csv(dir / "overlap.csv", "layer,concept,category,subgroup,units");
    for (const auto& layer : report.layers)
      for (const auto& [name, row] : layer.summary.overlap)
        for (const auto& [key, count] : row) {
          const auto [cat, sub] = split_key(key);
          csv.row(layer.summary.layer_name, name, cat, sub, count);
        }
    csv.save();
  }
  {
    CsvWriter csv(dir / "coverage.csv",
                  "layer,unit_count,interpretable,coverage,baseline_interpretable,baseline_coverage");
    for (const auto& layer : report.layers) {
      const auto& s = layer.summary;
      csv.row(s.layer_name, s.unit_count, s.interpretable_units, s.coverage, s.baseline_interpretable_units,
              s.baseline_coverage);
    }
    csv.save();
  }
  {
    CsvWriter csv(dir / "bias_curves.csv", "layer,category,subgroup,position,probability");
    for (const auto& layer : report.layers) {
      for (const auto& category : dict.categories()) {
        std::vector<GlobalProbabilities> probs;
        for (const auto& unit : layer.units)
          for (const auto& g : unit.global)
            if (g.category == category.name) probs.push_back(g);
        if (probs.empty()) continue;
        for (const auto& subgroup : category.subgroups) {
          const auto curve = sorted_probability_curve(probs, subgroup);
          for (std::size_t i = 0; i < curve.size(); ++i)
            csv.row(layer.summary.layer_name, category.name, subgroup, i, curve[i]);
        }
      }
    }
    csv.save();
  }
  {
    CsvWriter csv(dir / "baseline_histogram.csv", "layer,concept,region,units");
    for (const auto& layer : report.layers)
      for (const auto& [name, count] : layer.summary.baseline_concept_counts)
        csv.row(layer.summary.layer_name, name, dict.concept_named(name).region, count);
    csv.save();
  }
}

void write_iou_csv(const std::filesystem::path& path, const ModelReport& report) {
  CsvWriter csv(path, "layer,unit,concept,iou");
  for (const auto& layer : report.layers)
    for (const auto& unit : layer.units)
      for (const auto& [name, value] : unit.stage2.scores) csv.row(layer.summary.layer_name, unit.unit_index, name, value);
  csv.save();
}

// ---------------------------------------------------------------------------
// Bias analysis helpers

std::map<std::string, std::vector<RankedImage>> top_activated_images(
    std::span<const UnitSummary> summaries, const std::vector<std::string>& image_ids,
    const std::map<std::string, std::string>& class_labels, const std::vector<std::string>& classes, std::size_t k,
    std::optional<std::uint32_t> unit) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (summaries.empty()) throw Error(ErrorCode::InvalidArgument, "no unit summaries");
  if (unit && *unit >= summaries.size()) throw Error(ErrorCode::InvalidArgument, "unit index out of range");

  std::map<std::string, std::vector<RankedImage>> out;
  for (const auto& c : classes) out[c];
  for (std::size_t n = 0; n < image_ids.size(); ++n) {
    auto it = class_labels.find(image_ids[n]);
    if (it == class_labels.end()) continue;
    auto bucket = out.find(it->second);
    if (bucket == out.end())
      throw Error(ErrorCode::UnknownClassLabel, "image '" + image_ids[n] + "' has undeclared class '" + it->second + "'");
    double score;
    if (unit) {
      score = summaries[*unit].max_scores.at(n);
    } else {
      score = summaries.front().max_scores.at(n);
      for (const auto& s : summaries) score = std::max(score, static_cast<double>(s.max_scores.at(n)));
    }
    bucket->second.push_back(RankedImage{image_ids[n], score});
  }
  for (auto& [_, images] : out) {
    std::sort(images.begin(), images.end(), [](const RankedImage& a, const RankedImage& b) {
      return a.score != b.score ? a.score > b.score : a.image_id < b.image_id;
    });
    if (images.size() > k) images.resize(k);
  }
  return out;
}

std::vector<LayerCount> biased_unit_counts(std::span<const LayerProbabilities> layers, double threshold) {
  std::vector<LayerCount> counts;
  for (const auto& layer : layers) {
    LayerCount c{layer.layer_name, 0, layer.units.size()};
    for (const auto& g : layer.units) {
      if (g.inactive) continue;
      if (std::any_of(g.probabilities.begin(), g.probabilities.end(),
                      [&](const auto& kv) { return kv.second > threshold; }))
        ++c.biased_units;
    }
    counts.push_back(c);
  }
  return counts;
}

std::vector<double> sorted_probability_curve(std::span<const GlobalProbabilities> units, const std::string& subgroup) {
  std::vector<double> curve;
  for (const auto& g : units) {
    if (g.inactive) continue;
    if (auto it = g.probabilities.find(subgroup); it != g.probabilities.end()) curve.push_back(it->second);
  }
  std::sort(curve.begin(), curve.end());
  return curve;
}

double max_curve_slope(std::span<const double> sorted_curve) {
  const std::size_t n = sorted_curve.size();
  if (n < 2) return 0.0;
  const std::size_t window = std::max<std::size_t>(1, n / 20);
  const double dx = static_cast<double>(window) / static_cast<double>(n - 1);
  double best = 0.0;
  for (std::size_t i = 0; i + window < n; ++i) best = std::max(best, (sorted_curve[i + window] - sorted_curve[i]) / dx);
  return best;
}

}  // namespace hnd

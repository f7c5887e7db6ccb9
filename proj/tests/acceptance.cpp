// Acceptance runner: one PASS/FAIL line per primary criterion, each with its
// own time budget. Exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <json.hpp>

#include "hnd/activation_store.hpp"
#include "hnd/baseline.hpp"
#include "hnd/pipeline.hpp"
#include "hnd/stage1_global.hpp"
#include "hnd/stage2_parts.hpp"
#include "hnd/stage3_local.hpp"
#include "hnd/synthetic_bench.hpp"
#include "support.hpp"
#include "unit142_case.hpp"

using namespace hnd;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Failure {
  std::string what;
};

void require(bool condition, const std::string& what) {
  if (!condition) throw Failure{what};
}

std::string capture(const std::string& command) {
  std::string out;
  FILE* pipe = popen(command.c_str(), "r");
  if (pipe == nullptr) throw Failure{"cannot run " + command};
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  const int status = pclose(pipe);
  if (status != 0) throw Failure{fmt::format("'{}' exited with status {}", command, status)};
  return out;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

json oracle_document() { return json::parse(capture(fmt::format("{} {}", HND_PYTHON, quoted(HND_ORACLE_SCRIPT)))); }

std::vector<SelectedImage> selection(const std::vector<std::string>& labels) {
  std::vector<SelectedImage> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({i, "i" + std::to_string(i + 1), labels[i]});
  return out;
}

// 1 -----------------------------------------------------------------------

Outcome global_worked_example() {
  const auto oracle = oracle_document().at("global");
  const GlobalCategory cat{"G", {"A", "B"}, 0.55};
  const auto p = score_category(UnitSummary{0, {0.25f, 1.0f, 0.5f, 0.75f}, 1.0f}, selection({"A", "A", "B", "B"}), cat);
  const double pa = p.probabilities.at("A");
  require(std::abs(pa - 0.5667) <= 1e-4 + 1e-12, fmt::format("P_A {} not 0.5667", pa));
  require(std::abs(pa - oracle.at("p").at("A").get<double>()) <= 1e-6, "P_A differs from the brute-force script");
  require(std::abs(p.probabilities.at("B") - oracle.at("p").at("B").get<double>()) <= 1e-6, "P_B differs from script");
  require(std::abs(pa - 17.0 / 30.0) <= 1e-6, "P_A not 17/30");
  require(p.biased_subgroup == std::optional<std::string>("A") && oracle.at("biased") == "A", "bias flag at 0.55 missing");
  return {true, fmt::format("P_A={:.7f} script={:.7f} biased={}", pa, oracle.at("p").at("A").get<double>(),
                            *p.biased_subgroup)};
}

// 2 -----------------------------------------------------------------------

Outcome local_worked_example() {
  const auto oracle = oracle_document().at("local");
  std::vector<ImageRecord> images{test::image("i1", {}, {"c1"}), test::image("i2", {}, {"c1", "c2"}),
                                  test::image("i3", {}, {"c2"}), test::image("i4", {}, {"c3"})};
  std::map<ConceptDictionary::MaskKey, BinaryRaster> masks;
  for (const auto& img : images)
    for (const auto& c : img.local_labels) masks[{img.image_id, c}] = test::rect_mask(8, 8, 0, 0, 2, 2);
  const ConceptDictionary dict({},
                               {{"c1", ConceptKind::Attribute, "R", {}},
                                {"c2", ConceptKind::Attribute, "R", {}},
                                {"c3", ConceptKind::Attribute, "R", {}}},
                               {"R"}, std::move(images), std::move(masks));
  const auto sel = select_region_maps(std::vector<std::string>{"i1", "i2", "i3", "i4"}, dict, "R");
  IoUTable t;
  t.scores = {{"c1", 0.10}, {"c2", 0.05}, {"c3", 0.20}};
  const auto p = local_probabilities(sel, UnitSummary{0, {0.2f, 0.4f, 0.6f, 0.8f}, 1.0f}, t, dict, "R");
  const std::vector<double> expected{0.066, 0.086, 0.848};
  std::vector<double> got;
  for (const char* c : {"c1", "c2", "c3"}) {
    got.push_back(p.concept_probabilities.at(c));
    require(std::abs(got.back() - oracle.at("p").at(c).get<double>()) <= 1e-6,
            fmt::format("P({}) differs from the brute-force script", c));
  }
  for (std::size_t i = 0; i < 3; ++i)
    require(std::abs(got[i] - expected[i]) <= 1e-3, fmt::format("P[{}] = {} not {}", i, got[i], expected[i]));
  const std::set<std::string> paired_script(oracle.at("paired").begin(), oracle.at("paired").end());
  require(p.paired_concepts == std::set<std::string>{"c3"} && paired_script == p.paired_concepts, "pairing is not {c3}");
  return {true, fmt::format("P=[{:.4f}, {:.4f}, {:.4f}] paired={{c3}}", got[0], got[1], got[2])};
}

// 3 -----------------------------------------------------------------------

Outcome iou_oracle() {
  std::mt19937_64 rng(1000);
  for (int t = 0; t < 1000; ++t) {
    const auto a = test::random_mask(rng, 8, 8, 0.1 + 0.8 * (t % 10) / 10.0);
    const auto b = test::random_mask(rng, 8, 8, 0.5);
    std::size_t inter = 0, uni = 0;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        inter += a.at(x, y) && b.at(x, y);
        uni += a.at(x, y) || b.at(x, y);
      }
    const double expected = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
    const std::vector<BinaryRaster> ua{a}, ub{b};
    require(iou(ua, ub) == expected, fmt::format("pair {} differs from pixel count", t));
  }
  return {true, "1000/1000 pairs exact"};
}

// 4 -----------------------------------------------------------------------

struct Instance {
  GlobalCategory category;
  std::vector<std::string> labels;
  std::vector<float> base;  // integer-valued
};

Instance random_instance(std::mt19937_64& rng) {
  Instance inst;
  const std::size_t groups = 2 + rng() % 3;
  inst.category.name = "G";
  for (std::size_t g = 0; g < groups; ++g) inst.category.subgroups.push_back("s" + std::to_string(g));
  inst.category.bias_threshold = GlobalCategory::default_threshold(groups);
  const std::size_t n = groups + rng() % 60;
  for (std::size_t i = 0; i < n; ++i) {
    inst.labels.push_back(inst.category.subgroups[i < groups ? i : rng() % groups]);
    inst.base.push_back(static_cast<float>(rng() % 1024));
  }
  if (*std::max_element(inst.base.begin(), inst.base.end()) == 0.0f) inst.base[0] = 1.0f;
  return inst;
}

void check_normalization() {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<float> value(0.0f, 50.0f);
  for (int t = 0; t < 200; ++t) {
    auto inst = random_instance(rng);
    for (auto& v : inst.base) v = value(rng);
    const auto p = score_category(UnitSummary{0, inst.base, 50.0f}, selection(inst.labels), inst.category);
    double total = 0;
    for (const auto& [_, v] : p.probabilities) total += v;
    require(std::abs(total - 1.0) <= 1e-9, fmt::format("normalization: sum {} on instance {}", total, t));
  }
}

// Activations m*c for c in {1e-3, 1, 1e3} relative to the middle layer; the
// layers hold integer m, 1e3 m and 1e6 m so every value is exact in float32.
void check_scale_invariance() {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const auto inst = random_instance(rng);
    std::vector<ImageRecord> images;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < inst.labels.size(); ++i) {
      ids.push_back("i" + std::to_string(i));
      images.push_back(test::image(ids.back(), {{"G", inst.labels[i]}}));
    }
    const ConceptDictionary dict({inst.category}, {}, {}, images, {});
    std::vector<std::map<std::string, double>> runs;
    for (float c : {1.0f, 1e3f, 1e6f}) {
      std::vector<float> values;
      for (float b : inst.base) values.insert(values.end(), {b * c, 0.0f});
      const auto set = ActivationSet::from_values("L", 1, ids, MapDims{1, 2}, values);
      runs.push_back(score_category(unit_summaries(set)[0], category_selection(dict, set, "G"), inst.category)
                         .probabilities);
    }
    for (const auto& [g, v] : runs[1])
      require(std::abs(runs[0].at(g) - v) <= 1e-9 && std::abs(runs[2].at(g) - v) <= 1e-9,
              fmt::format("scale invariance: instance {}", t));
  }
}

void check_permutation_invariance() {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<float> value(0.0f, 1.0f);
  for (int t = 0; t < 200; ++t) {
    auto inst = random_instance(rng);
    for (auto& v : inst.base) v = value(rng);
    const auto sel = selection(inst.labels);
    const auto a = score_category(UnitSummary{0, inst.base, 1.0f}, sel, inst.category);
    std::vector<std::size_t> order(sel.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<float> ms;
    std::vector<SelectedImage> shuffled;
    for (std::size_t i = 0; i < order.size(); ++i) {
      ms.push_back(inst.base[order[i]]);
      shuffled.push_back({i, sel[order[i]].image_id, sel[order[i]].label});
    }
    const auto b = score_category(UnitSummary{0, ms, 1.0f}, shuffled, inst.category);
    require(a.probabilities == b.probabilities, fmt::format("permutation invariance: instance {}", t));
  }
}

ActivationSet random_set(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> units(1, 5), images(1, 6), side(1, 5);
  const std::uint32_t u = units(rng), n = images(rng);
  const MapDims dims{side(rng), side(rng)};
  std::vector<std::string> ids;
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(fmt::format("img_{}_{}", rng() % 100000, i));
  std::normal_distribution<float> value(0.0f, 3.0f);
  std::vector<float> values(static_cast<std::size_t>(u) * n * dims.area());
  for (auto& v : values) v = value(rng);
  return ActivationSet::from_values(fmt::format("layer{}", u), u, ids, dims, values);
}

void check_quantile_monotone() {
  std::mt19937_64 rng(33);
  std::uniform_real_distribution<double> q(0.001, 0.999);
  for (int t = 0; t < 200; ++t) {
    const auto set = random_set(rng);
    double q1 = q(rng), q2 = q(rng);
    if (q1 > q2) std::swap(q1, q2);
    for (std::uint32_t u = 0; u < set.unit_count(); ++u)
      require(activation_quantile(set, u, q1) >= activation_quantile(set, u, q2),
              fmt::format("quantile monotonicity: instance {}", t));
  }
}

void check_hnda_round_trip() {
  test::TempDir dir;
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 200; ++t) {
    const auto set = random_set(rng);
    const auto path = dir / fmt::format("s{}.hnda", t);
    write_activations(path, set);
    const auto back = read_activations(path);
    bool same = back.layer_name() == set.layer_name() && back.unit_count() == set.unit_count() &&
                back.image_ids() == set.image_ids() && back.map_dims() == set.map_dims();
    for (std::uint32_t u = 0; same && u < set.unit_count(); ++u) {
      const auto a = set.unit_slice(u), b = back.unit_slice(u);
      same = std::equal(a.begin(), a.end(), b.begin(), b.end(),
                        [](float x, float y) { return std::memcmp(&x, &y, sizeof x) == 0; });
    }
    require(same, fmt::format("HNDA round trip: instance {}", t));
  }
}

Outcome invariant_suite() {
  check_normalization();
  check_scale_invariance();
  check_permutation_invariance();
  check_quantile_monotone();
  check_hnda_round_trip();
  return {true, "normalization, scale, permutation, quantile, HNDA: 200/200 each"};
}

// 5 -----------------------------------------------------------------------

Outcome planted_recovery() {
  const std::vector<double> deltas{0.0, 0.5, 1.0, 2.0};
  constexpr int kReplicates = 8;
  std::map<double, bench::RecoveryBucket> pooled;
  DissectOptions options;
  for (int seed = 1; seed <= kReplicates; ++seed) {
    const auto data = bench::generate(bench::recovery_spec(64, 200, deltas, static_cast<std::uint64_t>(seed)));
    const auto layer = dissect_layer(data.dictionary, data.activations, options);
    const auto scores = bench::score_recovery(data.truth, make_layer_report(layer, data.dictionary, "bench"));
    for (const auto& b : scores.buckets) {
      auto& p = pooled[b.delta];
      p.delta = b.delta;
      p.units += b.units;
      p.flagged_units += b.flagged_units;
      p.targets += b.targets;
      p.recovered += b.recovered;
    }
  }
  std::vector<double> recall;
  std::string detail;
  for (double d : deltas) {
    const auto& b = pooled.at(d);
    recall.push_back(b.targets == 0 ? 0.0 : static_cast<double>(b.recovered) / static_cast<double>(b.targets));
    detail += fmt::format("d={} recall={:.3f} flagged={:.3f}; ", d, recall.back(), b.flagged_rate());
  }
  detail += fmt::format("{} seeds pooled", kReplicates);
  Outcome out{true, detail};
  std::vector<std::string> problems;
  for (std::size_t i = 1; i < recall.size(); ++i)
    if (recall[i] < recall[i - 1]) problems.push_back("recall not monotone in delta");
  if (recall.back() < 0.9) problems.push_back("recall at delta 2 below 0.9");
  if (pooled.at(0.0).flagged_rate() > 0.10) problems.push_back("flagged-unit rate at delta 0 above 10%");
  if (!problems.empty()) {
    out.pass = false;
    for (const auto& p : problems) out.detail += " | " + p;
  }
  return out;
}

// 6 -----------------------------------------------------------------------

Outcome grayscale_sweep() {
  struct LayerShape {
    const char* name;
    MapDims dims;
    std::uint64_t seed;
  };
  const std::vector<LayerShape> layers{{"conv3", {28, 28}, 31}, {"conv4", {14, 14}, 41}, {"conv5", {7, 7}, 51}};
  const double threshold = color_scheme_category().bias_threshold;
  Outcome out{true, ""};
  for (const auto& shape : layers) {
    std::vector<LayerProbabilities> at;
    std::vector<double> slope;
    for (double percent : {50.0, 100.0}) {
      bench::PlantedSpec spec;
      spec.layer_name = shape.name;
      spec.map_dims = shape.dims;
      spec.skew_kind = bench::SkewKind::ColorScheme;
      spec.skew_percent = percent;
      spec.seed = shape.seed;
      const auto data = bench::generate(spec);
      const auto d = global_only(data.dictionary, data.activations, DissectOptions{}, {"ColorScheme"});
      LayerProbabilities lp{shape.name, {}};
      for (const auto& u : d.units) lp.units.push_back(u.global.at(0));
      const auto curve = sorted_probability_curve(lp.units, "Gray");
      slope.push_back(max_curve_slope(curve));
      at.push_back(std::move(lp));
    }
    const auto counts = biased_unit_counts(at, threshold);
    const bool ok = counts[1].biased_units > counts[0].biased_units && slope[1] > slope[0];
    out.pass = out.pass && ok;
    out.detail += fmt::format("{}: biased {}->{} slope {:.3f}->{:.3f}; ", shape.name, counts[0].biased_units,
                              counts[1].biased_units, slope[0], slope[1]);
  }
  return out;
}

// 7 -----------------------------------------------------------------------

Outcome unit142() {
  const auto c = test::unit142_case();
  DissectOptions options;
  const auto layer = dissect_layer(c.dict, c.set, options);
  require(layer.units.size() == 1, "expected one unit");
  const auto& u = layer.units[0];
  const double iou_shadow = u.stage2.scores.at(test::kShadow), iou_rosy = u.stage2.scores.at(test::kRosy);
  require(iou_shadow > iou_rosy, "constructed case lost its IoU ordering");
  require(u.baseline.top_concept == std::optional<std::string>(test::kShadow), "baseline does not report the IoU winner");
  require(u.stage3.has_value(), "no local pairing");
  const double p_shadow = u.stage3->concept_probabilities.at(test::kShadow);
  const double p_rosy = u.stage3->concept_probabilities.at(test::kRosy);
  require(p_rosy > p_shadow, "probability winner is not the lower-IoU concept");
  require(u.stage3->paired_concepts == std::set<std::string>{test::kRosy}, "hierarchical report does not pair Rosy Cheeks");

  // The reported pair (IoU 0.1914 / P 0.1884 vs IoU 0.1109 / P 0.2276):
  // a two-image region reproduces the probability ratio from the IoUs.
  const double ratio = (0.2276 / 0.1884) * (0.1914 / 0.1109);
  std::vector<ImageRecord> images{test::image("s", {}, {"S"}), test::image("r", {}, {"R"})};
  std::map<ConceptDictionary::MaskKey, BinaryRaster> masks{{{"s", "S"}, test::rect_mask(8, 8, 0, 0, 1, 1)},
                                                           {{"r", "R"}, test::rect_mask(8, 8, 0, 0, 1, 1)}};
  const ConceptDictionary dict({}, {{"S", ConceptKind::Attribute, "Cheek", {}}, {"R", ConceptKind::Attribute, "Cheek", {}}},
                               {"Cheek"}, images, masks);
  const float ms_s = 0.5f;
  const float ms_r = static_cast<float>(ratio * ms_s / 2.0);
  IoUTable t;
  t.scores = {{"S", 0.1914}, {"R", 0.1109}};
  const auto p = local_probabilities(select_region_maps(std::vector<std::string>{"s", "r"}, dict, "Cheek"),
                                     UnitSummary{0, {ms_s, ms_r}, 1.0f}, t, dict, "Cheek");
  const double got_ratio = p.concept_probabilities.at("R") / p.concept_probabilities.at("S");
  require(std::abs(got_ratio - 0.2276 / 0.1884) <= 1e-6, "reported probability ratio not reproduced");
  require(baseline_pair(assign_region(t, dict)).top_concept == std::optional<std::string>("S"),
          "baseline on reported IoUs is not the shadow concept");
  return {true, fmt::format("IoU shadow {:.4f} > rosy {:.4f}; P rosy {:.4f} > shadow {:.4f}; baseline=shadow "
                            "paired={{rosy}}; reported ratio {:.4f}",
                            iou_shadow, iou_rosy, p_rosy, p_shadow, got_ratio)};
}

// 8 -----------------------------------------------------------------------

Outcome mask_area() {
  const ImageDims dims{128, 128};
  std::string detail;
  bool pass = true;
  for (double sigma : {8.0, 10.0, 12.5, 16.0, 20.0, 24.0}) {
    // Eight landmarks on a circle of radius r have per-axis sample variance
    // r^2 * 4/7 with the n-1 denominator.
    const double r = sigma * std::sqrt(7.0 / 4.0);
    std::vector<Point> pts;
    for (int k = 0; k < 8; ++k) {
      const double a = k * std::numbers::pi / 4.0;
      pts.push_back({64.0 + r * std::cos(a), 64.0 + r * std::sin(a)});
    }
    const double expected = std::numbers::pi * sigma * sigma * 5.991;
    const double area = static_cast<double>(synthesize_mask(pts, dims, 0.95).foreground_count());
    const double rel = std::abs(area - expected) / expected;
    pass = pass && rel <= 0.05;
    detail += fmt::format("s={} {:.2f}%; ", sigma, 100 * rel);
  }
  return {pass, detail};
}

// 9 -----------------------------------------------------------------------

Outcome toy_determinism() {
  const std::filesystem::path toy = HND_TOY_DIR;
  const auto golden = test::read_file(toy / "report.json");
  test::TempDir dir;
  std::vector<std::string> outputs;
  for (const auto& [run, jobs] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 4}, {"d", 4}}) {
    const auto out = dir / run;
    capture(fmt::format("{} dissect --manifest {} --activations toy={} --model-name toy --jobs {} --out {} 2>&1",
                        quoted(HND_TOOL), quoted(toy / "manifest.json"), quoted(toy / "toy.hnda"), jobs, quoted(out)));
    outputs.push_back(test::read_file(out / "report.json"));
  }
  for (std::size_t i = 0; i < outputs.size(); ++i)
    require(outputs[i] == golden, fmt::format("run {} differs from the checked-in report.json", i));
  return {true, fmt::format("4 runs (jobs 1,1,4,4) byte-identical to golden ({} bytes)", golden.size())};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "global-worked-example", 1.0, global_worked_example},
      {2, "local-worked-example", 1.0, local_worked_example},
      {3, "iou-oracle", 5.0, iou_oracle},
      {4, "invariant-suite", 60.0, invariant_suite},
      {5, "planted-recovery", 120.0, planted_recovery},
      {6, "grayscale-sweep", 120.0, grayscale_sweep},
      {7, "unit142-phenomenon", 60.0, unit142},
      {8, "mask-area", 60.0, mask_area},
      {9, "toy-determinism", 60.0, toy_determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const Failure& f) {
      out = {false, f.what};
    } catch (const std::exception& e) {
      out = {false, std::string("exception: ") + e.what()};
    }
    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (elapsed > c.budget_s) {
      out.pass = false;
      out.detail += fmt::format(" | over budget ({:.0f} s)", c.budget_s);
    }
    failed += !out.pass;
    fmt::print("{} [{}] {} ({:.3f} s): {}\n", out.pass ? "PASS" : "FAIL", c.id, c.name, elapsed, out.detail);
    std::fflush(stdout);
  }
  fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}

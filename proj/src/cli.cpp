#include "hnd/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "hnd/activation_store.hpp"
#include "hnd/dictionary.hpp"
#include "hnd/errors.hpp"
#include "hnd/pipeline.hpp"
#include "hnd/report.hpp"
#include "hnd/synthetic_bench.hpp"

namespace hnd::cli {

using nlohmann::json;

std::pair<std::string, std::filesystem::path> parse_layer_binding(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == text.size())
    throw Error(ErrorCode::InvalidArgument, "expected <layer>=<path>, got '" + text + "'");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

void validate(const RunConfig& config) {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(config.quantile)) throw Error(ErrorCode::InvalidArgument, "--quantile must lie in (0,1)");
  if (!in_unit(config.iou_cutoff)) throw Error(ErrorCode::InvalidArgument, "--iou-cutoff must lie in (0,1)");
  for (const auto& [name, t] : config.bias_thresholds)
    if (!in_unit(t)) throw Error(ErrorCode::InvalidArgument, "bias threshold for '" + name + "' must lie in (0,1)");
  if (!(config.local_factor > 1.0)) throw Error(ErrorCode::InvalidArgument, "--local-factor must exceed 1");
  if (config.quantile_method != "exact" && config.quantile_method != "reservoir")
    throw Error(ErrorCode::InvalidArgument, "--quantile-method must be exact or reservoir");
  if (config.format != "json" && config.format != "csv")
    throw Error(ErrorCode::InvalidArgument, "--format must be json or csv");
}

namespace {

std::shared_ptr<spdlog::logger> make_logger() {
  auto logger = spdlog::stderr_color_st("hnd");
  logger->set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("HND_LOG")) {
    level = spdlog::level::from_str(env);
    // from_str maps unknown names to off
    if (level == spdlog::level::off && std::string(env) != "off") level = spdlog::level::info;
  }
  logger->set_level(level);
  return logger;
}

spdlog::logger& log() {
  static auto logger = make_logger();
  return *logger;
}

DissectOptions dissect_options(const RunConfig& config) {
  DissectOptions options;
  options.quantile = config.quantile;
  options.quantile_options.method =
      config.quantile_method == "reservoir" ? QuantileMethod::Reservoir : QuantileMethod::Exact;
  options.quantile_options.seed = config.seed;
  options.iou_cutoff = config.iou_cutoff;
  options.local_factor = config.local_factor;
  options.bias_thresholds = config.bias_thresholds;
  options.jobs = config.jobs;
  return options;
}

void require_inputs(const RunConfig& config) {
  if (config.manifest.empty()) throw Error(ErrorCode::InvalidArgument, "--manifest is required");
  if (config.activations.empty()) throw Error(ErrorCode::InvalidArgument, "at least one --activations is required");
  std::set<std::string> seen;
  for (const auto& [layer, _] : config.activations)
    if (!seen.insert(layer).second) throw Error(ErrorCode::InvalidArgument, "layer '" + layer + "' given twice");
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void log_warnings(const LayerDissection& layer) {
  for (const auto& w : layer.warnings) log().warn("{}: {}", layer.layer_name, w);
}

// Loads every layer and runs the full pipeline on it.
ModelReport dissect_all(const RunConfig& config, const ConceptDictionary& dict) {
  const auto options = dissect_options(config);
  ModelReport report;
  report.model_name = config.model_name;
  for (const auto& [layer, path] : config.activations) {
    log().info("dissecting layer {} ({})", layer, path.string());
    const auto set = read_activations(path);
    auto result = dissect_layer(dict, set, options);
    result.layer_name = layer;
    log_warnings(result);
    report.layers.push_back(make_layer_report(result, dict, config.model_name));
  }
  return report;
}

int cmd_dissect(const RunConfig& config) {
  require_inputs(config);
  const auto dict = load_manifest(config.manifest);
  const auto report = dissect_all(config, dict);
  std::filesystem::create_directories(config.out);
  if (config.format == "json") write_report_json(config.out / "report.json", report);
  write_report_tables(config.out, report, dict);
  if (config.iou_csv) write_iou_csv(config.out / "iou.csv", report);
  for (const auto& layer : report.layers)
    log().info("{}: coverage {:.3f} (IoU-only {:.3f}) over {} units", layer.summary.layer_name, layer.summary.coverage,
               layer.summary.baseline_coverage, layer.summary.unit_count);
  return 0;
}

int cmd_baseline(const RunConfig& config) {
  require_inputs(config);
  const auto dict = load_manifest(config.manifest);
  const auto report = dissect_all(config, dict);
  std::filesystem::create_directories(config.out);
  json doc;
  doc["model"] = report.model_name;
  doc["layers"] = json::array();
  for (const auto& layer : report.layers) {
    json units = json::array();
    for (const auto& u : layer.units)
      units.push_back({{"unit", u.unit_index},
                       {"top_concept", u.baseline.top_concept ? json(*u.baseline.top_concept) : json(nullptr)},
                       {"top_iou", u.baseline.top_iou},
                       {"hierarchical_region", u.stage2.assigned_region ? json(*u.stage2.assigned_region) : json(nullptr)}});
    doc["layers"].push_back({{"layer", layer.summary.layer_name},
                             {"baseline_coverage", layer.summary.baseline_coverage},
                             {"hierarchical_coverage", layer.summary.coverage},
                             {"baseline_concept_counts", layer.summary.baseline_concept_counts},
                             {"units", units}});
  }
  if (config.format == "json") write_text(config.out / "baseline.json", doc.dump(2) + "\n");
  write_report_tables(config.out, report, dict);
  return 0;
}

int cmd_masks(const std::filesystem::path& manifest, double confidence, bool overwrite) {
  if (manifest.empty()) throw Error(ErrorCode::InvalidArgument, "--manifest is required");
  const auto dict = load_manifest(manifest, LoadOptions{MaskPolicy::Ignore});
  std::filesystem::create_directories(dict.mask_dir());
  std::size_t written = 0, skipped = 0, missing = 0;
  for (const auto& image : dict.images()) {
    for (const auto& label : image.local_labels) {
      const auto& concept_def = dict.concept_named(label);
      const auto path = dict.mask_dir() / mask_filename(image.image_id, label);
      if (concept_def.landmark_indices.empty() || image.landmarks.empty()) {
        ++missing;
        continue;
      }
      if (std::filesystem::exists(path) && !overwrite) {
        log().warn("mask {} exists, skipping", path.string());
        ++skipped;
        continue;
      }
      std::vector<Point> points;
      for (const int idx : concept_def.landmark_indices) {
        if (idx < 0 || static_cast<std::size_t>(idx) >= image.landmarks.size())
          throw Error(ErrorCode::InvalidArgument, "concept '" + label + "' uses landmark " + std::to_string(idx) +
                                                      " but image '" + image.image_id + "' has " +
                                                      std::to_string(image.landmarks.size()));
        points.push_back(image.landmarks[static_cast<std::size_t>(idx)]);
      }
      write_pgm(path, synthesize_mask(points, ImageDims{image.width, image.height}, confidence));
      ++written;
    }
  }
  log().info("masks: {} written, {} skipped (existing), {} without landmarks", written, skipped, missing);
  return 0;
}

struct BiasArgs {
  std::string category = "ColorScheme";
  std::optional<double> threshold;
  std::string class_category;
  std::size_t top_k = 50;
};

int cmd_bias(const RunConfig& config, const BiasArgs& args) {
  require_inputs(config);
  const auto dict = load_manifest(config.manifest, LoadOptions{MaskPolicy::Ignore});
  const auto& category = dict.category(args.category);
  if (category.subgroups.size() != 2)
    log().warn("category {} has {} subgroups; bias curves are reported per subgroup", category.name,
               category.subgroups.size());
  const double threshold = args.threshold.value_or(
      config.bias_thresholds.contains(category.name) ? config.bias_thresholds.at(category.name) : category.bias_threshold);
  auto options = dissect_options(config);
  options.bias_thresholds[category.name] = threshold;

  std::map<std::string, std::string> class_labels;
  std::vector<std::string> classes;
  if (!args.class_category.empty()) {
    classes = dict.category(args.class_category).subgroups;
    for (const auto& image : dict.images())
      if (auto it = image.global_labels.find(args.class_category); it != image.global_labels.end())
        class_labels[image.image_id] = it->second;
  }

  std::filesystem::create_directories(config.out);
  std::vector<LayerProbabilities> layers;
  std::string curves = "layer,subgroup,position,probability\n";
  std::string topk = "layer,class,position,image_id,score\n";
  json doc;
  doc["category"] = category.name;
  doc["threshold"] = threshold;
  doc["layers"] = json::array();
  for (const auto& [layer, path] : config.activations) {
    const auto set = read_activations(path);
    auto result = global_only(dict, set, options, {category.name});
    result.layer_name = layer;
    log_warnings(result);
    LayerProbabilities probs{layer, {}};
    for (const auto& u : result.units)
      for (const auto& g : u.global)
        if (g.category == category.name) probs.units.push_back(g);
    json slopes;
    for (const auto& subgroup : category.subgroups) {
      const auto curve = sorted_probability_curve(probs.units, subgroup);
      for (std::size_t i = 0; i < curve.size(); ++i) curves += fmt::format("{},{},{},{}\n", layer, subgroup, i, curve[i]);
      slopes[subgroup] = max_curve_slope(curve);
    }
    json per_unit = json::array();
    for (const auto& g : probs.units)
      per_unit.push_back({{"unit", g.unit_index},
                          {"probabilities", g.probabilities},
                          {"biased_subgroup", g.biased_subgroup ? json(*g.biased_subgroup) : json(nullptr)},
                          {"inactive", g.inactive}});
    if (!classes.empty()) {
      const auto ranked = top_activated_images(result.summaries, set.image_ids(), class_labels, classes, args.top_k);
      for (const auto& [cls, images] : ranked)
        for (std::size_t i = 0; i < images.size(); ++i)
          topk += fmt::format("{},{},{},{},{}\n", layer, cls, i + 1, images[i].image_id, images[i].score);
    }
    doc["layers"].push_back({{"layer", layer}, {"max_curve_slope", slopes}, {"units", per_unit}});
    layers.push_back(std::move(probs));
  }

  std::string counts = "layer,biased_units,unit_count\n";
  const auto biased = biased_unit_counts(layers, threshold);
  for (std::size_t i = 0; i < biased.size(); ++i) {
    counts += fmt::format("{},{},{}\n", biased[i].layer_name, biased[i].biased_units, biased[i].unit_count);
    doc["layers"][i]["biased_units"] = biased[i].biased_units;
    log().info("{}: {} of {} units biased on {}", biased[i].layer_name, biased[i].biased_units, biased[i].unit_count,
               category.name);
  }
  write_text(config.out / "bias_curves.csv", curves);
  write_text(config.out / "bias_counts.csv", counts);
  if (!classes.empty()) write_text(config.out / "top_images.csv", topk);
  if (config.format == "json") write_text(config.out / "bias.json", doc.dump(2) + "\n");
  return 0;
}

int cmd_bench(RunConfig config, const std::filesystem::path& spec_path, bool seed_given) {
  if (spec_path.empty()) throw Error(ErrorCode::InvalidArgument, "--spec is required");
  auto spec = bench::spec_from_json(read_text(spec_path));
  if (seed_given) spec.seed = config.seed;
  const auto dataset = bench::generate(spec);
  const auto paths = bench::write_dataset(config.out / "data", dataset);
  log().info("bench: wrote {} images x {} units to {}", spec.image_count, spec.unit_count, paths.manifest.string());

  // Re-read through the file formats so the bench covers the real I/O path.
  config.manifest = paths.manifest;
  config.activations = {{spec.layer_name, paths.activations}};
  const auto dict = load_manifest(config.manifest);
  const auto report = dissect_all(config, dict);
  const auto report_dir = config.out / "report";
  std::filesystem::create_directories(report_dir);
  write_report_json(report_dir / "report.json", report);
  write_report_tables(report_dir, report, dict);

  const auto truth = bench::truth_from_json(read_text(paths.ground_truth));
  const auto scores = bench::score_recovery(truth, report.layers.front());
  write_text(config.out / "recovery.json", bench::recovery_to_json(scores));
  for (const auto& b : scores.buckets)
    log().info("delta {}: recall {} precision {} flagged {}/{}", b.delta,
               b.recall ? fmt::format("{:.3f}", *b.recall) : "N/A",
               b.precision ? fmt::format("{:.3f}", *b.precision) : "N/A", b.flagged_units, b.units);
  return 0;
}

void add_run_options(CLI::App& app, RunConfig& config, std::vector<std::string>& layer_args,
                     std::vector<std::string>& threshold_args) {
  app.add_option("--manifest", config.manifest, "Face-concept dictionary manifest (JSON)");
  app.add_option("--activations", layer_args, "Layer activations as <layer>=<path.hnda> (repeatable)");
  app.add_option("--quantile", config.quantile, "Top activation quantile for IoU masks")->capture_default_str();
  app.add_option("--quantile-method", config.quantile_method, "exact or reservoir")->capture_default_str();
  app.add_option("--iou-cutoff", config.iou_cutoff, "Minimum IoU for a Stage-II region")->capture_default_str();
  app.add_option("--local-factor", config.local_factor, "Stage-III threshold factor over 1/K")->capture_default_str();
  app.add_option("--bias-threshold", threshold_args, "Per-category threshold as <category>=<p> (repeatable)");
  app.add_option("--out", config.out, "Output directory")->capture_default_str();
  app.add_option("--seed", config.seed, "Seed for sampled quantiles and the bench")->capture_default_str();
  app.add_option("--jobs", config.jobs, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_option("--format", config.format, "json or csv")->capture_default_str();
  app.add_option("--model-name", config.model_name, "Model name recorded in reports")->capture_default_str();
  app.add_flag("--iou-csv", config.iou_csv, "Also write unit,concept,iou rows to iou.csv");
}

int dispatch(CLI::App& app, std::vector<std::string> args) {
  RunConfig config;
  std::vector<std::string> layer_args, threshold_args;
  add_run_options(app, config, layer_args, threshold_args);
  app.set_config("--config", "", "TOML/INI file with option defaults; flags override it");
  app.require_subcommand(1);

  auto* dissect = app.add_subcommand("dissect", "Run Stages I-III and the IoU baseline; write reports");
  auto* baseline = app.add_subcommand("baseline", "Write IoU-only pairings next to the hierarchical regions");
  auto* masks = app.add_subcommand("masks", "Synthesize concept masks from landmarks");
  double confidence = kDefaultMaskConfidence;
  bool overwrite = false;
  masks->add_option("--confidence", confidence, "Confidence level of the landmark ellipse")->capture_default_str();
  masks->add_flag("--overwrite", overwrite, "Replace existing mask files");
  auto* bias = app.add_subcommand("bias", "Per-unit probabilities, sorted curves and biased counts for one category");
  BiasArgs bias_args;
  bias->add_option("--category", bias_args.category, "Category to analyse")->capture_default_str();
  bias->add_option("--threshold", bias_args.threshold, "Bias threshold (default: category threshold)");
  bias->add_option("--class-category", bias_args.class_category, "Category whose classes get top-k image lists");
  bias->add_option("--top-k", bias_args.top_k, "Images per class in top-k lists")->capture_default_str();
  auto* bench = app.add_subcommand("bench", "Generate a planted synthetic dataset, dissect it and score recovery");
  std::filesystem::path spec_path;
  bench->add_option("--spec", spec_path, "Bench spec (JSON)");
  for (auto* sub : {dissect, baseline, masks, bias, bench}) sub->fallthrough();

  std::reverse(args.begin(), args.end());
  app.parse(args);

  for (const auto& text : layer_args) config.activations.push_back(parse_layer_binding(text));
  for (const auto& text : threshold_args) {
    const auto [name, value] = parse_layer_binding(text);
    try {
      config.bias_thresholds[name] = std::stod(value.string());
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad threshold '" + text + "'");
    }
  }
  validate(config);
  if (config.local_factor != 1.5) log().warn("--local-factor {} differs from the default 1.5", config.local_factor);

  if (*dissect) return cmd_dissect(config);
  if (*baseline) return cmd_baseline(config);
  if (*masks) return cmd_masks(config.manifest, confidence, overwrite);
  if (*bias) return cmd_bias(config, bias_args);
  if (*bench) return cmd_bench(config, spec_path, app.count("--seed") > 0);
  return 3;
}

}  // namespace

int run(std::vector<std::string> args) {
  CLI::App app{"Hierarchical dissection of face-model units", "hnd"};
  try {
    return dispatch(app, std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorCategory::Validation);
  } catch (const Error& e) {
    log().error("{}", e.what());
    return exit_code_for(e.category());
  } catch (const std::filesystem::filesystem_error& e) {
    log().error("{}", e.what());
    return exit_code_for(ErrorCategory::Io);
  } catch (const std::exception& e) {
    log().error("internal error: {}", e.what());
    return exit_code_for(ErrorCategory::Internal);
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args));
}

}  // namespace hnd::cli

#include "hnd/dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "hnd/errors.hpp"

namespace hnd {

using nlohmann::json;

double GlobalCategory::default_threshold(std::size_t subgroup_count) {
  if (subgroup_count == 0) throw Error(ErrorCode::InvalidArgument, "category without subgroups");
  return 1.0 / static_cast<double>(subgroup_count) + 0.05;
}

std::string to_string(ConceptKind kind) {
  switch (kind) {
    case ConceptKind::ActionUnit: return "ActionUnit";
    case ConceptKind::Attribute: return "Attribute";
    case ConceptKind::FacialPart: return "FacialPart";
  }
  return "Attribute";
}

ConceptKind parse_concept_kind(const std::string& text) {
  if (text == "ActionUnit") return ConceptKind::ActionUnit;
  if (text == "Attribute") return ConceptKind::Attribute;
  if (text == "FacialPart") return ConceptKind::FacialPart;
  throw Error(ErrorCode::ParseError, "unknown concept kind '" + text + "'");
}

std::string mask_filename(const std::string& image_id, const std::string& concept_name) {
  return image_id + "__" + concept_name + ".pgm";
}

namespace {

void check_mask(const BinaryRaster& raster, const ImageRecord& image, const std::string& concept_name) {
  if (raster.width() != image.width || raster.height() != image.height)
    throw Error(ErrorCode::DimensionMismatch, "mask " + mask_filename(image.image_id, concept_name) + " is " +
                                                  std::to_string(raster.width()) + "x" +
                                                  std::to_string(raster.height()) + ", image is " +
                                                  std::to_string(image.width) + "x" + std::to_string(image.height));
  if (raster.foreground_count() == 0)
    throw Error(ErrorCode::EmptyMask, "mask " + mask_filename(image.image_id, concept_name) + " has no foreground");
}

}  // namespace

ConceptDictionary::ConceptDictionary(std::vector<GlobalCategory> categories, std::vector<LocalConcept> concepts,
                                     std::vector<std::string> region_names, std::vector<ImageRecord> images,
                                     std::map<MaskKey, BinaryRaster> masks, std::filesystem::path mask_dir)
    : categories_(std::move(categories)),
      concepts_(std::move(concepts)),
      images_(std::move(images)),
      masks_(std::move(masks)),
      mask_dir_(std::move(mask_dir)) {
  for (std::size_t i = 0; i < categories_.size(); ++i) {
    const auto& cat = categories_[i];
    if (cat.subgroups.size() < 2)
      throw Error(ErrorCode::ParseError, "category '" + cat.name + "' needs at least two subgroups");
    std::set<std::string> unique(cat.subgroups.begin(), cat.subgroups.end());
    if (unique.size() != cat.subgroups.size())
      throw Error(ErrorCode::ParseError, "category '" + cat.name + "' has duplicate subgroups");
    if (!(cat.bias_threshold > 0.0 && cat.bias_threshold <= 1.0))
      throw Error(ErrorCode::ParseError, "category '" + cat.name + "' bias threshold outside (0,1]");
    if (!category_index_.emplace(cat.name, i).second)
      throw Error(ErrorCode::ParseError, "duplicate category '" + cat.name + "'");
  }

  std::map<std::string, std::size_t> region_counts;
  for (const auto& name : region_names) {
    if (!region_counts.emplace(name, 0).second) throw Error(ErrorCode::ParseError, "duplicate region '" + name + "'");
  }
  for (std::size_t i = 0; i < concepts_.size(); ++i) {
    const auto& concept_def = concepts_[i];
    auto it = region_counts.find(concept_def.region);
    if (it == region_counts.end())
      throw Error(ErrorCode::ParseError,
                  "concept '" + concept_def.name + "' references undeclared region '" + concept_def.region + "'");
    ++it->second;
    if (!concept_index_.emplace(concept_def.name, i).second)
      throw Error(ErrorCode::ParseError, "duplicate concept '" + concept_def.name + "'");
  }
  for (const auto& name : region_names) {
    const std::size_t count = region_counts.at(name);
    if (count == 0) throw Error(ErrorCode::ParseError, "region '" + name + "' has no concepts");
    regions_.push_back(Region{name, count});
  }

  for (std::size_t i = 0; i < images_.size(); ++i) {
    const auto& image = images_[i];
    if (image.width <= 0 || image.height <= 0)
      throw Error(ErrorCode::ParseError, "image '" + image.image_id + "' has nonpositive dimensions");
    if (!image_index_.emplace(image.image_id, i).second)
      throw Error(ErrorCode::ParseError, "duplicate image id '" + image.image_id + "'");
    for (const auto& [cat_name, subgroup] : image.global_labels) {
      auto it = category_index_.find(cat_name);
      if (it == category_index_.end())
        throw Error(ErrorCode::UnknownCategory,
                    "image '" + image.image_id + "' labels undeclared category '" + cat_name + "'");
      const auto& subs = categories_[it->second].subgroups;
      if (std::find(subs.begin(), subs.end(), subgroup) == subs.end())
        throw Error(ErrorCode::UnknownConcept,
                    "image '" + image.image_id + "' labels unknown subgroup '" + subgroup + "' of '" + cat_name + "'");
    }
    for (const auto& label : image.local_labels) {
      if (!concept_index_.contains(label))
        throw Error(ErrorCode::UnknownConcept, "image '" + image.image_id + "' labels unknown concept '" + label + "'");
    }
    for (const auto& p : image.landmarks) {
      if (!(p.x >= 0.0 && p.x < image.width && p.y >= 0.0 && p.y < image.height))
        throw Error(ErrorCode::DimensionMismatch, "image '" + image.image_id + "' has a landmark outside the image");
    }
  }

  for (const auto& [key, raster] : masks_) {
    const ImageRecord* image = find_image(key.first);
    if (image == nullptr || !image->local_labels.contains(key.second))
      throw Error(ErrorCode::UnknownConcept, "mask for unlabeled pair (" + key.first + ", " + key.second + ")");
    check_mask(raster, *image, key.second);
  }
}

const GlobalCategory& ConceptDictionary::category(const std::string& name) const {
  auto it = category_index_.find(name);
  if (it == category_index_.end()) throw Error(ErrorCode::UnknownCategory, "unknown category '" + name + "'");
  return categories_[it->second];
}

const LocalConcept& ConceptDictionary::concept_named(const std::string& name) const {
  auto it = concept_index_.find(name);
  if (it == concept_index_.end()) throw Error(ErrorCode::UnknownConcept, "unknown concept '" + name + "'");
  return concepts_[it->second];
}

const ImageRecord* ConceptDictionary::find_image(const std::string& image_id) const {
  auto it = image_index_.find(image_id);
  return it == image_index_.end() ? nullptr : &images_[it->second];
}

std::size_t ConceptDictionary::region_size(const std::string& region) const {
  for (const auto& r : regions_)
    if (r.name == region) return r.concept_count;
  throw Error(ErrorCode::UnknownConcept, "unknown region '" + region + "'");
}

std::vector<std::string> ConceptDictionary::concepts_in_region(const std::string& region) const {
  std::vector<std::string> names;
  for (const auto& c : concepts_)
    if (c.region == region) names.push_back(c.name);
  std::sort(names.begin(), names.end());
  return names;
}

const BinaryRaster* ConceptDictionary::loaded_mask(const std::string& image_id,
                                                   const std::string& concept_name) const {
  auto it = masks_.find(MaskKey{image_id, concept_name});
  return it == masks_.end() ? nullptr : &it->second;
}

BinaryRaster ConceptDictionary::mask(const std::string& image_id, const std::string& concept_name) const {
  if (const BinaryRaster* loaded = loaded_mask(image_id, concept_name)) return *loaded;
  const ImageRecord* image = find_image(image_id);
  if (image == nullptr) throw Error(ErrorCode::UnknownImage, "unknown image '" + image_id + "'");
  if (!image->local_labels.contains(concept_name))
    throw Error(ErrorCode::UnknownConcept, "image '" + image_id + "' is not labeled '" + concept_name + "'");
  const auto path = mask_dir_ / mask_filename(image_id, concept_name);
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingMask, "missing mask " + path.string());
  BinaryRaster raster = read_pgm(path);
  check_mask(raster, *image, concept_name);
  return raster;
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

template <typename T>
T field(const json& node, const char* key, const std::string& where) {
  if (!node.contains(key)) throw Error(ErrorCode::ParseError, where + ": missing key '" + key + "'");
  try {
    return node.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, where + ": bad value for '" + key + "': " + e.what());
  }
}

std::vector<Point> parse_points(const json& node, const std::string& where) {
  std::vector<Point> points;
  if (!node.is_array()) throw Error(ErrorCode::ParseError, where + ": landmarks must be an array");
  for (const auto& p : node) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
      throw Error(ErrorCode::ParseError, where + ": landmark must be [x, y]");
    points.push_back(Point{p[0].get<double>(), p[1].get<double>()});
  }
  return points;
}

}  // namespace

std::map<std::string, std::vector<Point>> read_landmarks_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open landmarks file " + path.string());
  std::map<std::string, std::vector<Point>> result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3 || cells.size() % 2 == 0)
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": expected id,x0,y0,...");
    std::vector<Point> points;
    try {
      for (std::size_t i = 1; i + 1 < cells.size(); i += 2) points.push_back(Point{std::stod(cells[i]), std::stod(cells[i + 1])});
    } catch (const std::exception&) {
      // header rows are allowed only on the first line
      if (line_no == 1) continue;
      throw Error(ErrorCode::ParseError, path.string() + ":" + std::to_string(line_no) + ": bad coordinate");
    }
    result[cells[0]] = std::move(points);
  }
  return result;
}

ConceptDictionary load_manifest(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::ParseError, path.string() + ": manifest must be an object");
  const auto base = path.parent_path();
  const std::string where = path.filename().string();

  std::vector<GlobalCategory> categories;
  for (const auto& node : doc.value("categories", json::array())) {
    GlobalCategory cat;
    cat.name = field<std::string>(node, "name", where);
    cat.subgroups = field<std::vector<std::string>>(node, "subgroups", where + " category " + cat.name);
    cat.bias_threshold = node.contains("bias_threshold")
                             ? field<double>(node, "bias_threshold", where)
                             : (cat.subgroups.empty() ? 1.0 : GlobalCategory::default_threshold(cat.subgroups.size()));
    categories.push_back(std::move(cat));
  }

  std::vector<LocalConcept> concepts;
  for (const auto& node : doc.value("concepts", json::array())) {
    LocalConcept c;
    c.name = field<std::string>(node, "name", where);
    c.kind = parse_concept_kind(field<std::string>(node, "kind", where + " concept " + c.name));
    c.region = field<std::string>(node, "region", where + " concept " + c.name);
    if (node.contains("landmarks")) c.landmark_indices = field<std::vector<int>>(node, "landmarks", where);
    concepts.push_back(std::move(c));
  }

  const auto regions = doc.contains("regions") ? field<std::vector<std::string>>(doc, "regions", where)
                                               : std::vector<std::string>{};

  std::map<std::string, std::vector<Point>> sidecar;
  if (doc.contains("landmarks_file")) sidecar = read_landmarks_csv(base / field<std::string>(doc, "landmarks_file", where));

  std::vector<ImageRecord> images;
  for (const auto& node : doc.value("images", json::array())) {
    ImageRecord rec;
    rec.image_id = field<std::string>(node, "id", where);
    const std::string at = where + " image " + rec.image_id;
    rec.source_path = node.value("path", std::string{});
    rec.width = field<int>(node, "width", at);
    rec.height = field<int>(node, "height", at);
    if (node.contains("global")) rec.global_labels = field<std::map<std::string, std::string>>(node, "global", at);
    if (node.contains("local")) {
      const auto labels = field<std::vector<std::string>>(node, "local", at);
      rec.local_labels = std::set<std::string>(labels.begin(), labels.end());
    }
    if (node.contains("landmarks")) {
      rec.landmarks = parse_points(node.at("landmarks"), at);
    } else if (auto it = sidecar.find(rec.image_id); it != sidecar.end()) {
      rec.landmarks = it->second;
    }
    images.push_back(std::move(rec));
  }

  const auto mask_dir = base / doc.value("mask_dir", std::string{"masks"});
  std::map<ConceptDictionary::MaskKey, BinaryRaster> masks;
  if (options.masks != MaskPolicy::Ignore) {
    for (const auto& image : images) {
      for (const auto& label : image.local_labels) {
        const auto mask_path = mask_dir / mask_filename(image.image_id, label);
        if (!std::filesystem::exists(mask_path))
          throw Error(ErrorCode::MissingMask,
                      "image '" + image.image_id + "' is labeled '" + label + "' but " + mask_path.string() + " is missing");
        if (options.masks == MaskPolicy::Load) {
          masks.emplace(ConceptDictionary::MaskKey{image.image_id, label}, read_pgm(mask_path));
        } else {
          const auto header = read_pgm_header(mask_path);
          if (header.width != image.width || header.height != image.height)
            throw Error(ErrorCode::DimensionMismatch, "mask " + mask_path.string() + " does not match image size");
        }
      }
    }
  }

  return ConceptDictionary(std::move(categories), std::move(concepts), regions, std::move(images), std::move(masks),
                           mask_dir);
}

void save_manifest(const ConceptDictionary& dict, const std::filesystem::path& path) {
  json doc;
  doc["categories"] = json::array();
  for (const auto& cat : dict.categories())
    doc["categories"].push_back({{"name", cat.name}, {"subgroups", cat.subgroups}, {"bias_threshold", cat.bias_threshold}});
  doc["concepts"] = json::array();
  for (const auto& c : dict.concepts()) {
    json node{{"name", c.name}, {"kind", to_string(c.kind)}, {"region", c.region}};
    if (!c.landmark_indices.empty()) node["landmarks"] = c.landmark_indices;
    doc["concepts"].push_back(std::move(node));
  }
  doc["regions"] = json::array();
  for (const auto& r : dict.regions()) doc["regions"].push_back(r.name);
  doc["mask_dir"] = "masks";
  doc["images"] = json::array();
  for (const auto& image : dict.images()) {
    json node{{"id", image.image_id}, {"path", image.source_path}, {"width", image.width}, {"height", image.height}};
    node["global"] = image.global_labels;
    node["local"] = image.local_labels;
    if (!image.landmarks.empty()) {
      json points = json::array();
      for (const auto& p : image.landmarks) points.push_back({p.x, p.y});
      node["landmarks"] = std::move(points);
    }
    doc["images"].push_back(std::move(node));
  }
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Io, "cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

void save_masks(const ConceptDictionary& dict, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [key, raster] : dict.masks()) write_pgm(dir / mask_filename(key.first, key.second), raster);
}

// ---------------------------------------------------------------------------
// Mask synthesis

double chi_square2_quantile(double confidence) {
  if (!(confidence > 0.0 && confidence < 1.0))
    throw Error(ErrorCode::InvalidArgument, "confidence must lie in (0,1)");
  // The chi-square CDF with two degrees of freedom is 1 - exp(-x/2).
  return -2.0 * std::log1p(-confidence);
}

double landmark_regularizer(ImageDims dims) {
  const double side = 0.01 * std::min(dims.width, dims.height);
  return side * side;
}

BinaryRaster synthesize_mask(std::span<const Point> landmarks, ImageDims dims, double confidence) {
  if (dims.width <= 0 || dims.height <= 0) throw Error(ErrorCode::InvalidArgument, "mask dimensions must be positive");
  const double q = chi_square2_quantile(confidence);

  // Coincident landmarks still yield the isotropic disk from the regularizer.
  if (landmarks.size() < 2) throw Error(ErrorCode::DegenerateLandmarks, "need at least two landmarks");

  const double n = static_cast<double>(landmarks.size());
  double mx = 0.0, my = 0.0;
  for (const auto& p : landmarks) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (const auto& p : landmarks) {
    sxx += (p.x - mx) * (p.x - mx);
    syy += (p.y - my) * (p.y - my);
    sxy += (p.x - mx) * (p.y - my);
  }
  const double eps = landmark_regularizer(dims);
  sxx = sxx / (n - 1.0) + eps;
  syy = syy / (n - 1.0) + eps;
  sxy = sxy / (n - 1.0);
  const double det = sxx * syy - sxy * sxy;
  if (!(det > 0.0)) throw Error(ErrorCode::DegenerateLandmarks, "singular landmark covariance");
  // inverse covariance
  const double ixx = syy / det, iyy = sxx / det, ixy = -sxy / det;

  // Bounding box of the ellipse: half-extent along x is sqrt(q * sxx).
  const double hx = std::sqrt(q * sxx), hy = std::sqrt(q * syy);
  const int x0 = std::max(0, static_cast<int>(std::floor(mx - hx - 1.0)));
  const int x1 = std::min(dims.width - 1, static_cast<int>(std::ceil(mx + hx + 1.0)));
  const int y0 = std::max(0, static_cast<int>(std::floor(my - hy - 1.0)));
  const int y1 = std::min(dims.height - 1, static_cast<int>(std::ceil(my + hy + 1.0)));

  BinaryRaster raster(dims.width, dims.height);
  for (int y = y0; y <= y1; ++y) {
    const double dy = y + 0.5 - my;
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - mx;
      const double d2 = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy;
      if (d2 <= q) raster.set(x, y);
    }
  }
  return raster;
}

std::vector<LabeledImage> images_for_category(const ConceptDictionary& dict, const std::string& category) {
  dict.category(category);  // throws UnknownCategory
  std::vector<LabeledImage> selection;
  for (const auto& image : dict.images()) {
    auto it = image.global_labels.find(category);
    if (it != image.global_labels.end()) selection.push_back(LabeledImage{&image, it->second});
  }
  std::sort(selection.begin(), selection.end(),
            [](const LabeledImage& a, const LabeledImage& b) { return a.record->image_id < b.record->image_id; });
  return selection;
}

}  // namespace hnd

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hnd/raster.hpp"

namespace hnd {

// A global concept category such as Gender or Age. Subgroups are mutually
// exclusive; a unit is biased toward a subgroup whose probability exceeds
// `bias_threshold`.
struct GlobalCategory {
  std::string name;
  std::vector<std::string> subgroups;
  double bias_threshold = 0.0;

  // Mean subgroup probability plus 0.05: 0.30 for four subgroups, 0.55 for two.
  static double default_threshold(std::size_t subgroup_count);

  friend bool operator==(const GlobalCategory&, const GlobalCategory&) = default;
};

enum class ConceptKind { ActionUnit, Attribute, FacialPart };

std::string to_string(ConceptKind kind);
ConceptKind parse_concept_kind(const std::string& text);

struct LocalConcept {
  std::string name;
  ConceptKind kind = ConceptKind::Attribute;
  std::string region;
  // Landmark indices whose confidence ellipse outlines this concept.
  std::vector<int> landmark_indices;

  friend bool operator==(const LocalConcept&, const LocalConcept&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

struct ImageRecord {
  std::string image_id;
  std::string source_path;
  std::map<std::string, std::string> global_labels;  // category -> subgroup
  std::set<std::string> local_labels;
  std::vector<Point> landmarks;
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

struct Region {
  std::string name;
  std::size_t concept_count = 0;
  friend bool operator==(const Region&, const Region&) = default;
};

// How load_manifest treats the mask files referenced by local labels.
enum class MaskPolicy {
  Load,         // read and validate every mask now
  CheckExists,  // verify presence and header dimensions; read on demand
  Ignore,       // no mask checks (used while synthesizing masks)
};

struct LoadOptions {
  MaskPolicy masks = MaskPolicy::Load;
};

class ConceptDictionary {
 public:
  using MaskKey = std::pair<std::string, std::string>;  // (image_id, concept)

  ConceptDictionary() = default;

  // Validates every cross-reference; masks may be empty when the policy is
  // not Load. Throws hnd::Error on the first violation.
  ConceptDictionary(std::vector<GlobalCategory> categories, std::vector<LocalConcept> concepts,
                    std::vector<std::string> region_names, std::vector<ImageRecord> images,
                    std::map<MaskKey, BinaryRaster> masks, std::filesystem::path mask_dir = {});

  const std::vector<GlobalCategory>& categories() const noexcept { return categories_; }
  const std::vector<LocalConcept>& concepts() const noexcept { return concepts_; }
  const std::vector<Region>& regions() const noexcept { return regions_; }
  const std::vector<ImageRecord>& images() const noexcept { return images_; }
  const std::map<MaskKey, BinaryRaster>& masks() const noexcept { return masks_; }
  const std::filesystem::path& mask_dir() const noexcept { return mask_dir_; }

  const GlobalCategory& category(const std::string& name) const;
  const LocalConcept& concept_named(const std::string& name) const;
  const ImageRecord* find_image(const std::string& image_id) const;
  std::size_t region_size(const std::string& region) const;
  std::vector<std::string> concepts_in_region(const std::string& region) const;

  // Returns the loaded mask, or reads it from mask_dir when the dictionary
  // was loaded without masks. Reads never mutate the dictionary.
  BinaryRaster mask(const std::string& image_id, const std::string& concept_name) const;
  const BinaryRaster* loaded_mask(const std::string& image_id, const std::string& concept_name) const;

  friend bool operator==(const ConceptDictionary& a, const ConceptDictionary& b) {
    return a.categories_ == b.categories_ && a.concepts_ == b.concepts_ && a.regions_ == b.regions_ &&
           a.images_ == b.images_ && a.masks_ == b.masks_;
  }

 private:
  std::vector<GlobalCategory> categories_;
  std::vector<LocalConcept> concepts_;
  std::vector<Region> regions_;
  std::vector<ImageRecord> images_;
  std::map<MaskKey, BinaryRaster> masks_;
  std::filesystem::path mask_dir_;
  std::map<std::string, std::size_t> category_index_;
  std::map<std::string, std::size_t> concept_index_;
  std::map<std::string, std::size_t> image_index_;
};

std::string mask_filename(const std::string& image_id, const std::string& concept_name);

// Manifest I/O. Mask and landmark paths resolve against the manifest directory.
ConceptDictionary load_manifest(const std::filesystem::path& path, const LoadOptions& options = {});
void save_manifest(const ConceptDictionary& dict, const std::filesystem::path& path);

// Writes every loaded mask as PGM under `dir`.
void save_masks(const ConceptDictionary& dict, const std::filesystem::path& dir);

// Landmark sidecar: `image_id,x0,y0,x1,y1,...` per line.
std::map<std::string, std::vector<Point>> read_landmarks_csv(const std::filesystem::path& path);

struct ImageDims {
  int width = 0;
  int height = 0;
};

inline constexpr double kDefaultMaskConfidence = 0.95;

// Quantile of the chi-square distribution with two degrees of freedom.
double chi_square2_quantile(double confidence);

// Covariance regularizer (0.01 * min(w, h))^2 added on the diagonal.
double landmark_regularizer(ImageDims dims);

// Rasterizes the Gaussian confidence ellipse fitted to `landmarks`: pixel
// (x, y) is foreground iff its center (x+0.5, y+0.5) has Mahalanobis
// distance^2 <= chi2_2(confidence) under the landmark mean and regularized
// sample covariance.
BinaryRaster synthesize_mask(std::span<const Point> landmarks, ImageDims dims,
                             double confidence = kDefaultMaskConfidence);

struct LabeledImage {
  const ImageRecord* record = nullptr;
  std::string subgroup;
};

// Images carrying a label for `category`, ordered by image_id.
std::vector<LabeledImage> images_for_category(const ConceptDictionary& dict, const std::string& category);

}  // namespace hnd

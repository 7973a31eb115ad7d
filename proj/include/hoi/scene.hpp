// Synthetic HOI scenes: generation, rendering, annotation files and hard-case tags.
#pragma once

#include "hoi/annotation.hpp"
#include "hoi/mask_geometry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace hoi {

inline constexpr int kSchemaVersion = 1;

// Verb v is driven by contact between its designated part and the object.
inline constexpr std::array<Part, 4> kVerbParts = {Part::hands, Part::feet, Part::hip, Part::head};

struct SceneProfile {
  int image_size = 128;
  int grid_size = 8;
  int min_persons = 1;
  int max_persons = 4;
  double crowded_rate = 0.4;  // probability that a scene gets ≥3 interactive pairs
  double tiny_rate = 0.15;    // per-person probability of a half-scale person
  // Largest allowed horizontal overlap between two persons, as a fraction of width.
  double person_overlap = 0.5;
  // Probability that a non-interactive object is placed against a non-contact part.
  double decoy_rate = 0.5;
  int num_object_classes = 3;
  int num_verbs = 4;
  // Contact rule: intersection / min(area) of part and object boxes.
  double contact_threshold = 0.4;

  GridSpec grid() const;
  void validate() const;
};

struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;  // row-major, 3 floats per pixel in [0,1]

  float at(int row, int col, int channel) const {
    return rgb[(static_cast<std::size_t>(row) * width + col) * 3 + channel];
  }
  friend bool operator==(const Image&, const Image&) = default;
};

struct Scene {
  SceneAnnotation annotation;
  Image image;
};

// Per-scene seed derived from a root seed and index (splitmix64).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index);

Scene generate_scene(std::uint64_t seed, const SceneProfile& profile, int id = 0);
std::vector<Scene> generate_dataset(std::uint64_t root_seed, int count, const SceneProfile& profile,
                                    int first_id = 0);

// Draws persons (one colored block per part) in order, then objects. Colors
// and background texture depend only on the annotation.
Image render_scene(const SceneAnnotation& annotation);

// 1 minus the fraction of the person's box covered by later-drawn persons and objects.
double occlusion_confidence(const SceneAnnotation& scene, std::size_t person);

// Contact ratio between a box pair: intersection / min(area).
double contact_ratio(const Box& a, const Box& b);
// Verbs implied by the contact rule for a person/object pair.
std::vector<int> derive_verbs(const Person& person, const ObjectInstance& object,
                              const SceneProfile& profile);
std::array<bool, kNumParts> derive_part_labels(const Person& person, const ObjectInstance& object,
                                               const SceneProfile& profile);

enum class OcclusionBand { low, mid, high };
std::string_view occlusion_name(OcclusionBand band);

struct SceneTags {
  bool crowded = false;
  bool tiny = false;
  OcclusionBand occluded = OcclusionBand::low;
  int person_count = 0;
  int interactive_pair_count = 0;
  double min_person_area_ratio = 1.0;  // over interactive pairs
  double mean_joint_confidence = 1.0;
};

SceneTags tag_hard_cases(const SceneAnnotation& scene);

// Annotation files (schema 1).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json annotations_to_json(const std::vector<SceneAnnotation>& scenes);
std::vector<SceneAnnotation> annotations_from_json(const nlohmann::json& doc);
std::string canonical_dump(const std::vector<SceneAnnotation>& scenes);
void save_annotations(const std::vector<SceneAnnotation>& scenes, const std::filesystem::path& path);
std::vector<SceneAnnotation> load_annotations(const std::filesystem::path& path);

}  // namespace hoi

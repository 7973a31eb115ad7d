// End-to-end HOI model: feature extractor, box detector, interactiveness
// classifier and verb classifier sharing one parameter store.
#pragma once

#include "hoi/attention.hpp"
#include "hoi/interactiveness.hpp"
#include "hoi/params.hpp"
#include "hoi/scene.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace hoi {

struct ModelConfig {
  int image_size = 128;
  int grid_size = 8;
  int stem_cells = 4;  // average-pooled cells per token side fed to the stem
  int dim = 64;
  int heads = 4;
  int ffn_hidden = 256;
  int num_queries = 8;
  int num_object_classes = 3;
  int num_verbs = 4;
  int encoder_depth = 1;
  int detector_depth = 2;
  int verb_depth = 2;
  int importance_depth = 1;
  InteractivenessScheme scheme = InteractivenessScheme::merged;
  MaskSchedule schedule = MaskSchedule::progressive;
  double select_fraction = 0.25;

  GridSpec grid() const;
  DecoderConfig decoder(int depth) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

std::string_view scheme_name(InteractivenessScheme scheme);
InteractivenessScheme scheme_from_name(std::string_view name);
std::string_view schedule_name(MaskSchedule schedule);
MaskSchedule schedule_from_name(std::string_view name);

// Reference points of the detector queries: a two-row lattice over the image,
// one (row, column) pair in [0,1] per query.
Matrix query_reference_points(int queries);

// Average RGB of a cells×cells subdivision of every token's pixel patch,
// centred at zero: tokens × (3·cells²).
Matrix stem_features(const Image& image, const GridSpec& spec, int cells);

struct DetectorOutput {
  Var embeddings;    // D, N_q × D_c
  Var human_boxes;   // N_q × 4 normalized [w1, h1, w2, h2]
  Var object_boxes;  // N_q × 4
  Var class_logits;  // N_q × (N_obj + 1), column 0 = no object
  Var class_probs;
  // Predictions from the earlier decoder layers, same heads, when requested.
  std::vector<DetectorOutput> auxiliary;

  std::vector<Box> human_box_values() const;
  std::vector<Box> object_box_values() const;
};

class HoiModel {
 public:
  HoiModel(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  GridSpec grid() const { return config_.grid(); }

  // Stem output before positional information is added.
  Var stem_embed(const Matrix& stem) const;
  FeatureGrid encode(const Matrix& stem) const;
  // Wraps precomputed tokens × D_c features as the grid z, unchanged.
  FeatureGrid inject(const Matrix& features) const;

  DetectorOutput detect(const FeatureGrid& grid, bool auxiliary = false) const;
  Var verb_logits(const FeatureGrid& grid, const Var& decoded) const;
  Var verb_scores(const FeatureGrid& grid, const Var& decoded) const { return ad::sigmoid(verb_logits(grid, decoded)); }

  // Per-proposal layer masks from the detector's (detached) boxes.
  std::vector<LayeredMasks> proposal_masks(const DetectorOutput& det, const PartMasks& part_masks) const;
  InteractivenessOutput interactiveness(const FeatureGrid& grid, const DetectorOutput& det,
                                        const PartMasks& part_masks, bool fallback = true,
                                        AttentionTrace* trace = nullptr) const;
  const InteractivenessHead& interactiveness_head() const { return int_head_; }

 private:
  DetectorOutput detector_heads(const Var& embeddings) const;

  ModelConfig config_;
  ParamStore store_;
  Matrix pos_;
  Mlp stem_;
  std::vector<EncoderLayer> encoder_;
  LayerNorm encoder_norm_;
  Var queries_;
  // Fixed reference point per query (normalized row, column) and its encoding.
  Matrix reference_, query_pos_;
  // Per-query raw offsets added to the box heads, initialised at the reference point.
  Var human_anchor_, object_anchor_;
  Decoder detector_;
  PredictionHead human_head_, object_head_, class_head_;
  InteractivenessHead int_head_;
  Decoder verb_decoder_;
  PredictionHead verb_head_;
};

}  // namespace hoi

// Interactiveness classifier: body-part importance filtering, query/mask
// merging and a progressively masked decoder (one-time passing), plus the
// six-pass per-part scheme it replaces.
#pragma once

#include "hoi/attention.hpp"
#include "hoi/mask_geometry.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace hoi {

using PartFlags = std::array<bool, kNumParts>;

enum class InteractivenessScheme { merged, intuitive };

struct InteractivenessConfig {
  DecoderConfig decoder{3, 4, 64, 256, 0.0};  // f_dec2; three layers, one mask each
  int importance_depth = 1;                   // unmasked layers producing part scores
  double select_fraction = 0.25;
  InteractivenessScheme scheme = InteractivenessScheme::merged;
  MaskSchedule schedule = MaskSchedule::progressive;
};

// Picks round(fraction · rows · 6) highest scores pooled over all proposals
// (ties: smaller (i, k) first), then adds each unselected proposal's argmax part.
std::vector<PartFlags> select_topk_parts(const Matrix& scores, double fraction = 0.25);
int selection_count(const std::vector<PartFlags>& selection);

// d_mer = d + Σ_k n^{ik} · p^{ik} · d_part^{ik}.
// part_queries[k] is N_q × D_c; part_scores is N_q × 6.
Var merge_queries(const Var& decoded, const std::array<Var, kNumParts>& part_queries, const Var& part_scores,
                  const std::vector<PartFlags>& selection);

struct InteractivenessOutput {
  Var interactiveness;        // N_q × 1, p_int
  Var interactiveness_logit;  // N_q × 1 (merged scheme) or per-part logits max (intuitive)
  Var part_scores;            // N_q × 6, p_part (merged scheme)
  Var part_logits;            // N_q × 6
  Var part_interactiveness;   // N_q × 6, p_int^{ik} (intuitive scheme)
  Var merged_embeddings;      // N_q × D_c, e_mer (merged scheme)
  std::vector<PartFlags> selection;
  std::vector<MergedMasks> merged_masks;
  AttentionStats stats;
};

// Masks each proposal sees in each interactiveness layer, per part.
std::vector<LayeredMasks> proposal_layer_masks(MaskSchedule schedule, const PartMasks& part_masks,
                                               const std::vector<Box>& human_boxes_normalized,
                                               const std::vector<Box>& object_boxes_normalized,
                                               const GridSpec& spec);

class InteractivenessHead {
 public:
  InteractivenessHead() = default;
  InteractivenessHead(ParamStore& store, const std::string& prefix, const InteractivenessConfig& config);

  const InteractivenessConfig& config() const { return config_; }

  // d_part = h(z, d, pos); returns sigmoid part scores (N_q × 6) and writes
  // the raw logits and d_part when requested.
  Var part_importance_scores(const FeatureGrid& grid, const Var& decoded, Var* logits = nullptr,
                             Var* part_embedding = nullptr, AttentionStats* stats = nullptr) const;

  // Filter-merge forward over the progressive masks of each proposal.
  // `forced_selection` overrides the top-k policy (tests, visualisation).
  InteractivenessOutput forward(const FeatureGrid& grid, const Var& decoded, const std::vector<LayeredMasks>& masks,
                                bool fallback = true, AttentionTrace* trace = nullptr,
                                const std::optional<std::vector<PartFlags>>& forced_selection = std::nullopt) const;

  // Six masked passes plus one unmasked pass; p_int = max_k p_int^{ik}.
  InteractivenessOutput intuitive_forward(const FeatureGrid& grid, const Var& decoded,
                                          const std::vector<LayeredMasks>& masks, bool fallback = true,
                                          AttentionTrace* trace = nullptr) const;
  InteractivenessOutput intuitive_forward(const FeatureGrid& grid, const Var& decoded, const PartMasks& part_masks,
                                          bool fallback = true) const;

  // Dispatches on config().scheme.
  InteractivenessOutput run(const FeatureGrid& grid, const Var& decoded, const std::vector<LayeredMasks>& masks,
                            bool fallback = true, AttentionTrace* trace = nullptr) const;

  const Decoder& decoder() const { return decoder_; }

 private:
  InteractivenessConfig config_;
  Decoder importance_;
  PredictionHead part_score_head_;
  std::array<Mlp, kNumParts> part_query_ffn_;
  Decoder decoder_;
  PredictionHead merged_head_;     // FFN on e_mer
  PredictionHead intuitive_head_;  // f_int on concat(e^{ik}, e^{i0})
};

enum class ExecutionMode { intuitive, merged };

// Σ over executed cross-attention calls of active tokens per query row
// (all-zero rows count as full rows, matching the fallback).
long long count_attention_token_ops(ExecutionMode mode, const std::vector<LayeredMasks>& masks,
                                    const std::vector<PartFlags>& selection, int tokens, int importance_depth,
                                    int interact_depth);

}  // namespace hoi

#include "hoi/interactiveness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace hoi {

std::vector<PartFlags> select_topk_parts(const Matrix& scores, double fraction) {
  if (scores.cols() != static_cast<Eigen::Index>(kNumParts)) {
    throw std::invalid_argument("select_topk_parts: expected N_q x 6 scores");
  }
  if (!scores.allFinite()) throw std::invalid_argument("select_topk_parts: non-finite score");
  const auto rows = scores.rows();
  std::vector<PartFlags> selected(static_cast<std::size_t>(rows), PartFlags{});
  const auto total = rows * static_cast<Eigen::Index>(kNumParts);
  const auto quota = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(total)));

  std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto score_of = [&](Eigen::Index flat) { return scores(flat / 6, flat % 6); };
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return score_of(a) > score_of(b); });
  for (Eigen::Index n = 0; n < std::min(quota, total); ++n) {
    const auto flat = order[static_cast<std::size_t>(n)];
    selected[static_cast<std::size_t>(flat / 6)][static_cast<std::size_t>(flat % 6)] = true;
  }
  for (Eigen::Index i = 0; i < rows; ++i) {
    auto& row = selected[static_cast<std::size_t>(i)];
    if (std::any_of(row.begin(), row.end(), [](bool b) { return b; })) continue;
    Eigen::Index best = 0;
    scores.row(i).maxCoeff(&best);  // first maximum on ties
    row[static_cast<std::size_t>(best)] = true;
  }
  return selected;
}

int selection_count(const std::vector<PartFlags>& selection) {
  int n = 0;
  for (const auto& row : selection) n += static_cast<int>(std::count(row.begin(), row.end(), true));
  return n;
}

Var merge_queries(const Var& decoded, const std::array<Var, kNumParts>& part_queries, const Var& part_scores,
                  const std::vector<PartFlags>& selection) {
  const auto rows = decoded.rows();
  if (static_cast<Eigen::Index>(selection.size()) != rows || part_scores.rows() != rows ||
      part_scores.cols() != static_cast<Eigen::Index>(kNumParts)) {
    throw std::invalid_argument("merge_queries: selection/score shape mismatch");
  }
  Var merged = decoded;
  for (std::size_t k = 0; k < kNumParts; ++k) {
    Matrix indicator(rows, 1);
    bool any = false;
    for (Eigen::Index i = 0; i < rows; ++i) {
      indicator(i, 0) = selection[static_cast<std::size_t>(i)][k] ? 1.0 : 0.0;
      any = any || selection[static_cast<std::size_t>(i)][k];
    }
    if (!any) continue;
    const Var weight = ad::mul(ad::slice_cols(part_scores, static_cast<Eigen::Index>(k), 1), Var::constant(indicator));
    merged = ad::add(merged, ad::mul_col(part_queries[k], weight));
  }
  return merged;
}

std::vector<LayeredMasks> proposal_layer_masks(MaskSchedule schedule, const PartMasks& part_masks,
                                               const std::vector<Box>& human_boxes_normalized,
                                               const std::vector<Box>& object_boxes_normalized,
                                               const GridSpec& spec) {
  if (human_boxes_normalized.size() != object_boxes_normalized.size()) {
    throw std::invalid_argument("proposal_layer_masks: one human and one object box per proposal");
  }
  std::vector<LayeredMasks> out;
  out.reserve(human_boxes_normalized.size());
  for (std::size_t i = 0; i < human_boxes_normalized.size(); ++i) {
    const auto [human, object] = build_instance_masks(human_boxes_normalized[i], object_boxes_normalized[i], spec);
    out.push_back(schedule_masks(schedule, part_masks, human, object));
  }
  return out;
}

InteractivenessHead::InteractivenessHead(ParamStore& store, const std::string& prefix,
                                         const InteractivenessConfig& config)
    : config_(config) {
  const int dim = config.decoder.dim;
  DecoderConfig importance_cfg = config.decoder;
  importance_cfg.depth = config.importance_depth;
  importance_ = Decoder(store, prefix + ".importance", importance_cfg);
  part_score_head_ = PredictionHead(store, prefix + ".part_score", HeadKind::part_score, dim,
                                    static_cast<int>(kNumParts), 1);
  for (std::size_t k = 0; k < kNumParts; ++k) {
    part_query_ffn_[k] = Mlp(store, prefix + ".part_query." + std::string(part_name(static_cast<Part>(k))),
                             {dim, dim, dim});
  }
  decoder_ = Decoder(store, prefix + ".dec", config.decoder);
  merged_head_ = PredictionHead(store, prefix + ".merged_ffn", HeadKind::interactiveness, dim, 1, 1);
  intuitive_head_ = PredictionHead(store, prefix + ".part_int_ffn", HeadKind::interactiveness, 2 * dim, 1, 1);
}

Var InteractivenessHead::part_importance_scores(const FeatureGrid& grid, const Var& decoded, Var* logits,
                                                Var* part_embedding, AttentionStats* stats) const {
  const Var d_part = importance_.forward(decoded, grid, {}, Matrix(), stats, nullptr, "importance");
  const Var raw = part_score_head_.logits(d_part);
  if (logits != nullptr) *logits = raw;
  if (part_embedding != nullptr) *part_embedding = d_part;
  return ad::sigmoid(raw);
}

namespace {

std::vector<Matrix> merged_mask_matrices(const std::vector<MergedMasks>& merged) {
  std::vector<Matrix> out;
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<TokenMask> rows;
    rows.reserve(merged.size());
    for (const auto& m : merged) rows.push_back(m[j]);
    out.push_back(mask_matrix(rows));
  }
  return out;
}

}  // namespace

InteractivenessOutput InteractivenessHead::forward(const FeatureGrid& grid, const Var& decoded,
                                                   const std::vector<LayeredMasks>& masks, bool fallback,
                                                   AttentionTrace* trace,
                                                   const std::optional<std::vector<PartFlags>>& forced_selection) const {
  const auto nq = decoded.rows();
  if (static_cast<Eigen::Index>(masks.size()) != nq) {
    throw std::invalid_argument("interactiveness: need one mask set per proposal");
  }
  if (config_.decoder.depth != 3) throw std::invalid_argument("interactiveness: decoder depth must be 3");
  InteractivenessOutput out;
  out.stats.fallback_enabled = fallback;
  if (nq == 0) {
    out.interactiveness = Var::constant(Matrix(0, 1));
    return out;
  }

  Var d_part;
  out.part_scores = part_importance_scores(grid, decoded, &out.part_logits, &d_part, &out.stats);
  out.selection = forced_selection ? *forced_selection : select_topk_parts(out.part_scores.value(), config_.select_fraction);
  if (static_cast<Eigen::Index>(out.selection.size()) != nq) {
    throw std::invalid_argument("interactiveness: selection size mismatch");
  }

  std::array<Var, kNumParts> part_queries;
  for (std::size_t k = 0; k < kNumParts; ++k) part_queries[k] = part_query_ffn_[k](d_part);
  const Var merged = merge_queries(decoded, part_queries, out.part_scores, out.selection);

  out.merged_masks.reserve(masks.size());
  for (std::size_t i = 0; i < masks.size(); ++i) out.merged_masks.push_back(merge_masks(masks[i], out.selection[i]));

  out.merged_embeddings = decoder_.forward(merged, grid, merged_mask_matrices(out.merged_masks), Matrix(), &out.stats,
                                           trace, "interactiveness");
  out.interactiveness_logit = merged_head_.logits(out.merged_embeddings);
  out.interactiveness = ad::sigmoid(out.interactiveness_logit);
  return out;
}

InteractivenessOutput InteractivenessHead::intuitive_forward(const FeatureGrid& grid, const Var& decoded,
                                                             const std::vector<LayeredMasks>& masks, bool fallback,
                                                             AttentionTrace* trace) const {
  const auto nq = decoded.rows();
  if (static_cast<Eigen::Index>(masks.size()) != nq) {
    throw std::invalid_argument("interactiveness: need one mask set per proposal");
  }
  InteractivenessOutput out;
  out.stats.fallback_enabled = fallback;
  if (nq == 0) {
    out.interactiveness = Var::constant(Matrix(0, 1));
    return out;
  }
  const int tokens = grid.tokens();
  constexpr int passes = 1 + static_cast<int>(kNumParts);

  // Stack E^0 and the six part passes; a block-diagonal self-attention mask
  // keeps each pass independent, so this equals seven separate decoder runs.
  std::vector<Var> stacked{decoded};
  for (std::size_t k = 0; k < kNumParts; ++k) stacked.push_back(part_query_ffn_[k](decoded));
  const Var queries = ad::concat_rows(stacked);

  std::vector<Matrix> cross(3, Matrix::Ones(passes * nq, tokens));
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t k = 0; k < kNumParts; ++k) {
      for (Eigen::Index i = 0; i < nq; ++i) {
        const TokenMask& m = masks[static_cast<std::size_t>(i)][j][k];
        const auto row = static_cast<Eigen::Index>(k + 1) * nq + i;
        for (int t = 0; t < tokens; ++t) cross[j](row, t) = m.flat(t) ? 1.0 : 0.0;
      }
    }
  }
  Matrix self_mask = Matrix::Zero(passes * nq, passes * nq);
  for (int p = 0; p < passes; ++p) self_mask.block(p * nq, p * nq, nq, nq).setOnes();

  const Var embeddings = decoder_.forward(queries, grid, cross, self_mask, &out.stats, trace, "interactiveness");
  const Var e0 = ad::slice_rows(embeddings, 0, nq);
  std::vector<Var> logits;
  for (std::size_t k = 0; k < kNumParts; ++k) {
    const Var ek = ad::slice_rows(embeddings, static_cast<Eigen::Index>(k + 1) * nq, nq);
    logits.push_back(intuitive_head_.logits(ad::concat_cols({ek, e0})));
  }
  out.part_logits = ad::concat_cols(logits);
  out.part_interactiveness = ad::sigmoid(out.part_logits);
  // sigmoid is monotone, so max over probabilities equals sigmoid of the max logit.
  out.interactiveness_logit = ad::row_max(out.part_logits);
  out.interactiveness = ad::row_max(out.part_interactiveness);
  return out;
}

InteractivenessOutput InteractivenessHead::intuitive_forward(const FeatureGrid& grid, const Var& decoded,
                                                             const PartMasks& part_masks, bool fallback) const {
  LayeredMasks uniform;
  uniform.fill(part_masks);
  return intuitive_forward(grid, decoded, std::vector<LayeredMasks>(static_cast<std::size_t>(decoded.rows()), uniform),
                           fallback);
}

InteractivenessOutput InteractivenessHead::run(const FeatureGrid& grid, const Var& decoded,
                                               const std::vector<LayeredMasks>& masks, bool fallback,
                                               AttentionTrace* trace) const {
  return config_.scheme == InteractivenessScheme::merged ? forward(grid, decoded, masks, fallback, trace)
                                                         : intuitive_forward(grid, decoded, masks, fallback, trace);
}

long long count_attention_token_ops(ExecutionMode mode, const std::vector<LayeredMasks>& masks,
                                    const std::vector<PartFlags>& selection, int tokens, int importance_depth,
                                    int interact_depth) {
  const auto active = [tokens](const TokenMask& m) {
    const int c = m.count();
    return static_cast<long long>(c == 0 ? tokens : c);
  };
  const long long nq = static_cast<long long>(masks.size());
  long long total = 0;
  if (mode == ExecutionMode::merged) {
    if (selection.size() != masks.size()) throw std::invalid_argument("token ops: selection size mismatch");
    total += importance_depth * nq * tokens;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      const MergedMasks merged = merge_masks(masks[i], selection[i]);
      for (int j = 0; j < interact_depth; ++j) total += active(merged[static_cast<std::size_t>(std::min(j, 2))]);
    }
  } else {
    total += interact_depth * nq * tokens;
    for (const auto& layered : masks) {
      for (int j = 0; j < interact_depth; ++j) {
        for (const TokenMask& m : layered[static_cast<std::size_t>(std::min(j, 2))]) total += active(m);
      }
    }
  }
  return total;
}

}  // namespace hoi

#include "hoi/experiment.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <stdexcept>

namespace hoi {

namespace {

std::vector<std::size_t> all_indices(std::size_t n, const std::vector<std::size_t>& indices) {
  if (!indices.empty()) return indices;
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

void check_aligned(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes) {
  if (predictions.size() != scenes.size()) throw std::invalid_argument("predictions and scenes differ in count");
}

void collect_interactiveness(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                             const std::vector<std::size_t>& indices, std::vector<PairPrediction>& preds,
                             std::vector<PairGroundTruth>& gts) {
  for (std::size_t i : all_indices(scenes.size(), indices)) {
    const auto p = interactiveness_pairs(predictions.at(i));
    preds.insert(preds.end(), p.begin(), p.end());
    const auto g = interactive_ground_truth(scenes.at(i).annotation);
    gts.insert(gts.end(), g.begin(), g.end());
  }
}

}  // namespace

TrainConfig apply_ablation(TrainConfig config, const Ablation& ablation) {
  if (ablation.no_progressive && ablation.no_bodypart) {
    throw std::invalid_argument("--no-progressive and --no-bodypart select different mask schedules");
  }
  if (ablation.no_progressive) config.model.schedule = MaskSchedule::uniform_part;
  if (ablation.no_bodypart) config.model.schedule = MaskSchedule::all_ones;
  if (ablation.no_sampler) config.alpha = 1.0;
  if (ablation.no_merge) config.model.scheme = InteractivenessScheme::intuitive;
  return config;
}

TrainedModel train_two_stage(const std::vector<TrainSample>& data, const TrainConfig& config, bool stage2,
                             std::ostream* log) {
  TrainedModel out{HoiModel(config.model, config.seed), {}, {}};
  out.stage1 = train_stage(out.model, 1, data, config, log);
  if (stage2 && config.stage2_epochs > 0) out.stage2 = train_stage(out.model, 2, data, config, log);
  return out;
}

std::vector<ImagePredictions> predict_all(const HoiModel& model, const std::vector<Scene>& scenes,
                                          bool with_verbs) {
  std::vector<ImagePredictions> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(predict_scene(model, s, true, with_verbs));
  return out;
}

double interactiveness_ap_of(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                             const std::vector<std::size_t>& indices) {
  check_aligned(predictions, scenes);
  std::vector<PairPrediction> preds;
  std::vector<PairGroundTruth> gts;
  collect_interactiveness(predictions, scenes, indices, preds, gts);
  return interactiveness_ap(preds, gts);
}

double shuffled_interactiveness_ap(const std::vector<ImagePredictions>& predictions,
                                   const std::vector<Scene>& scenes, std::uint64_t seed) {
  check_aligned(predictions, scenes);
  std::vector<PairPrediction> preds;
  std::vector<PairGroundTruth> gts;
  collect_interactiveness(predictions, scenes, {}, preds, gts);
  std::vector<double> scores;
  for (const auto& p : preds) scores.push_back(p.score);
  std::mt19937_64 rng(seed);
  std::shuffle(scores.begin(), scores.end(), rng);
  for (std::size_t i = 0; i < preds.size(); ++i) preds[i].score = scores[i];
  return interactiveness_ap(preds, gts);
}

MapReport hoi_map_of(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                     double theta, double nms_threshold) {
  check_aligned(predictions, scenes);
  std::vector<PairPrediction> preds;
  std::vector<PairGroundTruth> gts;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    ImagePredictions image = predictions[i];
    // Verb and interactiveness proposals come from the same detector queries.
    image.detections = nis_filter(attach_nis_scores(image.detections, predictions[i].detections), theta);
    const auto kept = pairwise_nms(hoi_triplets(image), nms_threshold);
    preds.insert(preds.end(), kept.begin(), kept.end());
    const auto g = hoi_ground_truth(scenes[i].annotation);
    gts.insert(gts.end(), g.begin(), g.end());
  }
  return hoi_map(preds, gts);
}

double tune_nis_threshold(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                          const std::vector<double>& grid) {
  if (grid.empty()) throw std::invalid_argument("tune_nis_threshold: empty grid");
  double best_theta = grid.front(), best = -1.0;
  for (double theta : grid) {
    const double m = hoi_map_of(predictions, scenes, theta).map;
    if (m > best || (m == best && theta < best_theta)) {
      best = m;
      best_theta = theta;
    }
  }
  return best_theta;
}

std::vector<SplitRow> interactiveness_split_report(const std::vector<ImagePredictions>& predictions,
                                                   const std::vector<Scene>& scenes, const std::vector<Split>& splits) {
  check_aligned(predictions, scenes);
  std::vector<SceneAnnotation> annotations;
  for (const auto& s : scenes) annotations.push_back(s.annotation);
  return split_report(
      annotations, splits,
      [&](const std::vector<std::size_t>& idx) { return interactiveness_ap_of(predictions, scenes, idx); },
      [](const SceneAnnotation& a) { return static_cast<int>(interactive_ground_truth(a).size()); });
}

std::vector<TokenBench> bench_tokens(const HoiModel& model, const std::vector<Scene>& scenes) {
  const GridSpec spec = model.grid();
  const InteractivenessHead& head = model.interactiveness_head();
  const int importance = head.config().importance_depth, depth = head.config().decoder.depth;
  std::vector<TokenBench> out;
  for (const auto& s : scenes) {
    const FeatureGrid grid = model.encode(stem_features(s.image, spec, model.config().stem_cells));
    const DetectorOutput det = model.detect(grid);
    const auto masks = model.proposal_masks(det, build_part_masks(s.annotation, spec));
    const InteractivenessOutput io = head.forward(grid, det.embeddings, masks);
    TokenBench b;
    b.image_id = s.annotation.id;
    b.merged = count_attention_token_ops(ExecutionMode::merged, masks, io.selection, spec.tokens(), importance, depth);
    b.intuitive =
        count_attention_token_ops(ExecutionMode::intuitive, masks, io.selection, spec.tokens(), importance, depth);
    b.runtime = io.stats.token_ops;
    out.push_back(b);
  }
  return out;
}

std::vector<Scene> scenes_from_annotations(const std::vector<SceneAnnotation>& annotations) {
  std::vector<Scene> out;
  out.reserve(annotations.size());
  for (const auto& a : annotations) out.push_back(Scene{a, render_scene(a)});
  return out;
}

}  // namespace hoi

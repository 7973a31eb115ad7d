// Train-and-evaluate plumbing shared by the CLI and the acceptance runner.
#pragma once

#include "hoi/eval.hpp"
#include "hoi/train.hpp"

#include <iosfwd>
#include <optional>
#include <vector>

namespace hoi {

// Ablation toggles. Each maps onto one config field.
struct Ablation {
  bool no_progressive = false;  // the body-part map in every layer
  bool no_sampler = false;      // α = 1
  bool no_merge = false;        // one masked pass per part
  bool no_bodypart = false;     // all-ones masks

  bool any() const { return no_progressive || no_sampler || no_merge || no_bodypart; }
};

TrainConfig apply_ablation(TrainConfig config, const Ablation& ablation);

struct TrainedModel {
  HoiModel model;
  std::vector<EpochLog> stage1;
  std::vector<EpochLog> stage2;
};

// Stage 1 then (when stage2_epochs > 0 and `stage2`) stage 2 on the same model.
TrainedModel train_two_stage(const std::vector<TrainSample>& data, const TrainConfig& config, bool stage2 = true,
                             std::ostream* log = nullptr);

// Model outputs for a scene list, in scene order.
std::vector<ImagePredictions> predict_all(const HoiModel& model, const std::vector<Scene>& scenes,
                                          bool with_verbs);

// Interactiveness AP over the scenes selected by `indices` (all when empty).
double interactiveness_ap_of(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                             const std::vector<std::size_t>& indices = {});
// Same predictions with scores permuted across all pairs (fixed seed).
double shuffled_interactiveness_ap(const std::vector<ImagePredictions>& predictions,
                                   const std::vector<Scene>& scenes, std::uint64_t seed);

// HOI mAP after NIS at `theta` (0 keeps everything) and pairwise NMS.
MapReport hoi_map_of(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                     double theta, double nms_threshold = 0.6);

// Smallest θ on the grid with the best validation mAP.
double tune_nis_threshold(const std::vector<ImagePredictions>& predictions, const std::vector<Scene>& scenes,
                          const std::vector<double>& grid);

std::vector<SplitRow> interactiveness_split_report(const std::vector<ImagePredictions>& predictions,
                                                   const std::vector<Scene>& scenes, const std::vector<Split>& splits);

struct TokenBench {
  int image_id = 0;
  long long merged = 0;     // one masked pass over the merged queries
  long long intuitive = 0;  // six masked passes plus one unmasked pass
  long long runtime = 0;    // counter from the merged forward itself
};

// Token-op counts of the interactiveness decoder for the model's own
// proposals and part selection on each scene.
std::vector<TokenBench> bench_tokens(const HoiModel& model, const std::vector<Scene>& scenes);

std::vector<Scene> scenes_from_annotations(const std::vector<SceneAnnotation>& annotations);

}  // namespace hoi

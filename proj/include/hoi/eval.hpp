// Detection metrics, non-interaction suppression, pairwise NMS and split reports.
#pragma once

#include "hoi/box_ops.hpp"
#include "hoi/model.hpp"
#include "hoi/scene.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hoi {

// One scored human-object pair; `hoi_class` is the verb index for HOI mAP
// and -1 for class-agnostic interactiveness evaluation.
struct PairPrediction {
  int image_id = 0;
  Box human;
  Box object;
  int category = 1;
  int hoi_class = -1;
  double score = 0;
};

struct PairGroundTruth {
  int image_id = 0;
  Box human;
  Box object;
  int category = 1;
  int hoi_class = -1;
};

struct MatchOptions {
  double iou_threshold = 0.5;  // both IoUs must be strictly greater
  bool require_category = true;
  bool require_hoi_class = true;
};

// Predictions in descending score order with their TP flags and the GT each consumed.
struct EvalRecord {
  std::vector<PairPrediction> predictions;
  std::vector<bool> true_positive;
  std::vector<int> matched_gt;  // -1 for false positives
  int num_gt = 0;
};

// Greedy matching in descending score order (stable for ties); each GT is used once.
EvalRecord match_predictions(std::vector<PairPrediction> predictions, const std::vector<PairGroundTruth>& gts,
                             const MatchOptions& options = {});

// All-point interpolated area under the precision-recall curve. Zero when num_gt is 0.
double average_precision(const EvalRecord& record);
double average_precision(const std::vector<double>& sorted_scores, const std::vector<bool>& true_positive,
                         int num_gt);

// Interactiveness AP: all interactive pairs form one class; object category is ignored.
double interactiveness_ap(const std::vector<PairPrediction>& predictions, const std::vector<PairGroundTruth>& gts);

struct MapReport {
  double map = 0;
  std::map<std::pair<int, int>, double> per_category;  // (verb, object category) → AP
  int skipped_categories = 0;  // predicted categories with no ground truth
};

// Mean AP over (verb, object category) classes that have ground truth.
MapReport hoi_map(const std::vector<PairPrediction>& predictions, const std::vector<PairGroundTruth>& gts);

// A proposal from either branch of the model, in normalized or pixel coordinates.
struct Proposal {
  Box human;
  Box object;
  int category = 1;           // argmax over object classes (no-object excluded)
  double category_score = 0;  // probability of that class
  std::vector<double> verb_scores;
  double int_score = 0;
};

struct ImagePredictions {
  int image_id = 0;
  std::vector<Proposal> detections;
};

// f(i) per verb proposal: index into `interactiveness` of the same-category
// proposal maximising IoU_h + IoU_o, or -1 when none has the category.
std::vector<int> match_for_nis(const std::vector<Proposal>& verb, const std::vector<Proposal>& interactiveness);
// Attaches the matched interactiveness score (0 when unmatched).
std::vector<Proposal> attach_nis_scores(std::vector<Proposal> verb, const std::vector<Proposal>& interactiveness);
// Keeps proposals with int_score ≥ theta.
std::vector<Proposal> nis_filter(const std::vector<Proposal>& proposals, double theta);

// Suppresses a pair whose human and object IoUs against a higher-scored kept
// pair of the same (category, hoi_class) both exceed the threshold.
std::vector<PairPrediction> pairwise_nms(std::vector<PairPrediction> pairs, double iou_threshold = 0.6);

// (verb, category) triplets of one image, scored verb · category score, before NMS.
std::vector<PairPrediction> hoi_triplets(const ImagePredictions& image);
// Class-agnostic pairs scored by int_score.
std::vector<PairPrediction> interactiveness_pairs(const ImagePredictions& image);

std::vector<PairGroundTruth> interactive_ground_truth(const SceneAnnotation& scene);
std::vector<PairGroundTruth> hoi_ground_truth(const SceneAnnotation& scene);

// Model outputs for one scene, boxes in pixels.
ImagePredictions predict_scene(const HoiModel& model, const Scene& scene, bool with_interactiveness,
                               bool with_verbs);

nlohmann::json to_json(const ImagePredictions& image);
ImagePredictions image_predictions_from_json(const nlohmann::json& j);
void write_predictions_jsonl(const std::vector<ImagePredictions>& images, std::ostream& out);
std::vector<ImagePredictions> read_predictions_jsonl(std::istream& in);

// Per-image interactiveness dump: per-proposal p_int, part scores, selection
// and per-layer merged masks.
nlohmann::json interactiveness_dump(const HoiModel& model, const Scene& scene);

enum class Split { all, sparse, crowded, normal, tiny, less_occ, more_occ };
std::string_view split_name(Split split);
std::optional<Split> split_from_name(std::string_view name);
bool in_split(const SceneTags& tags, Split split);
inline constexpr std::array<Split, 7> kAllSplits = {Split::all,   Split::sparse,   Split::crowded, Split::normal,
                                                    Split::tiny,  Split::less_occ, Split::more_occ};

struct SplitRow {
  Split split = Split::all;
  int images = 0;
  int gt_pairs = 0;
  std::optional<double> value;  // empty when the split has no ground truth
};

// metric(image indices) → value; empty splits are reported as n/a.
using SplitMetric = std::function<double(const std::vector<std::size_t>&)>;
std::vector<SplitRow> split_report(const std::vector<SceneAnnotation>& scenes, const std::vector<Split>& splits,
                                   const SplitMetric& metric,
                                   const std::function<int(const SceneAnnotation&)>& gt_count);
std::string format_split_csv(const std::vector<SplitRow>& rows, const std::string& metric_name);
std::string format_split_table(const std::vector<SplitRow>& rows, const std::string& metric_name);

}  // namespace hoi

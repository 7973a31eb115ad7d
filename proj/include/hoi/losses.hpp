// Set-prediction losses and the bipartite matcher.
#pragma once

#include "hoi/box_ops.hpp"
#include "hoi/interactiveness.hpp"
#include "hoi/model.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <vector>

namespace hoi {

struct LossWeights {
  double lambda1 = 1.0;  // L1 box term
  double lambda2 = 2.5;  // GIoU term
  double lambda3 = 1.0;  // classification term
  double no_object_weight = 0.1;
};

// One annotated human-object pair with normalized boxes.
struct GroundTruthPair {
  Box human;
  Box object;
  int category = 1;
  std::vector<int> verbs;
  bool interactive = false;
  std::optional<PartFlags> part_labels;
};

std::vector<GroundTruthPair> ground_truth_pairs(const SceneAnnotation& scene);

// GIoU per row of two N × 4 box matrices [w1, h1, w2, h2]; N × 1.
Var giou_rows(const Var& a, const Var& b);

// Minimum-cost assignment of every row to a distinct column (rows ≤ cols).
// Returns the chosen column per row.
std::vector<int> solve_assignment(const Matrix& cost);

// cost(g, q) = λ1·(‖b_h - b̂_h‖₁ + ‖b_o - b̂_o‖₁) + λ2·(2 - GIoU_h - GIoU_o) + λ3·(1 - c_q[class_g]).
Matrix matching_cost(const Matrix& human_boxes, const Matrix& object_boxes, const Matrix& class_probs,
                     const std::vector<GroundTruthPair>& gts, const LossWeights& weights);

// Proposal index per ground-truth pair. Throws if there are more pairs than proposals.
std::vector<int> bipartite_match(const Matrix& human_boxes, const Matrix& object_boxes, const Matrix& class_probs,
                                 const std::vector<GroundTruthPair>& gts, const LossWeights& weights);

struct DetectionLoss {
  Var l_b;
  Var l_u;
  Var l_c;
  Var l_det;
};

DetectionLoss detection_loss(const DetectorOutput& det, const std::vector<GroundTruthPair>& gts,
                             const std::vector<int>& matching, const LossWeights& weights);
// Label 1 for proposals matched to an interactive pair, 0 elsewhere.
Var interactiveness_loss(const Var& logits, const std::vector<GroundTruthPair>& gts,
                         const std::vector<int>& matching);
// BCE over the verb vectors of matched proposals; zero when nothing is matched.
Var verb_loss(const Var& logits, const std::vector<GroundTruthPair>& gts, const std::vector<int>& matching);
// BCE of part-score logits of matched proposals against part labels, when present.
std::optional<Var> part_loss(const Var& part_logits, const std::vector<GroundTruthPair>& gts,
                             const std::vector<int>& matching);

struct LossReport {
  double l_b = 0, l_u = 0, l_c = 0, l_det = 0, l_int = 0, l_verb = 0;
  std::optional<double> l_part;

  LossReport& operator+=(const LossReport& other);
  LossReport scaled(double s) const;
  nlohmann::json to_json() const;
};

}  // namespace hoi

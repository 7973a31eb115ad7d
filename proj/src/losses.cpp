#include "hoi/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace hoi {

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

double giou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double hull = (std::max(a.w2, b.w2) - std::min(a.w1, b.w1)) * (std::max(a.h2, b.h2) - std::min(a.h1, b.h1));
  if (hull <= 0.0) return a == b ? 1.0 : 0.0;
  const double i = uni > 0.0 ? inter / uni : 0.0;
  return i - (hull - uni) / hull;
}

std::vector<GroundTruthPair> ground_truth_pairs(const SceneAnnotation& scene) {
  std::vector<GroundTruthPair> out;
  out.reserve(scene.interactions.size());
  for (const auto& in : scene.interactions) {
    const auto& person = scene.persons.at(static_cast<std::size_t>(in.person));
    const auto& object = scene.objects.at(static_cast<std::size_t>(in.object));
    GroundTruthPair g;
    g.human = person.bbox.normalized(scene.width, scene.height);
    g.object = object.bbox.normalized(scene.width, scene.height);
    g.category = object.category;
    g.verbs = in.verbs;
    g.interactive = in.interactive;
    g.part_labels = in.part_labels;
    out.push_back(std::move(g));
  }
  return out;
}

Var giou_rows(const Var& a, const Var& b) {
  using namespace ad;
  if (a.cols() != 4 || b.cols() != 4 || a.rows() != b.rows()) throw std::invalid_argument("giou_rows: need N x 4 pairs");
  const auto col = [](const Var& m, int c) { return slice_cols(m, c, 1); };
  const Var aw1 = col(a, 0), ah1 = col(a, 1), aw2 = col(a, 2), ah2 = col(a, 3);
  const Var bw1 = col(b, 0), bh1 = col(b, 1), bw2 = col(b, 2), bh2 = col(b, 3);
  const Var iw = clamp_min(minimum(aw2, bw2) - maximum(aw1, bw1), 0.0);
  const Var ih = clamp_min(minimum(ah2, bh2) - maximum(ah1, bh1), 0.0);
  const Var inter = iw * ih;
  const Var area_a = (aw2 - aw1) * (ah2 - ah1);
  const Var area_b = (bw2 - bw1) * (bh2 - bh1);
  const Var uni = area_a + area_b - inter;
  const Var hull = (maximum(aw2, bw2) - minimum(aw1, bw1)) * (maximum(ah2, bh2) - minimum(ah1, bh1));
  return div(inter, uni) - div(hull - uni, hull);
}

std::vector<int> solve_assignment(const Matrix& cost) {
  const auto n = static_cast<int>(cost.rows()), m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("solve_assignment: more rows than columns");
  if (n == 0) return {};
  if (!cost.allFinite()) throw std::invalid_argument("solve_assignment: non-finite cost");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // Shortest augmenting path Hungarian method with row/column potentials (1-based).
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<int> p(static_cast<std::size_t>(m) + 1, 0), way(static_cast<std::size_t>(m) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m) + 1, inf);
    std::vector<bool> used(static_cast<std::size_t>(m) + 1, false);
    do {
      used[static_cast<std::size_t>(j0)] = true;
      const int i0 = p[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[uj];
        if (cur < minv[uj]) {
          minv[uj] = cur;
          way[uj] = j0;
        }
        if (minv[uj] < delta) {
          delta = minv[uj];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        const auto uj = static_cast<std::size_t>(j);
        if (used[uj]) {
          u[static_cast<std::size_t>(p[uj])] += delta;
          v[uj] -= delta;
        } else {
          minv[uj] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> assignment(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j) {
    if (p[static_cast<std::size_t>(j)] != 0) assignment[static_cast<std::size_t>(p[static_cast<std::size_t>(j)] - 1)] = j - 1;
  }
  return assignment;
}

namespace {

double l1(const Box& a, const Box& b) {
  return std::abs(a.w1 - b.w1) + std::abs(a.h1 - b.h1) + std::abs(a.w2 - b.w2) + std::abs(a.h2 - b.h2);
}

Box row_box(const Matrix& m, Eigen::Index i) { return Box{m(i, 0), m(i, 1), m(i, 2), m(i, 3)}; }

Matrix box_rows(const std::vector<GroundTruthPair>& gts, bool human) {
  Matrix out(static_cast<Eigen::Index>(gts.size()), 4);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Box& b = human ? gts[g].human : gts[g].object;
    out.row(static_cast<Eigen::Index>(g)) << b.w1, b.h1, b.w2, b.h2;
  }
  return out;
}

std::vector<Eigen::Index> to_index(const std::vector<int>& v) { return {v.begin(), v.end()}; }

}  // namespace

Matrix matching_cost(const Matrix& human_boxes, const Matrix& object_boxes, const Matrix& class_probs,
                     const std::vector<GroundTruthPair>& gts, const LossWeights& weights) {
  const auto nq = human_boxes.rows();
  Matrix cost(static_cast<Eigen::Index>(gts.size()), nq);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const auto& gt = gts[g];
    if (gt.category < 1 || gt.category >= class_probs.cols()) throw std::invalid_argument("matching: bad category");
    for (Eigen::Index q = 0; q < nq; ++q) {
      const Box h = row_box(human_boxes, q), o = row_box(object_boxes, q);
      cost(static_cast<Eigen::Index>(g), q) = weights.lambda1 * (l1(h, gt.human) + l1(o, gt.object)) +
                                              weights.lambda2 * (2.0 - giou(h, gt.human) - giou(o, gt.object)) +
                                              weights.lambda3 * (1.0 - class_probs(q, gt.category));
    }
  }
  return cost;
}

std::vector<int> bipartite_match(const Matrix& human_boxes, const Matrix& object_boxes, const Matrix& class_probs,
                                 const std::vector<GroundTruthPair>& gts, const LossWeights& weights) {
  if (static_cast<Eigen::Index>(gts.size()) > human_boxes.rows()) {
    throw std::invalid_argument("bipartite_match: " + std::to_string(gts.size()) + " ground-truth pairs but only " +
                                std::to_string(human_boxes.rows()) + " proposals");
  }
  return solve_assignment(matching_cost(human_boxes, object_boxes, class_probs, gts, weights));
}

DetectionLoss detection_loss(const DetectorOutput& det, const std::vector<GroundTruthPair>& gts,
                             const std::vector<int>& matching, const LossWeights& weights) {
  if (matching.size() != gts.size()) throw std::invalid_argument("detection_loss: matching size mismatch");
  DetectionLoss out;
  const auto nq = det.class_logits.rows();
  const auto zero = [] { return Var::constant(Matrix::Zero(1, 1)); };
  if (gts.empty()) {
    out.l_b = zero();
    out.l_u = zero();
  } else {
    const auto idx = to_index(matching);
    const double g = static_cast<double>(gts.size());
    const Var ph = ad::gather_rows(det.human_boxes, idx), po = ad::gather_rows(det.object_boxes, idx);
    const Var th = Var::constant(box_rows(gts, true)), to = Var::constant(box_rows(gts, false));
    out.l_b = ad::scale(ad::sum(ad::abs(ph - th)) + ad::sum(ad::abs(po - to)), 1.0 / g);
    const Var one_minus = ad::add_scalar(ad::scale(giou_rows(ph, th) + giou_rows(po, to), -1.0), 2.0);
    out.l_u = ad::scale(ad::sum(one_minus), 1.0 / g);
  }
  std::vector<int> targets(static_cast<std::size_t>(nq), 0);
  for (std::size_t g = 0; g < gts.size(); ++g) targets[static_cast<std::size_t>(matching[g])] = gts[g].category;
  std::vector<double> class_weights(static_cast<std::size_t>(det.class_logits.cols()), 1.0);
  class_weights[0] = weights.no_object_weight;
  out.l_c = ad::cross_entropy_rows(det.class_logits, targets, class_weights);
  out.l_det = ad::scale(out.l_b, weights.lambda1) + ad::scale(out.l_u, weights.lambda2) +
              ad::scale(out.l_c, weights.lambda3);
  return out;
}

Var interactiveness_loss(const Var& logits, const std::vector<GroundTruthPair>& gts,
                         const std::vector<int>& matching) {
  Matrix labels = Matrix::Zero(logits.rows(), 1);
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gts[g].interactive) labels(matching[g], 0) = 1.0;
  }
  return ad::bce_with_logits(logits, labels);
}

Var verb_loss(const Var& logits, const std::vector<GroundTruthPair>& gts, const std::vector<int>& matching) {
  if (gts.empty()) return Var::constant(Matrix::Zero(1, 1));
  Matrix labels = Matrix::Zero(static_cast<Eigen::Index>(gts.size()), logits.cols());
  for (std::size_t g = 0; g < gts.size(); ++g) {
    for (int v : gts[g].verbs) labels(static_cast<Eigen::Index>(g), v) = 1.0;
  }
  return ad::bce_with_logits(ad::gather_rows(logits, to_index(matching)), labels);
}

std::optional<Var> part_loss(const Var& part_logits, const std::vector<GroundTruthPair>& gts,
                             const std::vector<int>& matching) {
  std::vector<Eigen::Index> rows;
  std::vector<PartFlags> labels;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (!gts[g].part_labels) continue;
    rows.push_back(matching[g]);
    labels.push_back(*gts[g].part_labels);
  }
  if (rows.empty()) return std::nullopt;
  Matrix targets(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(kNumParts));
  for (std::size_t r = 0; r < labels.size(); ++r) {
    for (std::size_t k = 0; k < kNumParts; ++k) targets(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) = labels[r][k];
  }
  return ad::bce_with_logits(ad::gather_rows(part_logits, rows), targets);
}

LossReport& LossReport::operator+=(const LossReport& o) {
  l_b += o.l_b;
  l_u += o.l_u;
  l_c += o.l_c;
  l_det += o.l_det;
  l_int += o.l_int;
  l_verb += o.l_verb;
  if (o.l_part) l_part = l_part.value_or(0.0) + *o.l_part;
  return *this;
}

LossReport LossReport::scaled(double s) const {
  LossReport r = *this;
  r.l_b *= s;
  r.l_u *= s;
  r.l_c *= s;
  r.l_det *= s;
  r.l_int *= s;
  r.l_verb *= s;
  if (r.l_part) *r.l_part *= s;
  return r;
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j = {{"l_b", l_b}, {"l_u", l_u}, {"l_c", l_c}, {"l_det", l_det}, {"l_int", l_int}, {"l_verb", l_verb}};
  if (l_part) j["l_part"] = *l_part;
  return j;
}

}  // namespace hoi

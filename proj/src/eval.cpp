#include "hoi/eval.hpp"

#include <algorithm>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hoi {

namespace {

void sort_by_score(std::vector<PairPrediction>& p) {
  std::stable_sort(p.begin(), p.end(), [](const PairPrediction& a, const PairPrediction& b) { return a.score > b.score; });
}

}  // namespace

EvalRecord match_predictions(std::vector<PairPrediction> predictions, const std::vector<PairGroundTruth>& gts,
                             const MatchOptions& options) {
  sort_by_score(predictions);
  EvalRecord rec;
  rec.num_gt = static_cast<int>(gts.size());
  std::vector<bool> used(gts.size(), false);
  for (const auto& p : predictions) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto& gt = gts[g];
      if (used[g] || gt.image_id != p.image_id) continue;
      if (options.require_category && gt.category != p.category) continue;
      if (options.require_hoi_class && gt.hoi_class != p.hoi_class) continue;
      const double ih = iou(p.human, gt.human), io = iou(p.object, gt.object);
      if (ih <= options.iou_threshold || io <= options.iou_threshold) continue;
      const double m = std::min(ih, io);
      if (m > best_iou) {
        best_iou = m;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) used[static_cast<std::size_t>(best)] = true;
    rec.true_positive.push_back(best >= 0);
    rec.matched_gt.push_back(best);
  }
  rec.predictions = std::move(predictions);
  return rec;
}

double average_precision(const std::vector<double>& sorted_scores, const std::vector<bool>& tp, int num_gt) {
  if (sorted_scores.size() != tp.size()) throw std::invalid_argument("average_precision: size mismatch");
  if (num_gt <= 0) return 0.0;
  const std::size_t n = tp.size();
  std::vector<double> precision(n), recall(n);
  double tps = 0, fps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    (tp[i] ? tps : fps) += 1.0;
    precision[i] = tps / (tps + fps);
    recall[i] = tps / num_gt;
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

double average_precision(const EvalRecord& record) {
  std::vector<double> scores;
  scores.reserve(record.predictions.size());
  for (const auto& p : record.predictions) scores.push_back(p.score);
  return average_precision(scores, record.true_positive, record.num_gt);
}

double interactiveness_ap(const std::vector<PairPrediction>& predictions, const std::vector<PairGroundTruth>& gts) {
  MatchOptions opt;
  opt.require_category = false;
  opt.require_hoi_class = false;
  return average_precision(match_predictions(predictions, gts, opt));
}

MapReport hoi_map(const std::vector<PairPrediction>& predictions, const std::vector<PairGroundTruth>& gts) {
  std::map<std::pair<int, int>, std::vector<PairPrediction>> preds;
  std::map<std::pair<int, int>, std::vector<PairGroundTruth>> truth;
  for (const auto& p : predictions) preds[{p.hoi_class, p.category}].push_back(p);
  for (const auto& g : gts) truth[{g.hoi_class, g.category}].push_back(g);
  MapReport report;
  for (const auto& [key, g] : truth) {
    const auto it = preds.find(key);
    const double ap = it == preds.end() ? 0.0 : average_precision(match_predictions(it->second, g));
    report.per_category[key] = ap;
  }
  for (const auto& [key, p] : preds) {
    if (!truth.contains(key)) ++report.skipped_categories;
  }
  double sum = 0;
  for (const auto& [key, ap] : report.per_category) sum += ap;
  report.map = report.per_category.empty() ? 0.0 : sum / static_cast<double>(report.per_category.size());
  return report;
}

std::vector<int> match_for_nis(const std::vector<Proposal>& verb, const std::vector<Proposal>& interactiveness) {
  std::vector<int> out;
  out.reserve(verb.size());
  for (const auto& r : verb) {
    int best = -1;
    double best_sum = -1.0;
    for (std::size_t j = 0; j < interactiveness.size(); ++j) {
      const auto& c = interactiveness[j];
      if (c.category != r.category) continue;
      const double s = iou(r.human, c.human) + iou(r.object, c.object);
      if (s > best_sum) {
        best_sum = s;
        best = static_cast<int>(j);
      }
    }
    out.push_back(best);
  }
  return out;
}

std::vector<Proposal> attach_nis_scores(std::vector<Proposal> verb, const std::vector<Proposal>& interactiveness) {
  const auto f = match_for_nis(verb, interactiveness);
  for (std::size_t i = 0; i < verb.size(); ++i) {
    verb[i].int_score = f[i] < 0 ? 0.0 : interactiveness[static_cast<std::size_t>(f[i])].int_score;
  }
  return verb;
}

std::vector<Proposal> nis_filter(const std::vector<Proposal>& proposals, double theta) {
  std::vector<Proposal> out;
  for (const auto& p : proposals) {
    if (p.int_score >= theta) out.push_back(p);
  }
  return out;
}

std::vector<PairPrediction> pairwise_nms(std::vector<PairPrediction> pairs, double iou_threshold) {
  sort_by_score(pairs);
  std::vector<PairPrediction> kept;
  for (const auto& p : pairs) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const PairPrediction& k) {
      return k.image_id == p.image_id && k.category == p.category && k.hoi_class == p.hoi_class &&
             iou(k.human, p.human) > iou_threshold && iou(k.object, p.object) > iou_threshold;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

std::vector<PairPrediction> hoi_triplets(const ImagePredictions& image) {
  std::vector<PairPrediction> out;
  for (const auto& d : image.detections) {
    for (std::size_t v = 0; v < d.verb_scores.size(); ++v) {
      out.push_back(PairPrediction{image.image_id, d.human, d.object, d.category, static_cast<int>(v),
                                   d.verb_scores[v] * d.category_score});
    }
  }
  return out;
}

std::vector<PairPrediction> interactiveness_pairs(const ImagePredictions& image) {
  std::vector<PairPrediction> out;
  for (const auto& d : image.detections) {
    out.push_back(PairPrediction{image.image_id, d.human, d.object, d.category, -1, d.int_score});
  }
  return out;
}

std::vector<PairGroundTruth> interactive_ground_truth(const SceneAnnotation& scene) {
  std::vector<PairGroundTruth> out;
  for (const auto& in : scene.interactions) {
    if (!in.interactive) continue;
    const auto& o = scene.objects.at(static_cast<std::size_t>(in.object));
    out.push_back(PairGroundTruth{scene.id, scene.persons.at(static_cast<std::size_t>(in.person)).bbox, o.bbox,
                                  o.category, -1});
  }
  return out;
}

std::vector<PairGroundTruth> hoi_ground_truth(const SceneAnnotation& scene) {
  std::vector<PairGroundTruth> out;
  for (const auto& in : scene.interactions) {
    const auto& o = scene.objects.at(static_cast<std::size_t>(in.object));
    for (int v : in.verbs) {
      out.push_back(PairGroundTruth{scene.id, scene.persons.at(static_cast<std::size_t>(in.person)).bbox, o.bbox,
                                    o.category, v});
    }
  }
  return out;
}

ImagePredictions predict_scene(const HoiModel& model, const Scene& scene, bool with_interactiveness,
                               bool with_verbs) {
  const GridSpec spec = model.grid();
  const FeatureGrid grid = model.encode(stem_features(scene.image, spec, model.config().stem_cells));
  const DetectorOutput det = model.detect(grid);
  Matrix p_int, p_verb;
  if (with_interactiveness) {
    p_int = model.interactiveness(grid, det, build_part_masks(scene.annotation, spec)).interactiveness.value();
  }
  if (with_verbs) p_verb = model.verb_scores(grid, det.embeddings).value();
  const Matrix& probs = det.class_probs.value();
  const auto hb = det.human_box_values(), ob = det.object_box_values();
  ImagePredictions out;
  out.image_id = scene.annotation.id;
  for (std::size_t q = 0; q < hb.size(); ++q) {
    const auto i = static_cast<Eigen::Index>(q);
    Proposal p;
    p.human = hb[q].unnormalized(spec.image_width, spec.image_height);
    p.object = ob[q].unnormalized(spec.image_width, spec.image_height);
    Eigen::Index best = 0;
    p.category_score = probs.row(i).tail(probs.cols() - 1).maxCoeff(&best);
    p.category = static_cast<int>(best) + 1;
    if (with_verbs) {
      for (Eigen::Index v = 0; v < p_verb.cols(); ++v) p.verb_scores.push_back(p_verb(i, v));
    }
    if (with_interactiveness) p.int_score = p_int(i, 0);
    out.detections.push_back(std::move(p));
  }
  return out;
}

namespace {

nlohmann::json box_array(const Box& b) { return {b.w1, b.h1, b.w2, b.h2}; }

Box box_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("prediction box must have 4 numbers");
  return Box{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

}  // namespace

nlohmann::json to_json(const ImagePredictions& image) {
  nlohmann::json dets = nlohmann::json::array();
  for (const auto& d : image.detections) {
    dets.push_back({{"bh", box_array(d.human)},
                    {"bo", box_array(d.object)},
                    {"category", d.category},
                    {"category_score", d.category_score},
                    {"verb_scores", d.verb_scores},
                    {"int_score", d.int_score}});
  }
  return {{"image_id", image.image_id}, {"detections", std::move(dets)}};
}

ImagePredictions image_predictions_from_json(const nlohmann::json& j) {
  ImagePredictions out;
  out.image_id = j.at("image_id").get<int>();
  for (const auto& d : j.at("detections")) {
    Proposal p;
    p.human = box_from(d.at("bh"));
    p.object = box_from(d.at("bo"));
    p.category = d.at("category").get<int>();
    p.category_score = d.value("category_score", 1.0);
    p.verb_scores = d.at("verb_scores").get<std::vector<double>>();
    p.int_score = d.at("int_score").get<double>();
    out.detections.push_back(std::move(p));
  }
  return out;
}

void write_predictions_jsonl(const std::vector<ImagePredictions>& images, std::ostream& out) {
  for (const auto& im : images) out << to_json(im).dump() << '\n';
}

std::vector<ImagePredictions> read_predictions_jsonl(std::istream& in) {
  std::vector<ImagePredictions> out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(image_predictions_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("predictions line " + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

nlohmann::json interactiveness_dump(const HoiModel& model, const Scene& scene) {
  const GridSpec spec = model.grid();
  const FeatureGrid grid = model.encode(stem_features(scene.image, spec, model.config().stem_cells));
  const DetectorOutput det = model.detect(grid);
  const InteractivenessOutput io = model.interactiveness(grid, det, build_part_masks(scene.annotation, spec));
  const bool merged = model.config().scheme == InteractivenessScheme::merged;
  nlohmann::json proposals = nlohmann::json::array();
  for (Eigen::Index i = 0; i < io.interactiveness.rows(); ++i) {
    nlohmann::json p = {{"p_int", io.interactiveness.value()(i, 0)}};
    nlohmann::json parts = nlohmann::json::object();
    const Matrix& part_values = merged ? io.part_scores.value() : io.part_interactiveness.value();
    for (Part k : kAllParts) parts[std::string(part_name(k))] = part_values(i, static_cast<Eigen::Index>(index(k)));
    p[merged ? "part_scores" : "part_interactiveness"] = parts;
    if (merged) {
      const auto& sel = io.selection[static_cast<std::size_t>(i)];
      nlohmann::json chosen = nlohmann::json::array();
      for (Part k : kAllParts) {
        if (sel[index(k)]) chosen.push_back(part_name(k));
      }
      p["selected"] = chosen;
      nlohmann::json layers = nlohmann::json::array();
      for (const auto& m : io.merged_masks[static_cast<std::size_t>(i)]) layers.push_back(to_json(m));
      p["merged_masks"] = layers;
    }
    proposals.push_back(std::move(p));
  }
  return {{"image_id", scene.annotation.id},
          {"scheme", scheme_name(model.config().scheme)},
          {"mask_fallbacks", io.stats.fallback_count},
          {"proposals", std::move(proposals)}};
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::all: return "all";
    case Split::sparse: return "sparse";
    case Split::crowded: return "crowded";
    case Split::normal: return "normal";
    case Split::tiny: return "tiny";
    case Split::less_occ: return "less-occ";
    case Split::more_occ: return "more-occ";
  }
  return "?";
}

std::optional<Split> split_from_name(std::string_view name) {
  for (Split s : kAllSplits) {
    if (split_name(s) == name) return s;
  }
  return std::nullopt;
}

bool in_split(const SceneTags& tags, Split split) {
  switch (split) {
    case Split::all: return true;
    case Split::sparse: return !tags.crowded;
    case Split::crowded: return tags.crowded;
    case Split::normal: return !tags.tiny;
    case Split::tiny: return tags.tiny;
    case Split::less_occ: return tags.occluded == OcclusionBand::low;
    case Split::more_occ: return tags.occluded == OcclusionBand::high;
  }
  return false;
}

std::vector<SplitRow> split_report(const std::vector<SceneAnnotation>& scenes, const std::vector<Split>& splits,
                                   const SplitMetric& metric,
                                   const std::function<int(const SceneAnnotation&)>& gt_count) {
  std::vector<SceneTags> tags;
  tags.reserve(scenes.size());
  for (const auto& s : scenes) tags.push_back(tag_hard_cases(s));
  std::vector<SplitRow> rows;
  for (Split split : splits) {
    SplitRow row;
    row.split = split;
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      if (!in_split(tags[i], split)) continue;
      members.push_back(i);
      row.gt_pairs += gt_count(scenes[i]);
    }
    row.images = static_cast<int>(members.size());
    if (row.gt_pairs > 0) row.value = metric(members);
    rows.push_back(row);
  }
  return rows;
}

std::string format_split_csv(const std::vector<SplitRow>& rows, const std::string& metric_name) {
  std::ostringstream out;
  out << "split,images,gt_pairs," << metric_name << '\n';
  for (const auto& r : rows) {
    out << split_name(r.split) << ',' << r.images << ',' << r.gt_pairs << ',';
    if (r.value) {
      out << std::setprecision(6) << *r.value;
    } else {
      out << "n/a";
    }
    out << '\n';
  }
  return out.str();
}

std::string format_split_table(const std::vector<SplitRow>& rows, const std::string& metric_name) {
  std::ostringstream out;
  out << std::left << std::setw(10) << "split" << std::right << std::setw(8) << "images" << std::setw(10) << "gt_pairs"
      << "  " << metric_name << '\n';
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << split_name(r.split) << std::right << std::setw(8) << r.images << std::setw(10)
        << r.gt_pairs << std::setw(2 + static_cast<int>(metric_name.size()));
    if (r.value) {
      out << std::fixed << std::setprecision(4) << *r.value;
    } else {
      out << "n/a";
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace hoi

#include "hoi/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

namespace hoi {

void TrainConfig::validate() const {
  model.validate();
  if (alpha <= 0.0) throw std::invalid_argument("config: alpha must be positive");
  if (stage1_epochs < 0 || stage2_epochs < 0) throw std::invalid_argument("config: negative epoch count");
  if (lr <= 0.0 || weight_decay < 0.0 || grad_clip < 0.0) throw std::invalid_argument("config: bad optimizer settings");
  if (batch < 1) throw std::invalid_argument("config: batch must be >= 1");
  if (nis_threshold < 0.0 || nis_threshold > 1.0) throw std::invalid_argument("config: nis_threshold in [0,1]");
  if (lr_drop_at <= 0.0 || lr_drop_at > 1.0) throw std::invalid_argument("config: lr_drop_at in (0,1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"lambda1", loss.lambda1},
          {"lambda2", loss.lambda2},
          {"lambda3", loss.lambda3},
          {"no_object_weight", loss.no_object_weight},
          {"alpha", alpha},
          {"stage1_epochs", stage1_epochs},
          {"stage2_epochs", stage2_epochs},
          {"lr", lr},
          {"lr_drop_at", lr_drop_at},
          {"weight_decay", weight_decay},
          {"grad_clip", grad_clip},
          {"batch", batch},
          {"seed", seed},
          {"nis_threshold", nis_threshold},
          {"part_supervision", part_supervision},
          {"border_drop", border_drop},
          {"aux_loss", aux_loss}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.model = ModelConfig::from_json(j.at("model"));
  c.loss.lambda1 = j.at("lambda1").get<double>();
  c.loss.lambda2 = j.at("lambda2").get<double>();
  c.loss.lambda3 = j.at("lambda3").get<double>();
  c.loss.no_object_weight = j.at("no_object_weight").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.stage1_epochs = j.at("stage1_epochs").get<int>();
  c.stage2_epochs = j.at("stage2_epochs").get<int>();
  c.lr = j.at("lr").get<double>();
  c.lr_drop_at = j.at("lr_drop_at").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.grad_clip = j.at("grad_clip").get<double>();
  c.batch = j.at("batch").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.nis_threshold = j.at("nis_threshold").get<double>();
  c.part_supervision = j.at("part_supervision").get<bool>();
  c.border_drop = j.at("border_drop").get<bool>();
  c.aux_loss = j.at("aux_loss").get<bool>();
  return c;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& where) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument(where + ": expected a boolean, got '" + v + "'");
}

double parse_double(const std::string& v, const std::string& where) {
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument(where + ": expected a number, got '" + v + "'");
  return d;
}

long long parse_int(const std::string& v, const std::string& where) {
  std::size_t used = 0;
  long long n = 0;
  try {
    n = std::stoll(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty()) throw std::invalid_argument(where + ": expected an integer, got '" + v + "'");
  return n;
}

}  // namespace

TrainConfig parse_config(const std::string& text, TrainConfig c) {
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = "config line " + std::to_string(number);
    if (eq == std::string::npos) throw std::invalid_argument(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const std::string at = where + " (" + key + ")";
    if (key == "lambda1") c.loss.lambda1 = parse_double(value, at);
    else if (key == "lambda2") c.loss.lambda2 = parse_double(value, at);
    else if (key == "lambda3") c.loss.lambda3 = parse_double(value, at);
    else if (key == "alpha") c.alpha = parse_double(value, at);
    else if (key == "nq") c.model.num_queries = static_cast<int>(parse_int(value, at));
    else if (key == "dc") c.model.dim = static_cast<int>(parse_int(value, at));
    else if (key == "heads") c.model.heads = static_cast<int>(parse_int(value, at));
    else if (key == "ffn") c.model.ffn_hidden = static_cast<int>(parse_int(value, at));
    else if (key == "stage1_epochs") c.stage1_epochs = static_cast<int>(parse_int(value, at));
    else if (key == "stage2_epochs") c.stage2_epochs = static_cast<int>(parse_int(value, at));
    else if (key == "nis_threshold") c.nis_threshold = parse_double(value, at);
    else if (key == "part_supervision") c.part_supervision = parse_bool(value, at);
    else if (key == "border_drop") c.border_drop = parse_bool(value, at);
    else if (key == "aux_loss") c.aux_loss = parse_bool(value, at);
    else if (key == "lr") c.lr = parse_double(value, at);
    else if (key == "weight_decay") c.weight_decay = parse_double(value, at);
    else if (key == "grad_clip") c.grad_clip = parse_double(value, at);
    else if (key == "batch") c.batch = static_cast<int>(parse_int(value, at));
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(parse_int(value, at));
    else if (key == "scheme") c.model.scheme = scheme_from_name(value);
    else if (key == "schedule") c.model.schedule = schedule_from_name(value);
    else if (key == "image_size") c.model.image_size = static_cast<int>(parse_int(value, at));
    else if (key == "grid_size") c.model.grid_size = static_cast<int>(parse_int(value, at));
    else throw std::invalid_argument(where + ": unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

namespace {

std::vector<double> sampler_weights(const std::vector<bool>& crowded, double alpha) {
  if (crowded.empty()) throw std::invalid_argument("sampler: empty dataset");
  if (alpha <= 0.0) throw std::invalid_argument("sampler: alpha must be positive");
  std::vector<double> w;
  w.reserve(crowded.size());
  for (bool c : crowded) w.push_back(c ? alpha : 1.0);
  return w;
}

}  // namespace

SparsitySampler::SparsitySampler(const std::vector<bool>& crowded, double alpha, std::uint64_t seed)
    : rng_(seed) {
  const auto w = sampler_weights(crowded, alpha);
  dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  probabilities_ = dist_.probabilities();
}

std::size_t SparsitySampler::next() { return dist_(rng_); }

std::vector<std::size_t> SparsitySampler::draw(std::size_t count) {
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = next();
  return out;
}

SparsitySampler sparsity_adaptive_sampler(const std::vector<SceneTags>& tags, double alpha, std::uint64_t seed) {
  std::vector<bool> crowded;
  crowded.reserve(tags.size());
  for (const auto& t : tags) crowded.push_back(t.crowded);
  return SparsitySampler(crowded, alpha, seed);
}

AdamW::AdamW(ParamStore& store, std::vector<std::string> prefixes, double weight_decay, double beta1, double beta2,
             double eps)
    : prefixes_(std::move(prefixes)), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : store.entries()) {
    if (!updates(name)) continue;
    slots_.push_back(Slot{var, ad::Matrix::Zero(var.rows(), var.cols()), ad::Matrix::Zero(var.rows(), var.cols())});
  }
}

bool AdamW::updates(const std::string& name) const {
  return std::any_of(prefixes_.begin(), prefixes_.end(),
                     [&](const std::string& p) { return name.rfind(p, 0) == 0; });
}

double AdamW::step(double lr, double clip_norm) {
  double sq = 0.0;
  for (const auto& s : slots_) {
    if (s.param.grad().size() != 0) sq += s.param.grad().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  const double factor = (clip_norm > 0.0 && norm > clip_norm) ? clip_norm / norm : 1.0;
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    ad::Var p = s.param;
    ad::Matrix& value = p.mutable_value();
    value *= 1.0 - lr * weight_decay_;
    if (p.grad().size() == 0) continue;
    const ad::Matrix g = p.grad() * factor;
    s.m = beta1_ * s.m + (1.0 - beta1_) * g;
    s.v = beta2_ * s.v + (1.0 - beta2_) * g.cwiseProduct(g);
    value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
  }
  return norm;
}

TrainSample prepare_sample(const Scene& scene, const ModelConfig& config) {
  const GridSpec spec = config.grid();
  if (scene.annotation.width != spec.image_width || scene.annotation.height != spec.image_height) {
    throw std::invalid_argument("scene " + std::to_string(scene.annotation.id) + " does not match the model image size");
  }
  TrainSample s;
  s.id = scene.annotation.id;
  s.stem = stem_features(scene.image, spec, config.stem_cells);
  s.part_masks = build_part_masks(scene.annotation, spec);
  for (const auto& p : scene.annotation.persons) {
    for (std::size_t k = 0; k < kNumParts; ++k) s.part_boxes[k].insert(s.part_boxes[k].end(), p.parts[k].begin(), p.parts[k].end());
  }
  s.gts = ground_truth_pairs(scene.annotation);
  s.tags = tag_hard_cases(scene.annotation);
  return s;
}

std::vector<TrainSample> prepare_samples(const std::vector<Scene>& scenes, const ModelConfig& config) {
  std::vector<TrainSample> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_sample(s, config));
  return out;
}

nlohmann::json EpochLog::to_json() const {
  return {{"stage", stage},
          {"epoch", epoch},
          {"lr", lr},
          {"loss", loss.to_json()},
          {"sampler", {{"crowded_fraction", crowded_fraction}, {"draws", draws}}},
          {"batches", batches},
          {"mask_fallbacks", mask_fallbacks}};
}

std::vector<std::string> stage_prefixes(int stage) {
  if (stage == 1) return {"enc.", "det.", "int."};
  if (stage == 2) return {"enc.", "det.", "verb."};
  throw std::invalid_argument("stage must be 1 or 2");
}

ad::Var scene_loss(const HoiModel& model, int stage, const TrainSample& sample, const TrainConfig& config,
                   const PartMasks& part_masks, LossReport* report, long long* fallbacks) {
  const FeatureGrid grid = model.encode(sample.stem);
  const DetectorOutput det = model.detect(grid, config.aux_loss);
  if (!det.human_boxes.value().allFinite() || !det.object_boxes.value().allFinite() ||
      !det.class_probs.value().allFinite()) {
    // Matching is undefined; surface it as a non-finite loss for the caller to report.
    return Var::constant(Matrix::Constant(1, 1, std::numeric_limits<double>::quiet_NaN()));
  }
  const auto matching = bipartite_match(det.human_boxes.value(), det.object_boxes.value(), det.class_probs.value(),
                                        sample.gts, config.loss);
  const DetectionLoss dl = detection_loss(det, sample.gts, matching, config.loss);
  LossReport r;
  r.l_b = dl.l_b.scalar();
  r.l_u = dl.l_u.scalar();
  r.l_c = dl.l_c.scalar();
  r.l_det = dl.l_det.scalar();
  ad::Var total = dl.l_det;
  for (const DetectorOutput& aux : det.auxiliary) {
    const auto m = bipartite_match(aux.human_boxes.value(), aux.object_boxes.value(), aux.class_probs.value(),
                                   sample.gts, config.loss);
    total = total + detection_loss(aux, sample.gts, m, config.loss).l_det;
  }
  if (stage == 1) {
    const InteractivenessOutput io = model.interactiveness(grid, det, part_masks);
    if (fallbacks != nullptr) *fallbacks += io.stats.fallback_count;
    const ad::Var l_int = interactiveness_loss(io.interactiveness_logit, sample.gts, matching);
    r.l_int = l_int.scalar();
    total = total + l_int;
    if (config.part_supervision) {
      if (const auto lp = part_loss(io.part_logits, sample.gts, matching)) {
        r.l_part = lp->scalar();
        total = total + *lp;
      }
    }
  } else {
    const ad::Var l_verb = verb_loss(model.verb_logits(grid, det.embeddings), sample.gts, matching);
    r.l_verb = l_verb.scalar();
    total = total + l_verb;
  }
  if (report != nullptr) *report = r;
  return total;
}

namespace {

PartMasks dropped_part_masks(const TrainSample& s, const GridSpec& spec, std::uint64_t seed) {
  PartMasks out = s.part_masks;
  for (std::size_t k = 0; k < kNumParts; ++k) {
    out[k] = border_random_drop(out[k], s.part_boxes[k], spec, derive_seed(seed, k));
  }
  return out;
}

}  // namespace

std::vector<EpochLog> train_stage(HoiModel& model, int stage, const std::vector<TrainSample>& data,
                                  const TrainConfig& config, std::ostream* log) {
  config.validate();
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  const int epochs = stage == 1 ? config.stage1_epochs : config.stage2_epochs;
  AdamW optimizer(model.params(), stage_prefixes(stage), config.weight_decay);
  std::vector<SceneTags> tags;
  for (const auto& s : data) tags.push_back(s.tags);
  SparsitySampler sampler = sparsity_adaptive_sampler(tags, config.alpha, derive_seed(config.seed, 1000 + stage));
  const int drop_epoch = static_cast<int>(std::lround(config.lr_drop_at * epochs));
  const GridSpec spec = model.grid();

  std::vector<EpochLog> history;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    EpochLog entry;
    entry.stage = stage;
    entry.epoch = epoch;
    entry.lr = epoch >= drop_epoch ? config.lr * 0.1 : config.lr;
    const auto order = sampler.draw(data.size());
    int crowded = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(config.batch)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(config.batch));
      const double inv = 1.0 / static_cast<double>(end - b);
      ad::Tape tape;
      ad::Var total;
      LossReport batch_report;
      {
        ad::TapeScope scope(tape);
        for (std::size_t n = b; n < end; ++n) {
          const TrainSample& s = data[order[n]];
          crowded += s.tags.crowded ? 1 : 0;
          const PartMasks masks =
              config.border_drop
                  ? dropped_part_masks(s, spec, derive_seed(config.seed, (static_cast<std::uint64_t>(stage) << 40) ^
                                                                             (static_cast<std::uint64_t>(epoch) << 20) ^ n))
                  : s.part_masks;
          LossReport r;
          const ad::Var l = ad::scale(scene_loss(model, stage, s, config, masks, &r, &entry.mask_fallbacks), inv);
          total = total.defined() ? total + l : l;
          batch_report += r.scaled(inv);
        }
      }
      const int batch_id = static_cast<int>(b / static_cast<std::size_t>(config.batch));
      if (!std::isfinite(total.scalar())) {
        std::string ids;
        for (std::size_t n = b; n < end; ++n) ids += (ids.empty() ? "" : ",") + std::to_string(data[order[n]].id);
        throw TrainingDiverged("non-finite loss in stage " + std::to_string(stage) + ", epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_id) + " (scenes " + ids + ")");
      }
      model.params().zero_grad();
      tape.backward(total);
      optimizer.step(entry.lr, config.grad_clip);
      model.params().zero_grad();
      entry.loss += batch_report;
      ++entry.batches;
    }
    entry.loss = entry.loss.scaled(1.0 / entry.batches);
    entry.draws = static_cast<int>(order.size());
    entry.crowded_fraction = static_cast<double>(crowded) / static_cast<double>(order.size());
    if (log != nullptr) *log << entry.to_json().dump() << '\n';
    history.push_back(entry);
  }
  return history;
}

Checkpoint make_checkpoint(const HoiModel& model, const TrainConfig& config, int stage,
                           const std::vector<EpochLog>& history) {
  nlohmann::json losses = nlohmann::json::array();
  for (const auto& e : history) losses.push_back(e.to_json());
  return Checkpoint::from_params(model.params(), {{"stage", stage}, {"config", config.to_json()}, {"history", losses}});
}

TrainConfig config_from_checkpoint(const Checkpoint& ckpt) { return TrainConfig::from_json(ckpt.meta.at("config")); }

HoiModel model_from_checkpoint(const Checkpoint& ckpt) {
  const TrainConfig config = config_from_checkpoint(ckpt);
  HoiModel model(config.model, ckpt.meta.at("seed").get<std::uint64_t>());
  ckpt.apply_to(model.params());
  return model;
}

}  // namespace hoi

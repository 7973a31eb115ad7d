#include "hoi/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hoi {

GridSpec ModelConfig::grid() const {
  return GridSpec{image_size, image_size, grid_size, grid_size};
}

DecoderConfig ModelConfig::decoder(int depth) const {
  return DecoderConfig{depth, heads, dim, ffn_hidden, 0.0};
}

void ModelConfig::validate() const {
  grid().validate();
  if (image_size % grid_size != 0) throw std::invalid_argument("model: image size must be a multiple of the grid");
  if (stem_cells <= 0 || (image_size / grid_size) % stem_cells != 0) {
    throw std::invalid_argument("model: stem cells must divide the token patch size");
  }
  if (num_queries < 0 || num_object_classes < 1 || num_verbs < 1) {
    throw std::invalid_argument("model: bad query/class/verb counts");
  }
  if (encoder_depth < 0 || detector_depth < 1 || verb_depth < 1 || importance_depth < 1) {
    throw std::invalid_argument("model: bad layer depths");
  }
  if (select_fraction <= 0.0 || select_fraction > 1.0) throw std::invalid_argument("model: select fraction in (0,1]");
  decoder(1).validate();
  if (dim % 4 != 0) throw std::invalid_argument("model: D_c must be a multiple of 4");
}

nlohmann::json ModelConfig::to_json() const {
  return {{"image_size", image_size},
          {"grid_size", grid_size},
          {"stem_cells", stem_cells},
          {"dim", dim},
          {"heads", heads},
          {"ffn_hidden", ffn_hidden},
          {"num_queries", num_queries},
          {"num_object_classes", num_object_classes},
          {"num_verbs", num_verbs},
          {"encoder_depth", encoder_depth},
          {"detector_depth", detector_depth},
          {"verb_depth", verb_depth},
          {"importance_depth", importance_depth},
          {"scheme", scheme_name(scheme)},
          {"schedule", schedule_name(schedule)},
          {"select_fraction", select_fraction}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.grid_size = j.at("grid_size").get<int>();
  c.stem_cells = j.at("stem_cells").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.num_queries = j.at("num_queries").get<int>();
  c.num_object_classes = j.at("num_object_classes").get<int>();
  c.num_verbs = j.at("num_verbs").get<int>();
  c.encoder_depth = j.at("encoder_depth").get<int>();
  c.detector_depth = j.at("detector_depth").get<int>();
  c.verb_depth = j.at("verb_depth").get<int>();
  c.importance_depth = j.at("importance_depth").get<int>();
  c.scheme = scheme_from_name(j.at("scheme").get<std::string>());
  c.schedule = schedule_from_name(j.at("schedule").get<std::string>());
  c.select_fraction = j.at("select_fraction").get<double>();
  c.validate();
  return c;
}

std::string_view scheme_name(InteractivenessScheme scheme) {
  return scheme == InteractivenessScheme::merged ? "merged" : "intuitive";
}

InteractivenessScheme scheme_from_name(std::string_view name) {
  if (name == "merged") return InteractivenessScheme::merged;
  if (name == "intuitive") return InteractivenessScheme::intuitive;
  throw std::invalid_argument("unknown interactiveness scheme: " + std::string(name));
}

std::string_view schedule_name(MaskSchedule schedule) {
  switch (schedule) {
    case MaskSchedule::progressive: return "progressive";
    case MaskSchedule::uniform_part: return "uniform_part";
    case MaskSchedule::all_ones: return "all_ones";
  }
  return "?";
}

MaskSchedule schedule_from_name(std::string_view name) {
  if (name == "progressive") return MaskSchedule::progressive;
  if (name == "uniform_part") return MaskSchedule::uniform_part;
  if (name == "all_ones") return MaskSchedule::all_ones;
  throw std::invalid_argument("unknown mask schedule: " + std::string(name));
}

Matrix stem_features(const Image& image, const GridSpec& spec, int cells) {
  if (image.height != spec.image_height || image.width != spec.image_width) {
    throw std::invalid_argument("stem: image size does not match the grid spec");
  }
  if (image.height % spec.grid_height != 0 || image.width % spec.grid_width != 0) {
    throw std::invalid_argument("stem: image size is not a multiple of the grid");
  }
  const int ph = image.height / spec.grid_height, pw = image.width / spec.grid_width;
  if (cells <= 0 || ph % cells != 0 || pw % cells != 0) throw std::invalid_argument("stem: cells must divide the patch");
  const int ch = ph / cells, cw = pw / cells;
  const double norm = 1.0 / (ch * cw);
  Matrix out = Matrix::Zero(spec.tokens(), 3 * cells * cells);
  for (int x = 0; x < spec.grid_height; ++x) {
    for (int y = 0; y < spec.grid_width; ++y) {
      const int t = x * spec.grid_width + y;
      for (int cx = 0; cx < cells; ++cx) {
        for (int cy = 0; cy < cells; ++cy) {
          const int f = (cx * cells + cy) * 3;
          for (int r = 0; r < ch; ++r) {
            for (int c = 0; c < cw; ++c) {
              const int row = x * ph + cx * ch + r, col = y * pw + cy * cw + c;
              for (int k = 0; k < 3; ++k) out(t, f + k) += image.at(row, col, k);
            }
          }
          for (int k = 0; k < 3; ++k) out(t, f + k) = out(t, f + k) * norm - 0.5;
        }
      }
    }
  }
  return out;
}

Matrix query_reference_points(int queries) {
  Matrix ref(queries, 2);
  const int rows = queries > 1 ? 2 : 1;
  const int cols = (queries + rows - 1) / std::max(rows, 1);
  for (int q = 0; q < queries; ++q) {
    ref(q, 0) = (q / cols + 0.5) / rows;
    ref(q, 1) = (q % cols + 0.5) / cols;
  }
  return ref;
}

namespace {

std::vector<Box> rows_to_boxes(const Matrix& m) {
  std::vector<Box> out;
  out.reserve(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) out.push_back(Box{m(i, 0), m(i, 1), m(i, 2), m(i, 3)});
  return out;
}

}  // namespace

std::vector<Box> DetectorOutput::human_box_values() const { return rows_to_boxes(human_boxes.value()); }
std::vector<Box> DetectorOutput::object_box_values() const { return rows_to_boxes(object_boxes.value()); }

HoiModel::HoiModel(const ModelConfig& config, std::uint64_t seed) : config_(config), store_(seed) {
  config_.validate();
  const GridSpec spec = config_.grid();
  const int d = config_.dim;
  pos_ = sinusoidal_positional_encoding(spec, d);

  const int stem_in = 3 * config_.stem_cells * config_.stem_cells;
  stem_ = Mlp(store_, "enc.stem", {stem_in, d, d});
  for (int l = 0; l < config_.encoder_depth; ++l) {
    encoder_.emplace_back(store_, "enc.l" + std::to_string(l), config_.decoder(1));
  }
  encoder_norm_ = LayerNorm(store_, "enc.norm", d);

  queries_ = store_.create_normal("det.queries", config_.num_queries, d, 1.0);
  reference_ = query_reference_points(config_.num_queries);
  Matrix ref_tokens = reference_ * static_cast<double>(config_.grid_size);
  ref_tokens.array() -= 0.5;
  query_pos_ = sinusoidal_point_encoding(ref_tokens, d);
  const auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  human_anchor_ = store_.create_constant("det.anchor.human", config_.num_queries, 4, 0.0);
  object_anchor_ = store_.create_constant("det.anchor.object", config_.num_queries, 4, 0.0);
  for (int q = 0; q < config_.num_queries; ++q) {
    const double row = logit(reference_(q, 0)), col = logit(reference_(q, 1));
    human_anchor_.mutable_value().row(q) << col, row, logit(0.25), logit(0.6);
    object_anchor_.mutable_value().row(q) << col, row, logit(0.2), logit(0.2);
  }
  detector_ = Decoder(store_, "det.dec", config_.decoder(config_.detector_depth));
  human_head_ = PredictionHead(store_, "det.human", HeadKind::human_box, d, 4, 2);
  object_head_ = PredictionHead(store_, "det.object", HeadKind::object_box, d, 4, 2);
  class_head_ = PredictionHead(store_, "det.class", HeadKind::object_class, d, config_.num_object_classes + 1, 0);

  InteractivenessConfig ic;
  ic.decoder = config_.decoder(3);
  ic.importance_depth = config_.importance_depth;
  ic.select_fraction = config_.select_fraction;
  ic.scheme = config_.scheme;
  ic.schedule = config_.schedule;
  int_head_ = InteractivenessHead(store_, "int", ic);

  verb_decoder_ = Decoder(store_, "verb.dec", config_.decoder(config_.verb_depth));
  verb_head_ = PredictionHead(store_, "verb.head", HeadKind::verb, d, config_.num_verbs, 1);
}

Var HoiModel::stem_embed(const Matrix& stem) const {
  if (stem.rows() != grid().tokens()) throw std::invalid_argument("encoder: stem token count mismatch");
  return stem_(Var::constant(stem));
}

FeatureGrid HoiModel::encode(const Matrix& stem) const {
  Var x = ad::add(stem_embed(stem), Var::constant(pos_));
  for (const auto& layer : encoder_) x = layer.forward(x, pos_);
  const GridSpec spec = grid();
  return FeatureGrid{encoder_norm_(x), pos_, spec.grid_height, spec.grid_width};
}

FeatureGrid HoiModel::inject(const Matrix& features) const {
  const GridSpec spec = grid();
  if (features.rows() != spec.tokens() || features.cols() != config_.dim) {
    throw std::invalid_argument("inject: features must be tokens x D_c");
  }
  return FeatureGrid{Var::constant(features), pos_, spec.grid_height, spec.grid_width};
}

DetectorOutput HoiModel::detector_heads(const Var& embeddings) const {
  DetectorOutput out;
  out.embeddings = embeddings;
  out.human_boxes = PredictionHead::squash(HeadKind::human_box, ad::add(human_head_.logits(embeddings), human_anchor_));
  out.object_boxes =
      PredictionHead::squash(HeadKind::object_box, ad::add(object_head_.logits(embeddings), object_anchor_));
  out.class_logits = class_head_.logits(embeddings);
  out.class_probs = ad::softmax_rows(out.class_logits);
  return out;
}

DetectorOutput HoiModel::detect(const FeatureGrid& grid, bool auxiliary) const {
  std::vector<Var> earlier;
  DetectorOutput out = detector_heads(
      detector_.forward(queries_, grid, {}, Matrix(), nullptr, nullptr, "detector", auxiliary ? &earlier : nullptr,
                        query_pos_));
  for (const Var& e : earlier) out.auxiliary.push_back(detector_heads(e));
  return out;
}

Var HoiModel::verb_logits(const FeatureGrid& grid, const Var& decoded) const {
  const Var v = verb_decoder_.forward(decoded, grid, {}, Matrix(), nullptr, nullptr, "verb");
  return verb_head_.logits(v);
}

std::vector<LayeredMasks> HoiModel::proposal_masks(const DetectorOutput& det, const PartMasks& part_masks) const {
  return proposal_layer_masks(config_.schedule, part_masks, det.human_box_values(), det.object_box_values(), grid());
}

InteractivenessOutput HoiModel::interactiveness(const FeatureGrid& grid, const DetectorOutput& det,
                                                const PartMasks& part_masks, bool fallback,
                                                AttentionTrace* trace) const {
  return int_head_.run(grid, det.embeddings, proposal_masks(det, part_masks), fallback, trace);
}

}  // namespace hoi

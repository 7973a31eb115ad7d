#include "hoi/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace hoi {

void DecoderConfig::validate() const {
  if (depth < 0 || heads <= 0 || dim <= 0 || ffn_hidden <= 0) {
    throw std::invalid_argument("DecoderConfig: sizes must be positive");
  }
  if (dim % heads != 0) throw std::invalid_argument("DecoderConfig: dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("DecoderConfig: dropout in [0,1)");
}

Matrix mask_matrix(const std::vector<TokenMask>& per_query) {
  if (per_query.empty()) return Matrix(0, 0);
  const int tokens = per_query.front().size();
  Matrix m(static_cast<Eigen::Index>(per_query.size()), tokens);
  for (std::size_t i = 0; i < per_query.size(); ++i) {
    if (per_query[i].size() != tokens) throw std::invalid_argument("mask_matrix: token count mismatch");
    for (int t = 0; t < tokens; ++t) m(static_cast<Eigen::Index>(i), t) = per_query[i].flat(t) ? 1.0 : 0.0;
  }
  return m;
}

Matrix mask_matrix(const TokenMask& shared, int queries) {
  return mask_matrix(std::vector<TokenMask>(static_cast<std::size_t>(queries), shared));
}

Matrix apply_empty_mask_policy(const Matrix& mask, AttentionStats* stats, const std::string& where) {
  if (mask.size() == 0) return mask;
  Matrix out = mask;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    if (out.row(i).sum() > 0.0) continue;
    if (stats != nullptr && !stats->fallback_enabled) {
      throw std::runtime_error("empty attention mask at " + where + ", query " + std::to_string(i) +
                               " (fallback disabled)");
    }
    out.row(i).setOnes();
    if (stats != nullptr) ++stats->fallback_count;
  }
  return out;
}

Var masked_attention(const Var& queries, const Var& keys, const Var& values, const Matrix& mask,
                     Matrix* weights_out) {
  if (queries.cols() != keys.cols()) throw std::invalid_argument("masked_attention: q/k width mismatch");
  if (keys.rows() != values.rows()) throw std::invalid_argument("masked_attention: k/v count mismatch");
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  Var logits = ad::scale(ad::matmul_bt(queries, keys), scale);
  Var weights = ad::masked_softmax_rows(logits, mask);
  if (weights_out != nullptr) *weights_out = weights.value();
  return ad::matmul(weights, values);
}

Matrix sinusoidal_point_encoding(const Matrix& points, int dim) {
  if (dim <= 0 || dim % 4 != 0) {
    throw std::invalid_argument("positional encoding: D_c must be a positive multiple of 4");
  }
  if (points.cols() != 2) throw std::invalid_argument("positional encoding: points must be N x 2");
  const int half = dim / 2;
  const int freqs = dim / 4;
  Matrix pos(points.rows(), dim);
  for (Eigen::Index t = 0; t < points.rows(); ++t) {
    const double x = points(t, 0), y = points(t, 1);
    for (int i = 0; i < freqs; ++i) {
      const double f = std::pow(10000.0, -static_cast<double>(2 * i) / half);
      pos(t, 2 * i) = std::sin(x * f);
      pos(t, 2 * i + 1) = std::cos(x * f);
      pos(t, half + 2 * i) = std::sin(y * f);
      pos(t, half + 2 * i + 1) = std::cos(y * f);
    }
  }
  return pos;
}

Matrix sinusoidal_positional_encoding(const GridSpec& spec, int dim) {
  spec.validate();
  Matrix points(spec.tokens(), 2);
  for (int x = 0; x < spec.grid_height; ++x) {
    for (int y = 0; y < spec.grid_width; ++y) points.row(x * spec.grid_width + y) << x, y;
  }
  return sinusoidal_point_encoding(points, dim);
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out)
    : weight(store.create_weight(name + ".w", in, out)),
      bias(store.create_constant(name + ".b", 1, out, 0.0)) {}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim)
    : gain(store.create_constant(name + ".g", 1, dim, 1.0)),
      bias(store.create_constant(name + ".b", 1, dim, 0.0)) {}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, int dim, int heads)
    : heads_(heads),
      q_(store, name + ".q", dim, dim),
      k_(store, name + ".k", dim, dim),
      v_(store, name + ".v", dim, dim),
      out_(store, name + ".o", dim, dim) {
  if (heads <= 0 || dim % heads != 0) throw std::invalid_argument("attention: dim % heads != 0");
}

Var MultiHeadAttention::forward(const Var& query_in, const Var& key_in, const Var& value_in,
                                const Matrix& mask, Matrix* mean_weights) const {
  const Var q = q_(query_in), k = k_(key_in), v = v_(value_in);
  const auto head_dim = q.cols() / heads_;
  std::vector<Var> outputs;
  outputs.reserve(static_cast<std::size_t>(heads_));
  Matrix weights;
  if (mean_weights != nullptr) *mean_weights = Matrix::Zero(q.rows(), k.rows());
  for (int h = 0; h < heads_; ++h) {
    const auto off = h * head_dim;
    outputs.push_back(masked_attention(ad::slice_cols(q, off, head_dim), ad::slice_cols(k, off, head_dim),
                                       ad::slice_cols(v, off, head_dim), mask,
                                       mean_weights != nullptr ? &weights : nullptr));
    if (mean_weights != nullptr) *mean_weights += weights / heads_;
  }
  return out_(heads_ == 1 ? outputs.front() : ad::concat_cols(outputs));
}

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<int>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp: needs input and output widths");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1]);
  }
}

Var Mlp::operator()(const Var& x) const {
  Var h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i](h);
    if (i + 1 < layers.size()) h = ad::relu(h);
  }
  return h;
}

DecoderLayer::DecoderLayer(ParamStore& store, const std::string& name, const DecoderConfig& config)
    : norm_self_(store, name + ".ln1", config.dim),
      norm_cross_(store, name + ".ln2", config.dim),
      norm_ffn_(store, name + ".ln3", config.dim),
      self_attn_(store, name + ".sa", config.dim, config.heads),
      cross_attn_(store, name + ".ca", config.dim, config.heads),
      ffn_(store, name + ".ffn", {config.dim, config.ffn_hidden, config.dim}) {}

Var DecoderLayer::forward(const Var& queries, const FeatureGrid& grid, const Matrix& cross_mask,
                          const Matrix& self_mask, AttentionStats* stats, AttentionTrace* trace,
                          const std::string& where, const Matrix& query_pos) const {
  if (queries.rows() == 0) return queries;
  if (queries.cols() != grid.dim()) throw std::invalid_argument(where + ": query width != D_c");
  if (query_pos.size() != 0 && (query_pos.rows() != queries.rows() || query_pos.cols() != queries.cols())) {
    throw std::invalid_argument(where + ": query position shape mismatch");
  }
  const auto with_pos = [&](const Var& v) { return query_pos.size() == 0 ? v : ad::add(v, Var::constant(query_pos)); };
  if (cross_mask.size() != 0 &&
      (cross_mask.rows() != queries.rows() || cross_mask.cols() != grid.tokens())) {
    throw std::invalid_argument(where + ": cross-attention mask shape mismatch");
  }

  Var t = queries;
  const Var s = norm_self_(t);
  const Var sq = with_pos(s);
  t = ad::add(t, self_attn_.forward(sq, sq, s, self_mask));

  const Matrix mask = apply_empty_mask_policy(cross_mask, stats, where);
  if (stats != nullptr) {
    stats->token_ops += mask.size() == 0 ? static_cast<long long>(queries.rows()) * grid.tokens()
                                         : static_cast<long long>(mask.sum());
  }
  const Var keys = ad::add(grid.values, Var::constant(grid.pos));
  Matrix weights;
  t = ad::add(t, cross_attn_.forward(with_pos(norm_cross_(t)), keys, grid.values, mask,
                                     trace != nullptr ? &weights : nullptr));
  if (trace != nullptr) trace->weights.push_back(std::move(weights));

  return ad::add(t, ffn_(norm_ffn_(t)));
}

Decoder::Decoder(ParamStore& store, const std::string& name, const DecoderConfig& config)
    : final_norm_(store, name + ".norm", config.dim) {
  config.validate();
  for (int l = 0; l < config.depth; ++l) {
    layers_.emplace_back(store, name + ".l" + std::to_string(l), config);
  }
}

Var Decoder::forward(const Var& queries, const FeatureGrid& grid, const std::vector<Matrix>& cross_masks,
                     const Matrix& self_mask, AttentionStats* stats, AttentionTrace* trace,
                     const std::string& where, std::vector<Var>* intermediate,
                     const Matrix& query_pos) const {
  if (!cross_masks.empty() && cross_masks.size() != layers_.size()) {
    throw std::invalid_argument(where + ": need one mask per decoder layer");
  }
  if (queries.rows() == 0) return queries;
  Var t = queries;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    t = layers_[l].forward(t, grid, cross_masks.empty() ? Matrix() : cross_masks[l], self_mask, stats,
                           trace, where + "/layer" + std::to_string(l + 1), query_pos);
    if (intermediate != nullptr && l + 1 < layers_.size()) intermediate->push_back(final_norm_(t));
  }
  return final_norm_(t);
}

EncoderLayer::EncoderLayer(ParamStore& store, const std::string& name, const DecoderConfig& config)
    : norm_attn_(store, name + ".ln1", config.dim),
      norm_ffn_(store, name + ".ln2", config.dim),
      attn_(store, name + ".sa", config.dim, config.heads),
      ffn_(store, name + ".ffn", {config.dim, config.ffn_hidden, config.dim}) {}

Var EncoderLayer::forward(const Var& tokens, const Matrix& pos) const {
  const Var n = norm_attn_(tokens);
  const Var qk = ad::add(n, Var::constant(pos));
  Var x = ad::add(tokens, attn_.forward(qk, qk, n, Matrix()));
  return ad::add(x, ffn_(norm_ffn_(x)));
}

PredictionHead::PredictionHead(ParamStore& store, const std::string& name, HeadKind kind, int dim,
                               int outputs, int hidden_layers)
    : kind_(kind) {
  std::vector<int> widths(static_cast<std::size_t>(hidden_layers) + 1, dim);
  widths.push_back(outputs);
  mlp_ = Mlp(store, name, widths);
}

Var PredictionHead::squash(HeadKind kind, const Var& raw) {
  switch (kind) {
    case HeadKind::human_box:
    case HeadKind::object_box: {
      if (raw.cols() != 4) throw std::invalid_argument("box head needs 4 raw outputs");
      const Var s = ad::sigmoid(raw);
      const Var pw = ad::slice_cols(s, 0, 1), ph = ad::slice_cols(s, 1, 1);
      const Var sw = ad::slice_cols(s, 2, 1), sh = ad::slice_cols(s, 3, 1);
      const Var w1 = ad::sub(pw, ad::mul(pw, sw));
      const Var h1 = ad::sub(ph, ad::mul(ph, sh));
      return ad::concat_cols({w1, h1, ad::add(w1, sw), ad::add(h1, sh)});
    }
    case HeadKind::object_class:
      return ad::softmax_rows(raw);
    case HeadKind::verb:
    case HeadKind::interactiveness:
    case HeadKind::part_score:
      return ad::sigmoid(raw);
  }
  throw std::invalid_argument("unknown head kind");
}

}  // namespace hoi

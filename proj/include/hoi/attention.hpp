// Masked attention, transformer layers, positional encodings and prediction heads.
#pragma once

#include "hoi/autodiff.hpp"
#include "hoi/mask_geometry.hpp"
#include "hoi/params.hpp"

#include <random>
#include <string>
#include <vector>

namespace hoi {

using ad::Matrix;
using ad::Var;

// Encoder output z (tokens × D_c, row t = x·W + y) and its positional encoding.
struct FeatureGrid {
  Var values;
  Matrix pos;
  int height = 0;
  int width = 0;

  int tokens() const { return height * width; }
  int dim() const { return static_cast<int>(pos.cols()); }
};

struct DecoderConfig {
  int depth = 3;
  int heads = 4;
  int dim = 64;
  int ffn_hidden = 256;
  double dropout = 0.0;

  void validate() const;
};

// Shared by every attention call of one forward pass.
struct AttentionStats {
  bool fallback_enabled = true;
  int fallback_count = 0;
  // Σ over cross-attention calls of active tokens per query row.
  long long token_ops = 0;
};

// Optional capture of head-averaged cross-attention weights, one matrix per layer call.
struct AttentionTrace {
  std::vector<Matrix> weights;
};

// One row per query, one column per token: 1 active, 0 masked.
Matrix mask_matrix(const std::vector<TokenMask>& per_query);
Matrix mask_matrix(const TokenMask& shared, int queries);

// Replaces all-zero rows with all-ones (counting them in stats) or throws
// when fallback is disabled. `where` names the call site in the error.
Matrix apply_empty_mask_policy(const Matrix& mask, AttentionStats* stats, const std::string& where);

// softmax(q·kᵀ/√d) · v with masked logits replaced by -2^32+1; d = q.cols().
// `weights_out` receives the attention matrix when non-null.
Var masked_attention(const Var& queries, const Var& keys, const Var& values, const Matrix& mask,
                     Matrix* weights_out = nullptr);

// 2-D sine/cosine encoding: the first D/2 channels encode the row, the rest the column.
Matrix sinusoidal_positional_encoding(const GridSpec& spec, int dim);
// The same encoding at arbitrary (row, column) points given in token units, one point per row.
Matrix sinusoidal_point_encoding(const Matrix& points, int dim);

struct Linear {
  Var weight;  // in × out
  Var bias;    // 1 × out

  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out);
  Var operator()(const Var& x) const { return ad::add_row(ad::matmul(x, weight), bias); }
};

struct LayerNorm {
  Var gain;
  Var bias;

  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Var operator()(const Var& x) const { return ad::layer_norm_rows(x, gain, bias); }
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int dim, int heads);

  Var forward(const Var& query_in, const Var& key_in, const Var& value_in, const Matrix& mask,
              Matrix* mean_weights = nullptr) const;

 private:
  int heads_ = 1;
  Linear q_, k_, v_, out_;
};

struct Mlp {
  std::vector<Linear> layers;  // ReLU between layers

  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<int>& widths);
  Var operator()(const Var& x) const;
};

// Pre-norm decoder layer: query self-attention, masked cross-attention, FFN.
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParamStore& store, const std::string& name, const DecoderConfig& config);

  // cross_mask: queries × tokens (empty = unmasked). self_mask: queries × queries
  // (empty = unmasked); used to keep stacked independent passes apart.
  // query_pos (empty = none) is added to the queries wherever they act as attention queries or self-attention keys.
  Var forward(const Var& queries, const FeatureGrid& grid, const Matrix& cross_mask,
              const Matrix& self_mask, AttentionStats* stats, AttentionTrace* trace,
              const std::string& where, const Matrix& query_pos = Matrix()) const;

 private:
  LayerNorm norm_self_, norm_cross_, norm_ffn_;
  MultiHeadAttention self_attn_, cross_attn_;
  Mlp ffn_;
};

class Decoder {
 public:
  Decoder() = default;
  Decoder(ParamStore& store, const std::string& name, const DecoderConfig& config);

  // cross_masks has one entry per layer, or is empty for an unmasked decoder.
  Var forward(const Var& queries, const FeatureGrid& grid, const std::vector<Matrix>& cross_masks,
              const Matrix& self_mask = Matrix(), AttentionStats* stats = nullptr,
              AttentionTrace* trace = nullptr, const std::string& where = "decoder",
              std::vector<Var>* intermediate = nullptr, const Matrix& query_pos = Matrix()) const;
  int depth() const { return static_cast<int>(layers_.size()); }

 private:
  std::vector<DecoderLayer> layers_;
  LayerNorm final_norm_;
};

class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParamStore& store, const std::string& name, const DecoderConfig& config);
  Var forward(const Var& tokens, const Matrix& pos) const;

 private:
  LayerNorm norm_attn_, norm_ffn_;
  MultiHeadAttention attn_;
  Mlp ffn_;
};

enum class HeadKind { human_box, object_box, object_class, verb, interactiveness, part_score };

// FFN head plus its output squashing.
class PredictionHead {
 public:
  PredictionHead() = default;
  PredictionHead(ParamStore& store, const std::string& name, HeadKind kind, int dim, int outputs,
                 int hidden_layers);

  HeadKind kind() const { return kind_; }
  Var logits(const Var& embeddings) const { return mlp_(embeddings); }
  Var predict(const Var& embeddings) const { return squash(kind_, logits(embeddings)); }

  // Box kinds map 4 raw values (pos_w, pos_h, size_w, size_h) to corners
  // [w1, h1, w2, h2] = [p_w(1-s_w), p_h(1-s_h), w1+s_w, h1+s_h] with p, s = sigmoid(raw),
  // which keeps every box valid and inside [0,1].
  static Var squash(HeadKind kind, const Var& raw);

 private:
  HeadKind kind_ = HeadKind::verb;
  Mlp mlp_;
};

}  // namespace hoi

// Token-grid masks built from body-part, human and object boxes.
#pragma once

#include "hoi/annotation.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hoi {

// Image size in pixels plus the token grid it is downsampled to.
struct GridSpec {
  int image_height = 256;
  int image_width = 256;
  int grid_height = 8;
  int grid_width = 8;

  static GridSpec with_factor(int image_height, int image_width, int factor = 32);

  double row_scale() const { return static_cast<double>(image_height) / grid_height; }
  double col_scale() const { return static_cast<double>(image_width) / grid_width; }
  int tokens() const { return grid_height * grid_width; }
  void validate() const;

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

// Binary H×W mask, row-major; 1 marks a token that takes part in attention.
class TokenMask {
 public:
  TokenMask() = default;
  TokenMask(int rows, int cols, bool value = false);

  static TokenMask ones(const GridSpec& spec) { return {spec.grid_height, spec.grid_width, true}; }
  static TokenMask zeros(const GridSpec& spec) { return {spec.grid_height, spec.grid_width, false}; }
  static TokenMask from_rows(const std::vector<std::vector<int>>& rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool at(int x, int y) const { return bits_[static_cast<std::size_t>(x * cols_ + y)] != 0; }
  void set(int x, int y, bool v) { bits_[static_cast<std::size_t>(x * cols_ + y)] = v ? 1 : 0; }
  bool flat(int t) const { return bits_[static_cast<std::size_t>(t)] != 0; }
  int count() const;
  bool any() const { return count() > 0; }
  bool all() const { return count() == size(); }
  // True when every active token of *this is also active in other.
  bool subset_of(const TokenMask& other) const;
  std::span<const std::uint8_t> bits() const { return bits_; }

  friend bool operator==(const TokenMask&, const TokenMask&) = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

TokenMask mask_max(const TokenMask& a, const TokenMask& b);
TokenMask mask_min(const TokenMask& a, const TokenMask& b);
// Pointwise max(a - b, 0).
TokenMask mask_subtract(const TokenMask& a, const TokenMask& b);

using PartMasks = std::array<TokenMask, kNumParts>;
// layered[j][k]: layer j (0-based), part k.
using LayeredMasks = std::array<PartMasks, 3>;
using MergedMasks = std::array<TokenMask, 3>;

// Which masks the interactiveness decoder layers see.
enum class MaskSchedule {
  progressive,   // other humans + part + object → part + object → own part + object
  uniform_part,  // body-part saliency map m_part^k in every layer
  all_ones,      // no masking at all
};

struct ProgressiveMasks {
  TokenMask other_humans;
  LayeredMasks layered;
};

// Cell (x, y) is active iff h1 ≤ x·H0/H ≤ h2 and w1 ≤ y·W0/W ≤ w2; the box
// is clamped to the image first.
TokenMask rasterize_box(const Box& box, const GridSpec& spec);

// Union over all persons of each part's boxes.
PartMasks build_part_masks(const SceneAnnotation& scene, const GridSpec& spec);

// Human/object masks from a proposal's normalized boxes.
std::pair<TokenMask, TokenMask> build_instance_masks(const Box& human_normalized,
                                                     const Box& object_normalized,
                                                     const GridSpec& spec);

ProgressiveMasks build_progressive_masks(const PartMasks& part_masks, const TokenMask& human,
                                         const TokenMask& object);

// Applies an ablation schedule on top of build_progressive_masks.
LayeredMasks schedule_masks(MaskSchedule schedule, const PartMasks& part_masks,
                            const TokenMask& human, const TokenMask& object);

// Union of the selected parts' masks per layer. Throws std::invalid_argument
// if no part is selected.
MergedMasks merge_masks(const LayeredMasks& layered, const std::array<bool, kNumParts>& selection);

// Fraction of token (x, y)'s pixel footprint covered by box.
double token_overlap(int x, int y, const Box& box, const GridSpec& spec);

// Keeps tokens fully inside some box; keeps each border token with
// probability equal to its largest fractional overlap with any box.
TokenMask border_random_drop(const TokenMask& mask, std::span<const Box> boxes,
                             const GridSpec& spec, std::uint64_t seed);

// Per-proposal masks for one scene.
struct ProposalMasks {
  TokenMask human;
  TokenMask object;
  TokenMask other_humans;
  LayeredMasks layered;
  MergedMasks merged;
};

struct MaskStack {
  PartMasks part_masks;
  std::vector<ProposalMasks> proposals;
};

nlohmann::json to_json(const TokenMask& mask);
TokenMask token_mask_from_json(const nlohmann::json& j);
nlohmann::json to_json(const MaskStack& stack);
MaskStack mask_stack_from_json(const nlohmann::json& j);

// Compact binary form: uint16 rows, uint16 cols, then row-major bits packed LSB-first.
std::vector<std::uint8_t> pack_mask(const TokenMask& mask);
TokenMask unpack_mask(std::span<const std::uint8_t> bytes);

}  // namespace hoi

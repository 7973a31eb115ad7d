#include "hoi/mask_geometry.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace hoi {

GridSpec GridSpec::with_factor(int image_height, int image_width, int factor) {
  if (factor <= 0) throw std::invalid_argument("GridSpec: factor must be positive");
  GridSpec spec{image_height, image_width, image_height / factor, image_width / factor};
  spec.validate();
  return spec;
}

void GridSpec::validate() const {
  if (image_height <= 0 || image_width <= 0 || grid_height <= 0 || grid_width <= 0) {
    throw std::invalid_argument("GridSpec: image and grid sizes must be positive");
  }
}

TokenMask::TokenMask(int rows, int cols, bool value)
    : rows_(rows), cols_(cols), bits_(static_cast<std::size_t>(rows * cols), value ? 1 : 0) {
  if (rows < 0 || cols < 0) throw std::invalid_argument("TokenMask: negative shape");
}

TokenMask TokenMask::from_rows(const std::vector<std::vector<int>>& rows) {
  const int h = static_cast<int>(rows.size());
  const int w = h ? static_cast<int>(rows.front().size()) : 0;
  TokenMask m(h, w);
  for (int x = 0; x < h; ++x) {
    if (static_cast<int>(rows[x].size()) != w) throw std::invalid_argument("TokenMask: ragged rows");
    for (int y = 0; y < w; ++y) m.set(x, y, rows[x][y] != 0);
  }
  return m;
}

int TokenMask::count() const {
  return static_cast<int>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool TokenMask::subset_of(const TokenMask& other) const {
  if (rows_ != other.rows_ || cols_ != other.cols_) return false;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] && !other.bits_[i]) return false;
  }
  return true;
}

namespace {

template <class Op>
TokenMask combine(const TokenMask& a, const TokenMask& b, Op op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("TokenMask: shape mismatch");
  }
  TokenMask out(a.rows(), a.cols());
  for (int x = 0; x < a.rows(); ++x) {
    for (int y = 0; y < a.cols(); ++y) out.set(x, y, op(int{a.at(x, y)}, int{b.at(x, y)}) > 0);
  }
  return out;
}

}  // namespace

TokenMask mask_max(const TokenMask& a, const TokenMask& b) {
  return combine(a, b, [](int p, int q) { return std::max(p, q); });
}

TokenMask mask_min(const TokenMask& a, const TokenMask& b) {
  return combine(a, b, [](int p, int q) { return std::min(p, q); });
}

TokenMask mask_subtract(const TokenMask& a, const TokenMask& b) {
  return combine(a, b, [](int p, int q) { return std::max(p - q, 0); });
}

TokenMask rasterize_box(const Box& box, const GridSpec& spec) {
  spec.validate();
  TokenMask mask = TokenMask::zeros(spec);
  const Box b = box.clamped(spec.image_width, spec.image_height);
  if (b.w2 < b.w1 || b.h2 < b.h1) return mask;
  const double sh = spec.row_scale(), sw = spec.col_scale();
  for (int x = 0; x < spec.grid_height; ++x) {
    const double px = x * sh;
    if (px < b.h1 || px > b.h2) continue;
    for (int y = 0; y < spec.grid_width; ++y) {
      const double py = y * sw;
      if (py >= b.w1 && py <= b.w2) mask.set(x, y, true);
    }
  }
  return mask;
}

PartMasks build_part_masks(const SceneAnnotation& scene, const GridSpec& spec) {
  PartMasks masks;
  masks.fill(TokenMask::zeros(spec));
  for (const Person& person : scene.persons) {
    for (std::size_t k = 0; k < kNumParts; ++k) {
      for (const Box& b : person.parts[k]) masks[k] = mask_max(masks[k], rasterize_box(b, spec));
    }
  }
  return masks;
}

std::pair<TokenMask, TokenMask> build_instance_masks(const Box& human_normalized,
                                                     const Box& object_normalized,
                                                     const GridSpec& spec) {
  const double w = spec.image_width, h = spec.image_height;
  return {rasterize_box(human_normalized.unnormalized(w, h), spec),
          rasterize_box(object_normalized.unnormalized(w, h), spec)};
}

ProgressiveMasks build_progressive_masks(const PartMasks& part_masks, const TokenMask& human,
                                         const TokenMask& object) {
  TokenMask any_part = part_masks[0];
  for (std::size_t k = 1; k < kNumParts; ++k) any_part = mask_max(any_part, part_masks[k]);

  ProgressiveMasks out;
  out.other_humans = mask_subtract(any_part, human);
  for (std::size_t k = 0; k < kNumParts; ++k) {
    const TokenMask& part = part_masks[k];
    out.layered[0][k] = mask_max(mask_max(out.other_humans, part), object);
    out.layered[1][k] = mask_max(part, object);
    out.layered[2][k] = mask_max(mask_min(part, human), object);
  }
  return out;
}

LayeredMasks schedule_masks(MaskSchedule schedule, const PartMasks& part_masks,
                            const TokenMask& human, const TokenMask& object) {
  switch (schedule) {
    case MaskSchedule::progressive:
      return build_progressive_masks(part_masks, human, object).layered;
    case MaskSchedule::uniform_part: {
      LayeredMasks out;
      out.fill(part_masks);
      return out;
    }
    case MaskSchedule::all_ones: {
      LayeredMasks out;
      for (auto& layer : out) layer.fill(TokenMask(human.rows(), human.cols(), true));
      return out;
    }
  }
  throw std::invalid_argument("schedule_masks: unknown schedule");
}

MergedMasks merge_masks(const LayeredMasks& layered, const std::array<bool, kNumParts>& selection) {
  if (std::none_of(selection.begin(), selection.end(), [](bool b) { return b; })) {
    throw std::invalid_argument("merge_masks: empty part selection (every proposal needs one part)");
  }
  MergedMasks merged;
  for (std::size_t j = 0; j < layered.size(); ++j) {
    const TokenMask& ref = layered[j][0];
    merged[j] = TokenMask(ref.rows(), ref.cols());
    for (std::size_t k = 0; k < kNumParts; ++k) {
      if (selection[k]) merged[j] = mask_max(merged[j], layered[j][k]);
    }
  }
  return merged;
}

double token_overlap(int x, int y, const Box& box, const GridSpec& spec) {
  const double sh = spec.row_scale(), sw = spec.col_scale();
  const Box cell{y * sw, x * sh, (y + 1) * sw, (x + 1) * sh};
  return intersection_area(cell, box.clamped(spec.image_width, spec.image_height)) / (sh * sw);
}

TokenMask border_random_drop(const TokenMask& mask, std::span<const Box> boxes,
                             const GridSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TokenMask out = mask;
  for (int x = 0; x < mask.rows(); ++x) {
    for (int y = 0; y < mask.cols(); ++y) {
      if (!mask.at(x, y)) continue;
      double best = 0.0;
      for (const Box& b : boxes) best = std::max(best, token_overlap(x, y, b, spec));
      const double u = unit(rng);
      if (best >= 1.0) continue;
      out.set(x, y, u < best);
    }
  }
  return out;
}

nlohmann::json to_json(const TokenMask& mask) {
  std::string bits(static_cast<std::size_t>(mask.size()), '0');
  for (int t = 0; t < mask.size(); ++t) bits[static_cast<std::size_t>(t)] = mask.flat(t) ? '1' : '0';
  return {{"shape", {mask.rows(), mask.cols()}}, {"bits", bits}};
}

TokenMask token_mask_from_json(const nlohmann::json& j) {
  const int rows = j.at("shape").at(0).get<int>();
  const int cols = j.at("shape").at(1).get<int>();
  const auto bits = j.at("bits").get<std::string>();
  if (static_cast<int>(bits.size()) != rows * cols) {
    throw std::invalid_argument("token mask: bit string length does not match shape");
  }
  TokenMask m(rows, cols);
  for (int t = 0; t < rows * cols; ++t) {
    const char c = bits[static_cast<std::size_t>(t)];
    if (c != '0' && c != '1') throw std::invalid_argument("token mask: bits must be '0'/'1'");
    m.set(t / cols, t % cols, c == '1');
  }
  return m;
}

nlohmann::json to_json(const MaskStack& stack) {
  nlohmann::json parts = nlohmann::json::object();
  for (Part p : kAllParts) parts[std::string(part_name(p))] = to_json(stack.part_masks[index(p)]);
  nlohmann::json proposals = nlohmann::json::array();
  for (const ProposalMasks& pm : stack.proposals) {
    nlohmann::json layers = nlohmann::json::array();
    for (const PartMasks& layer : pm.layered) {
      nlohmann::json row = nlohmann::json::array();
      for (const TokenMask& m : layer) row.push_back(to_json(m));
      layers.push_back(std::move(row));
    }
    nlohmann::json merged = nlohmann::json::array();
    for (const TokenMask& m : pm.merged) merged.push_back(to_json(m));
    proposals.push_back({{"human", to_json(pm.human)},
                         {"object", to_json(pm.object)},
                         {"other_humans", to_json(pm.other_humans)},
                         {"layers", std::move(layers)},
                         {"merged", std::move(merged)}});
  }
  return {{"parts", std::move(parts)}, {"proposals", std::move(proposals)}};
}

MaskStack mask_stack_from_json(const nlohmann::json& j) {
  MaskStack stack;
  for (Part p : kAllParts) {
    stack.part_masks[index(p)] = token_mask_from_json(j.at("parts").at(std::string(part_name(p))));
  }
  for (const auto& pj : j.at("proposals")) {
    ProposalMasks pm;
    pm.human = token_mask_from_json(pj.at("human"));
    pm.object = token_mask_from_json(pj.at("object"));
    pm.other_humans = token_mask_from_json(pj.at("other_humans"));
    for (std::size_t l = 0; l < pm.layered.size(); ++l) {
      for (std::size_t k = 0; k < kNumParts; ++k) {
        pm.layered[l][k] = token_mask_from_json(pj.at("layers").at(l).at(k));
      }
      pm.merged[l] = token_mask_from_json(pj.at("merged").at(l));
    }
    stack.proposals.push_back(std::move(pm));
  }
  return stack;
}

std::vector<std::uint8_t> pack_mask(const TokenMask& mask) {
  std::vector<std::uint8_t> out(4 + static_cast<std::size_t>((mask.size() + 7) / 8), 0);
  out[0] = static_cast<std::uint8_t>(mask.rows() & 0xff);
  out[1] = static_cast<std::uint8_t>(mask.rows() >> 8);
  out[2] = static_cast<std::uint8_t>(mask.cols() & 0xff);
  out[3] = static_cast<std::uint8_t>(mask.cols() >> 8);
  for (int t = 0; t < mask.size(); ++t) {
    if (mask.flat(t)) out[4 + static_cast<std::size_t>(t / 8)] |= static_cast<std::uint8_t>(1u << (t % 8));
  }
  return out;
}

TokenMask unpack_mask(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw std::invalid_argument("unpack_mask: truncated header");
  const int rows = bytes[0] | (bytes[1] << 8);
  const int cols = bytes[2] | (bytes[3] << 8);
  if (bytes.size() != 4 + static_cast<std::size_t>((rows * cols + 7) / 8)) {
    throw std::invalid_argument("unpack_mask: payload size does not match shape");
  }
  TokenMask m(rows, cols);
  for (int t = 0; t < rows * cols; ++t) {
    m.set(t / cols, t % cols, (bytes[4 + static_cast<std::size_t>(t / 8)] >> (t % 8)) & 1u);
  }
  return m;
}

}  // namespace hoi

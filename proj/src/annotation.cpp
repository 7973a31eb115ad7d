#include "hoi/annotation.hpp"

#include <algorithm>

namespace hoi {

Box Box::clamped(double image_width, double image_height) const {
  return {std::clamp(w1, 0.0, image_width), std::clamp(h1, 0.0, image_height),
          std::clamp(w2, 0.0, image_width), std::clamp(h2, 0.0, image_height)};
}

Box Box::normalized(double image_width, double image_height) const {
  return {w1 / image_width, h1 / image_height, w2 / image_width, h2 / image_height};
}

Box Box::unnormalized(double image_width, double image_height) const {
  return {w1 * image_width, h1 * image_height, w2 * image_width, h2 * image_height};
}

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.w2, b.w2) - std::max(a.w1, b.w1);
  const double h = std::min(a.h2, b.h2) - std::max(a.h1, b.h1);
  return (w > 0 && h > 0) ? w * h : 0.0;
}

namespace {
constexpr std::array<std::string_view, kNumParts> kPartNames = {"feet",  "legs", "hip",
                                                                "hands", "arms", "head"};
}

std::string_view part_name(Part p) { return kPartNames[index(p)]; }

std::optional<Part> part_from_name(std::string_view name) {
  for (std::size_t k = 0; k < kNumParts; ++k) {
    if (kPartNames[k] == name) return static_cast<Part>(k);
  }
  return std::nullopt;
}

}  // namespace hoi

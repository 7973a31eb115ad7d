// Scene annotation types shared across the project.
#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hoi {

// Pixel-space box [w1, h1, w2, h2]: w runs along the image width, h along the height.
struct Box {
  double w1 = 0, h1 = 0, w2 = 0, h2 = 0;

  double width() const { return w2 - w1; }
  double height() const { return h2 - h1; }
  double area() const { return (w2 > w1 && h2 > h1) ? (w2 - w1) * (h2 - h1) : 0.0; }
  bool empty() const { return !(w2 >= w1 && h2 >= h1); }
  Box clamped(double image_width, double image_height) const;
  Box normalized(double image_width, double image_height) const;
  Box unnormalized(double image_width, double image_height) const;

  friend bool operator==(const Box&, const Box&) = default;
};

double intersection_area(const Box& a, const Box& b);

enum class Part : int { feet = 0, legs, hip, hands, arms, head };
inline constexpr std::size_t kNumParts = 6;
inline constexpr std::array<Part, kNumParts> kAllParts = {Part::feet, Part::legs, Part::hip,
                                                          Part::hands, Part::arms, Part::head};
std::string_view part_name(Part p);
std::optional<Part> part_from_name(std::string_view name);
inline std::size_t index(Part p) { return static_cast<std::size_t>(p); }

struct Person {
  Box bbox;
  std::array<std::vector<Box>, kNumParts> parts;
  double joint_confidence = 1.0;

  friend bool operator==(const Person&, const Person&) = default;
};

struct ObjectInstance {
  Box bbox;
  int category = 1;  // 1..N_obj; 0 is reserved for "no object"

  friend bool operator==(const ObjectInstance&, const ObjectInstance&) = default;
};

struct Interaction {
  int person = 0;
  int object = 0;
  std::vector<int> verbs;  // active verb indices
  bool interactive = false;
  std::optional<std::array<bool, kNumParts>> part_labels;

  friend bool operator==(const Interaction&, const Interaction&) = default;
};

struct SceneAnnotation {
  int id = 0;
  int width = 0;
  int height = 0;
  std::vector<Person> persons;
  std::vector<ObjectInstance> objects;
  std::vector<Interaction> interactions;

  friend bool operator==(const SceneAnnotation&, const SceneAnnotation&) = default;
};

}  // namespace hoi

#include "hoi/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace hoi {

GridSpec SceneProfile::grid() const {
  return GridSpec{image_size, image_size, grid_size, grid_size};
}

void SceneProfile::validate() const {
  if (image_size <= 0 || grid_size <= 0 || image_size % grid_size != 0) {
    throw std::invalid_argument("profile: image size must be a positive multiple of the grid size");
  }
  if (image_size < 48) throw std::invalid_argument("profile: image too small to hold a person");
  if (min_persons < 1 || max_persons < min_persons) {
    throw std::invalid_argument("profile: need 1 <= min_persons <= max_persons");
  }
  if (crowded_rate < 0 || crowded_rate > 1) throw std::invalid_argument("profile: crowded_rate in [0,1]");
  if (crowded_rate > 0 && max_persons < 3) {
    throw std::invalid_argument("profile: crowded scenes need max_persons >= 3");
  }
  if (num_object_classes < 1) throw std::invalid_argument("profile: need at least one object class");
  if (num_verbs < 1 || num_verbs > static_cast<int>(kVerbParts.size())) {
    throw std::invalid_argument("profile: num_verbs must be in [1, 4]");
  }
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) {
  std::uint64_t z = root + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double contact_ratio(const Box& a, const Box& b) {
  const double m = std::min(a.area(), b.area());
  return m > 0 ? intersection_area(a, b) / m : 0.0;
}

namespace {

double max_contact(const Person& person, Part part, const Box& object) {
  double best = 0.0;
  for (const Box& b : person.parts[index(part)]) best = std::max(best, contact_ratio(b, object));
  return best;
}

double max_verb_contact(const Person& person, const Box& object, int num_verbs) {
  double best = 0.0;
  for (int v = 0; v < num_verbs; ++v) best = std::max(best, max_contact(person, kVerbParts[v], object));
  return best;
}

// Part layout inside the whole-body box, as fractions (w1, h1, w2, h2).
constexpr std::array<std::array<double, 4>, kNumParts> kPartLayout = {{
    {0.05, 0.85, 0.95, 1.00},  // feet
    {0.15, 0.60, 0.85, 0.88},  // legs
    {0.15, 0.45, 0.85, 0.62},  // hip
    {0.00, 0.42, 1.00, 0.58},  // hands
    {0.00, 0.20, 1.00, 0.45},  // arms
    {0.25, 0.00, 0.75, 0.20},  // head
}};

Person make_person(const Box& body) {
  Person p;
  p.bbox = body;
  for (std::size_t k = 0; k < kNumParts; ++k) {
    const auto& f = kPartLayout[k];
    p.parts[k].push_back(Box{std::round(body.w1 + f[0] * body.width()), std::round(body.h1 + f[1] * body.height()),
                             std::round(body.w1 + f[2] * body.width()), std::round(body.h1 + f[3] * body.height())});
  }
  return p;
}

struct Rng {
  std::mt19937_64 engine;
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine); }
  int integer(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }
};

Box place_box(double cx, double cy, double w, double h, int size) {
  w = std::round(std::clamp(w, 4.0, static_cast<double>(size)));
  h = std::round(std::clamp(h, 4.0, static_cast<double>(size)));
  const double w1 = std::clamp(std::round(cx - w / 2), 0.0, size - w);
  const double h1 = std::clamp(std::round(cy - h / 2), 0.0, size - h);
  return Box{w1, h1, w1 + w, h1 + h};
}

bool objects_clash(const Box& candidate, const std::vector<ObjectInstance>& placed) {
  for (const auto& o : placed) {
    if (contact_ratio(candidate, o.bbox) > 0.2) return true;
  }
  return false;
}

std::optional<SceneAnnotation> try_generate(Rng& rng, const SceneProfile& profile, int id) {
  const int size = profile.image_size;
  const bool crowded = rng.bernoulli(profile.crowded_rate);
  const int persons = crowded ? rng.integer(std::max(3, profile.min_persons), profile.max_persons)
                              : rng.integer(profile.min_persons, profile.max_persons);
  const int interactive = crowded ? rng.integer(3, persons) : rng.integer(0, std::min(2, persons));

  std::vector<int> order(static_cast<std::size_t>(persons));
  for (int i = 0; i < persons; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng.engine);
  std::vector<bool> wants_contact(static_cast<std::size_t>(persons), false);
  for (int i = 0; i < interactive; ++i) wants_contact[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

  SceneAnnotation scene;
  scene.id = id;
  scene.width = size;
  scene.height = size;
  std::vector<double> scales;

  const double unit = size / 128.0;
  for (int i = 0; i < persons; ++i) {
    const double s = (rng.bernoulli(profile.tiny_rate) ? 0.5 : 1.0) * unit;
    const double w = std::round(rng.uniform(26, 34) * s);
    const double h = std::round(std::min(rng.uniform(80, 112) * s, static_cast<double>(size)));
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double w1 = rng.integer(0, size - static_cast<int>(w));
      const double h1 = rng.integer(0, size - static_cast<int>(h));
      const Box body{w1, h1, w1 + w, h1 + h};
      bool ok = true;
      for (const Person& other : scene.persons) {
        const double ow = std::min(body.w2, other.bbox.w2) - std::max(body.w1, other.bbox.w1);
        const double oh = std::min(body.h2, other.bbox.h2) - std::max(body.h1, other.bbox.h1);
        if (oh > 0 && ow > profile.person_overlap * std::min(body.width(), other.bbox.width())) ok = false;
      }
      if (ok) {
        scene.persons.push_back(make_person(body));
        scales.push_back(s);
        placed = true;
      }
    }
    if (!placed) return std::nullopt;
  }

  const double tau = profile.contact_threshold;
  for (int i = 0; i < persons; ++i) {
    const Person& owner = scene.persons[static_cast<std::size_t>(i)];
    const double s = scales[static_cast<std::size_t>(i)];
    const int category = rng.integer(1, profile.num_object_classes);
    const bool contact = wants_contact[static_cast<std::size_t>(i)];
    const int verb = rng.integer(0, profile.num_verbs - 1);
    const bool decoy = !contact && rng.bernoulli(profile.decoy_rate);
    const Part decoy_part = rng.bernoulli(0.5) ? Part::arms : Part::legs;
    bool placed = false;
    for (int attempt = 0; attempt < 60 && !placed; ++attempt) {
      const double side = rng.uniform(20, 30) * std::max(s, 0.6 * unit);
      const double w = side * rng.uniform(0.8, 1.2), h = side * rng.uniform(0.8, 1.2);
      Box obj;
      if (contact || decoy) {
        const Box& part = owner.parts[index(contact ? kVerbParts[static_cast<std::size_t>(verb)] : decoy_part)][0];
        const double cx = (part.w1 + part.w2) / 2 + rng.uniform(-0.6, 0.6) * std::max(part.width(), w);
        const double cy = (part.h1 + part.h2) / 2 + rng.uniform(-0.4, 0.4) * part.height();
        obj = place_box(cx, cy, w, h, size);
      } else {
        const double cx = (owner.bbox.w1 + owner.bbox.w2) / 2 + rng.uniform(-40, 40) * unit;
        const double cy = rng.uniform(owner.bbox.h1, owner.bbox.h2);
        obj = place_box(cx, cy, w, h, size);
      }
      if (objects_clash(obj, scene.objects)) continue;
      bool ok = true;
      for (int q = 0; q < persons && ok; ++q) {
        const double c = max_verb_contact(scene.persons[static_cast<std::size_t>(q)], obj, profile.num_verbs);
        if (q == i && contact) {
          ok = max_contact(owner, kVerbParts[static_cast<std::size_t>(verb)], obj) >= tau + 0.1;
        } else {
          ok = c < tau - 0.15;
        }
      }
      if (!ok) continue;
      scene.objects.push_back(ObjectInstance{obj, category});
      placed = true;
    }
    if (!placed) return std::nullopt;
  }

  int interactive_count = 0;
  for (int i = 0; i < persons; ++i) {
    Interaction inter;
    inter.person = i;
    inter.object = i;
    inter.verbs = derive_verbs(scene.persons[static_cast<std::size_t>(i)], scene.objects[static_cast<std::size_t>(i)], profile);
    inter.interactive = !inter.verbs.empty();
    inter.part_labels = derive_part_labels(scene.persons[static_cast<std::size_t>(i)],
                                           scene.objects[static_cast<std::size_t>(i)], profile);
    interactive_count += inter.interactive ? 1 : 0;
    scene.interactions.push_back(std::move(inter));
  }
  if (interactive_count != interactive) return std::nullopt;

  for (std::size_t p = 0; p < scene.persons.size(); ++p) {
    scene.persons[p].joint_confidence = occlusion_confidence(scene, p);
  }
  return scene;
}

std::array<float, 3> mix(std::array<float, 3> c, std::uint64_t h, float amount) {
  for (int i = 0; i < 3; ++i) {
    const float jitter = static_cast<float>(((h >> (8 * i)) & 0xff) / 255.0 - 0.5) * amount;
    c[static_cast<std::size_t>(i)] = std::clamp(c[static_cast<std::size_t>(i)] + jitter, 0.0f, 1.0f);
  }
  return c;
}

}  // namespace

std::vector<int> derive_verbs(const Person& person, const ObjectInstance& object, const SceneProfile& profile) {
  std::vector<int> verbs;
  for (int v = 0; v < profile.num_verbs; ++v) {
    if (max_contact(person, kVerbParts[static_cast<std::size_t>(v)], object.bbox) >= profile.contact_threshold) {
      verbs.push_back(v);
    }
  }
  return verbs;
}

std::array<bool, kNumParts> derive_part_labels(const Person& person, const ObjectInstance& object,
                                               const SceneProfile& profile) {
  std::array<bool, kNumParts> labels{};
  for (Part p : kAllParts) labels[index(p)] = max_contact(person, p, object.bbox) >= profile.contact_threshold;
  return labels;
}

double occlusion_confidence(const SceneAnnotation& scene, std::size_t person) {
  const Box& body = scene.persons.at(person).bbox;
  std::vector<Box> later;
  for (std::size_t q = person + 1; q < scene.persons.size(); ++q) later.push_back(scene.persons[q].bbox);
  for (const auto& o : scene.objects) later.push_back(o.bbox);
  long total = 0, covered = 0;
  for (int r = static_cast<int>(std::floor(body.h1)); r < static_cast<int>(std::ceil(body.h2)); ++r) {
    for (int c = static_cast<int>(std::floor(body.w1)); c < static_cast<int>(std::ceil(body.w2)); ++c) {
      const double pr = r + 0.5, pc = c + 0.5;
      if (pr < body.h1 || pr >= body.h2 || pc < body.w1 || pc >= body.w2) continue;
      ++total;
      for (const Box& b : later) {
        if (pr >= b.h1 && pr < b.h2 && pc >= b.w1 && pc < b.w2) {
          ++covered;
          break;
        }
      }
    }
  }
  return total > 0 ? 1.0 - static_cast<double>(covered) / static_cast<double>(total) : 1.0;
}

Scene generate_scene(std::uint64_t seed, const SceneProfile& profile, int id) {
  profile.validate();
  Rng rng{std::mt19937_64(seed)};
  for (int attempt = 0; attempt < 500; ++attempt) {
    if (auto scene = try_generate(rng, profile, id)) {
      Scene out{std::move(*scene), {}};
      out.image = render_scene(out.annotation);
      return out;
    }
  }
  throw std::runtime_error("generate_scene: profile unsatisfiable after 500 attempts");
}

std::vector<Scene> generate_dataset(std::uint64_t root_seed, int count, const SceneProfile& profile, int first_id) {
  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    scenes.push_back(generate_scene(derive_seed(root_seed, static_cast<std::uint64_t>(i)), profile, first_id + i));
  }
  return scenes;
}

Image render_scene(const SceneAnnotation& annotation) {
  Image img;
  img.height = annotation.height;
  img.width = annotation.width;
  img.rgb.assign(static_cast<std::size_t>(img.height) * img.width * 3, 0.0f);
  const std::uint64_t base = derive_seed(0x5ce9e, static_cast<std::uint64_t>(annotation.id));

  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const auto col = mix({0.80f, 0.80f, 0.74f}, derive_seed(base, static_cast<std::uint64_t>(r * img.width + c)), 0.08f);
      for (int ch = 0; ch < 3; ++ch) img.rgb[(static_cast<std::size_t>(r) * img.width + c) * 3 + ch] = col[static_cast<std::size_t>(ch)];
    }
  }
  auto fill = [&](const Box& b, std::array<float, 3> color, int shape) {
    const double cw = (b.w1 + b.w2) / 2, chh = (b.h1 + b.h2) / 2;
    const double rw = std::max(b.width() / 2, 1e-9), rh = std::max(b.height() / 2, 1e-9);
    for (int r = std::max(0, static_cast<int>(std::floor(b.h1))); r < std::min(img.height, static_cast<int>(std::ceil(b.h2))); ++r) {
      for (int c = std::max(0, static_cast<int>(std::floor(b.w1))); c < std::min(img.width, static_cast<int>(std::ceil(b.w2))); ++c) {
        const double pr = r + 0.5, pc = c + 0.5;
        if (pr < b.h1 || pr >= b.h2 || pc < b.w1 || pc >= b.w2) continue;
        const double dx = (pc - cw) / rw, dy = (pr - chh) / rh;
        if (shape == 1 && dx * dx + dy * dy > 1.0) continue;
        if (shape == 2 && std::abs(dx) + std::abs(dy) > 1.0) continue;
        for (int ch = 0; ch < 3; ++ch) img.rgb[(static_cast<std::size_t>(r) * img.width + c) * 3 + ch] = color[static_cast<std::size_t>(ch)];
      }
    }
  };

  constexpr std::array<std::array<float, 3>, 4> shirts = {{{0.80f, 0.22f, 0.22f}, {0.15f, 0.60f, 0.60f},
                                                           {0.85f, 0.80f, 0.20f}, {0.75f, 0.30f, 0.70f}}};
  constexpr std::array<std::array<float, 3>, 2> trousers = {{{0.20f, 0.30f, 0.70f}, {0.30f, 0.30f, 0.35f}}};
  // Draw order: arms, hip, legs, feet, head, hands.
  constexpr std::array<Part, kNumParts> order = {Part::arms, Part::hip, Part::legs, Part::feet, Part::head, Part::hands};
  for (std::size_t p = 0; p < annotation.persons.size(); ++p) {
    const std::uint64_t h = derive_seed(base, 1000 + p);
    const auto shirt = shirts[h % shirts.size()];
    const auto trouser = trousers[(h >> 8) % trousers.size()];
    for (Part part : order) {
      std::array<float, 3> color{};
      switch (part) {
        case Part::feet: color = {0.35f, 0.20f, 0.10f}; break;
        case Part::legs: color = trouser; break;
        case Part::hip: color = {0.12f, 0.12f, 0.30f}; break;
        case Part::hands: color = {0.98f, 0.72f, 0.55f}; break;
        case Part::arms: color = shirt; break;
        case Part::head: color = {0.85f, 0.60f, 0.45f}; break;
      }
      for (const Box& b : annotation.persons[p].parts[index(part)]) fill(b, mix(color, h >> 16, 0.06f), 0);
    }
  }
  constexpr std::array<std::array<float, 3>, 4> object_colors = {{{1.0f, 0.55f, 0.0f}, {0.10f, 0.70f, 0.20f},
                                                                  {0.55f, 0.20f, 0.80f}, {0.05f, 0.05f, 0.05f}}};
  for (const auto& o : annotation.objects) {
    const std::size_t cat = static_cast<std::size_t>(std::max(o.category - 1, 0));
    fill(o.bbox, object_colors[cat % object_colors.size()], static_cast<int>(cat % 3));
  }
  return img;
}

std::string_view occlusion_name(OcclusionBand band) {
  switch (band) {
    case OcclusionBand::low: return "low";
    case OcclusionBand::mid: return "mid";
    case OcclusionBand::high: return "high";
  }
  return "?";
}

SceneTags tag_hard_cases(const SceneAnnotation& scene) {
  SceneTags tags;
  tags.person_count = static_cast<int>(scene.persons.size());
  const double image_area = static_cast<double>(scene.width) * scene.height;
  for (const auto& inter : scene.interactions) {
    if (!inter.interactive) continue;
    ++tags.interactive_pair_count;
    const double r = scene.persons.at(static_cast<std::size_t>(inter.person)).bbox.area() / image_area;
    tags.min_person_area_ratio = std::min(tags.min_person_area_ratio, r);
  }
  tags.crowded = tags.interactive_pair_count >= 3;
  tags.tiny = tags.interactive_pair_count > 0 && tags.min_person_area_ratio < 0.1;
  if (!scene.persons.empty()) {
    double sum = 0;
    for (const auto& p : scene.persons) sum += p.joint_confidence;
    tags.mean_joint_confidence = sum / static_cast<double>(scene.persons.size());
  }
  const double j = tags.mean_joint_confidence;
  tags.occluded = j < 0.2 ? OcclusionBand::high : (j > 0.6 ? OcclusionBand::low : OcclusionBand::mid);
  return tags;
}

// ---- annotation files ----

namespace {

nlohmann::json box_json(const Box& b) { return nlohmann::json::array({b.w1, b.h1, b.w2, b.h2}); }

[[noreturn]] void schema_fail(const std::string& path, const std::string& what) {
  throw SchemaError("annotation schema " + std::to_string(kSchemaVersion) + ": " + (path.empty() ? "/" : path) +
                    ": " + what);
}

void require_keys(const nlohmann::json& j, const std::string& path, std::initializer_list<const char*> required,
                  std::initializer_list<const char*> optional = {}) {
  if (!j.is_object()) schema_fail(path, "expected an object");
  for (const char* key : required) {
    if (!j.contains(key)) schema_fail(path, std::string("missing field '") + key + "'");
  }
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(required.begin(), required.end(), [&](const char* k) { return key == k; }) ||
                       std::any_of(optional.begin(), optional.end(), [&](const char* k) { return key == k; });
    if (!known) schema_fail(path + "/" + key, "unknown field");
  }
}

double number_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number()) schema_fail(path, "expected a number");
  return j.get<double>();
}

int int_at(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer()) schema_fail(path, "expected an integer");
  return j.get<int>();
}

Box parse_box(const nlohmann::json& j, const std::string& path, int width, int height) {
  if (!j.is_array() || j.size() != 4) schema_fail(path, "box must be [w1, h1, w2, h2]");
  Box b{number_at(j[0], path + "/0"), number_at(j[1], path + "/1"), number_at(j[2], path + "/2"),
        number_at(j[3], path + "/3")};
  const double coords[4] = {b.w1, b.h1, b.w2, b.h2};
  for (int i = 0; i < 4; ++i) {
    if (coords[i] < 0) schema_fail(path + "/" + std::to_string(i), "negative coordinate");
  }
  if (b.w2 < b.w1 || b.h2 < b.h1) schema_fail(path, "box corners out of order");
  if (b.w2 > width || b.h2 > height) schema_fail(path, "box exceeds image bounds");
  return b;
}

}  // namespace

nlohmann::json annotations_to_json(const std::vector<SceneAnnotation>& scenes) {
  nlohmann::json images = nlohmann::json::array();
  for (const auto& s : scenes) {
    nlohmann::json persons = nlohmann::json::array();
    for (const auto& p : s.persons) {
      nlohmann::json parts = nlohmann::json::object();
      for (Part part : kAllParts) {
        nlohmann::json list = nlohmann::json::array();
        for (const Box& b : p.parts[index(part)]) list.push_back(box_json(b));
        parts[std::string(part_name(part))] = std::move(list);
      }
      persons.push_back({{"bbox", box_json(p.bbox)}, {"parts", std::move(parts)}, {"joint_confidence", p.joint_confidence}});
    }
    nlohmann::json objects = nlohmann::json::array();
    for (const auto& o : s.objects) objects.push_back({{"bbox", box_json(o.bbox)}, {"category", o.category}});
    nlohmann::json interactions = nlohmann::json::array();
    for (const auto& in : s.interactions) {
      nlohmann::json ij = {{"person", in.person}, {"object", in.object}, {"verbs", in.verbs}, {"interactive", in.interactive}};
      if (in.part_labels) ij["part_labels"] = *in.part_labels;
      interactions.push_back(std::move(ij));
    }
    images.push_back({{"id", s.id},
                      {"width", s.width},
                      {"height", s.height},
                      {"persons", std::move(persons)},
                      {"objects", std::move(objects)},
                      {"interactions", std::move(interactions)}});
  }
  return {{"schema", kSchemaVersion}, {"images", std::move(images)}};
}

std::vector<SceneAnnotation> annotations_from_json(const nlohmann::json& doc) {
  require_keys(doc, "", {"schema", "images"});
  if (!doc.at("schema").is_number_integer() || doc.at("schema").get<int>() != kSchemaVersion) {
    schema_fail("/schema", "unsupported schema version " + doc.at("schema").dump());
  }
  if (!doc.at("images").is_array()) schema_fail("/images", "expected an array");
  std::vector<SceneAnnotation> scenes;
  for (std::size_t i = 0; i < doc.at("images").size(); ++i) {
    const auto& ij = doc.at("images")[i];
    const std::string ip = "/images/" + std::to_string(i);
    require_keys(ij, ip, {"id", "width", "height", "persons", "objects", "interactions"});
    SceneAnnotation s;
    s.id = int_at(ij.at("id"), ip + "/id");
    s.width = int_at(ij.at("width"), ip + "/width");
    s.height = int_at(ij.at("height"), ip + "/height");
    if (s.width <= 0 || s.height <= 0) schema_fail(ip, "image size must be positive");

    const auto& pj = ij.at("persons");
    if (!pj.is_array()) schema_fail(ip + "/persons", "expected an array");
    for (std::size_t p = 0; p < pj.size(); ++p) {
      const std::string pp = ip + "/persons/" + std::to_string(p);
      require_keys(pj[p], pp, {"bbox", "parts", "joint_confidence"});
      Person person;
      person.bbox = parse_box(pj[p].at("bbox"), pp + "/bbox", s.width, s.height);
      person.joint_confidence = number_at(pj[p].at("joint_confidence"), pp + "/joint_confidence");
      if (person.joint_confidence < 0 || person.joint_confidence > 1) {
        schema_fail(pp + "/joint_confidence", "must lie in [0,1]");
      }
      const auto& parts = pj[p].at("parts");
      require_keys(parts, pp + "/parts", {"feet", "legs", "hip", "hands", "arms", "head"});
      for (Part part : kAllParts) {
        const std::string kp = pp + "/parts/" + std::string(part_name(part));
        const auto& list = parts.at(std::string(part_name(part)));
        if (!list.is_array()) schema_fail(kp, "expected a list of boxes");
        for (std::size_t b = 0; b < list.size(); ++b) {
          const Box box = parse_box(list[b], kp + "/" + std::to_string(b), s.width, s.height);
          if (box.w1 < person.bbox.w1 || box.h1 < person.bbox.h1 || box.w2 > person.bbox.w2 || box.h2 > person.bbox.h2) {
            schema_fail(kp + "/" + std::to_string(b), "part box outside its person box");
          }
          person.parts[index(part)].push_back(box);
        }
      }
      s.persons.push_back(std::move(person));
    }

    const auto& oj = ij.at("objects");
    if (!oj.is_array()) schema_fail(ip + "/objects", "expected an array");
    for (std::size_t o = 0; o < oj.size(); ++o) {
      const std::string op = ip + "/objects/" + std::to_string(o);
      require_keys(oj[o], op, {"bbox", "category"});
      ObjectInstance obj;
      obj.bbox = parse_box(oj[o].at("bbox"), op + "/bbox", s.width, s.height);
      obj.category = int_at(oj[o].at("category"), op + "/category");
      if (obj.category < 1) schema_fail(op + "/category", "categories start at 1");
      s.objects.push_back(obj);
    }

    const auto& nj = ij.at("interactions");
    if (!nj.is_array()) schema_fail(ip + "/interactions", "expected an array");
    for (std::size_t n = 0; n < nj.size(); ++n) {
      const std::string np = ip + "/interactions/" + std::to_string(n);
      require_keys(nj[n], np, {"person", "object", "verbs", "interactive"}, {"part_labels"});
      Interaction in;
      in.person = int_at(nj[n].at("person"), np + "/person");
      in.object = int_at(nj[n].at("object"), np + "/object");
      if (in.person < 0 || in.person >= static_cast<int>(s.persons.size())) schema_fail(np + "/person", "index out of range");
      if (in.object < 0 || in.object >= static_cast<int>(s.objects.size())) schema_fail(np + "/object", "index out of range");
      const auto& vj = nj[n].at("verbs");
      if (!vj.is_array()) schema_fail(np + "/verbs", "expected an array");
      for (std::size_t v = 0; v < vj.size(); ++v) {
        const int verb = int_at(vj[v], np + "/verbs/" + std::to_string(v));
        if (verb < 0) schema_fail(np + "/verbs/" + std::to_string(v), "verb index must be >= 0");
        in.verbs.push_back(verb);
      }
      if (!nj[n].at("interactive").is_boolean()) schema_fail(np + "/interactive", "expected a boolean");
      in.interactive = nj[n].at("interactive").get<bool>();
      if (in.interactive != !in.verbs.empty()) schema_fail(np + "/interactive", "must equal OR of verbs");
      if (nj[n].contains("part_labels")) {
        const auto& lj = nj[n].at("part_labels");
        if (!lj.is_array() || lj.size() != kNumParts) schema_fail(np + "/part_labels", "expected 6 booleans");
        std::array<bool, kNumParts> labels{};
        for (std::size_t k = 0; k < kNumParts; ++k) {
          if (!lj[k].is_boolean()) schema_fail(np + "/part_labels/" + std::to_string(k), "expected a boolean");
          labels[k] = lj[k].get<bool>();
        }
        in.part_labels = labels;
      }
      s.interactions.push_back(std::move(in));
    }
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::string canonical_dump(const std::vector<SceneAnnotation>& scenes) {
  return annotations_to_json(scenes).dump() + "\n";
}

void save_annotations(const std::vector<SceneAnnotation>& scenes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write annotations to " + path.string());
  out << canonical_dump(scenes);
}

std::vector<SceneAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open annotations " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("annotation file is not valid JSON: ") + e.what());
  }
  return annotations_from_json(doc);
}

}  // namespace hoi

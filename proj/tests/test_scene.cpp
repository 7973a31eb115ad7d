#include "doctest.h"

#include "hoi/scene.hpp"

#include <filesystem>
#include <fstream>

using namespace hoi;

namespace {

Person person_at(const Box& body) {
  Person p;
  p.bbox = body;
  for (auto& list : p.parts) list.push_back(body);
  return p;
}

SceneAnnotation with_pairs(int interactive, int total, double person_side = 40) {
  SceneAnnotation s;
  s.width = s.height = 128;
  for (int i = 0; i < total; ++i) {
    s.persons.push_back(person_at(Box{0, 0, person_side, person_side}));
    s.objects.push_back(ObjectInstance{Box{0, 0, 10, 10}, 1});
    Interaction in;
    in.person = in.object = i;
    in.interactive = i < interactive;
    if (in.interactive) in.verbs = {0};
    s.interactions.push_back(in);
  }
  return s;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("scene generation") {
  const SceneProfile profile;
  SUBCASE("fixed seed twice gives identical annotation and image") {
    const Scene a = generate_scene(42, profile, 3), b = generate_scene(42, profile, 3);
    CHECK(a.annotation == b.annotation);
    CHECK(a.image == b.image);
    CHECK(canonical_dump({a.annotation}) == canonical_dump({b.annotation}));
  }
  SUBCASE("one person with one overlapping object has exactly one interactive pair") {
    SceneProfile p = profile;
    p.min_persons = p.max_persons = 1;
    p.crowded_rate = 0;
    p.decoy_rate = 0;
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 200 && checked < 10; ++seed) {
      const Scene s = generate_scene(seed, p);
      const auto& body = s.annotation.persons[0].bbox;
      if (intersection_area(body, s.annotation.objects[0].bbox) == 0) continue;
      if (derive_verbs(s.annotation.persons[0], s.annotation.objects[0], p).empty()) continue;
      CHECK(tag_hard_cases(s.annotation).interactive_pair_count == 1);
      ++checked;
    }
    CHECK(checked == 10);
  }
  SUBCASE("crowded fraction over 1000 scenes tracks the profile rate") {
    const auto scenes = generate_dataset(77, 1000, profile);
    int crowded = 0;
    for (const auto& s : scenes) crowded += tag_hard_cases(s.annotation).crowded;
    CHECK(std::abs(crowded / 1000.0 - profile.crowded_rate) <= 0.05);
  }
  SUBCASE("structural invariants and label soundness") {
    for (const auto& s : generate_dataset(9, 300, profile)) {
      const auto& a = s.annotation;
      for (const auto& p : a.persons) {
        CHECK(p.joint_confidence >= 0.0);
        CHECK(p.joint_confidence <= 1.0);
        for (const auto& list : p.parts) {
          for (const Box& b : list) {
            CHECK(b.w1 >= p.bbox.w1);
            CHECK(b.h1 >= p.bbox.h1);
            CHECK(b.w2 <= p.bbox.w2);
            CHECK(b.h2 <= p.bbox.h2);
          }
        }
      }
      // Re-deriving the labels from the serialized boxes reproduces them.
      const auto reloaded = annotations_from_json(nlohmann::json::parse(canonical_dump({a})));
      for (const auto& in : reloaded[0].interactions) {
        const auto& person = reloaded[0].persons[static_cast<std::size_t>(in.person)];
        const auto& object = reloaded[0].objects[static_cast<std::size_t>(in.object)];
        CHECK(derive_verbs(person, object, profile) == in.verbs);
        CHECK(in.interactive == !in.verbs.empty());
        CHECK(derive_part_labels(person, object, profile) == in.part_labels.value());
      }
    }
  }
  SUBCASE("unsatisfiable profiles") {
    SceneProfile bad = profile;
    bad.image_size = 0;
    CHECK_THROWS(generate_scene(1, bad));
    bad = profile;
    bad.max_persons = 2;
    CHECK_THROWS_AS(generate_scene(1, bad), std::invalid_argument);
  }
  SUBCASE("rendering paints parts and objects") {
    const Scene s = generate_scene(5, profile);
    const Box& head = s.annotation.persons[0].parts[index(Part::head)][0];
    const int r = static_cast<int>((head.h1 + head.h2) / 2), c = static_cast<int>((head.w1 + head.w2) / 2);
    bool covered = false;
    for (std::size_t q = 1; q < s.annotation.persons.size(); ++q) {
      const Box& b = s.annotation.persons[q].bbox;
      covered |= c >= b.w1 && c < b.w2 && r >= b.h1 && r < b.h2;
    }
    for (const auto& o : s.annotation.objects) covered |= c >= o.bbox.w1 && c < o.bbox.w2 && r >= o.bbox.h1 && r < o.bbox.h2;
    if (!covered) CHECK(std::abs(s.image.at(r, c, 0) - 0.85f) < 0.05f);
  }
}

TEST_CASE("occlusion proxy") {
  SceneAnnotation s;
  s.width = s.height = 100;
  s.persons = {person_at(Box{0, 0, 10, 10}), person_at(Box{5, 0, 15, 10})};
  CHECK(occlusion_confidence(s, 0) == doctest::Approx(0.5));
  CHECK(occlusion_confidence(s, 1) == 1.0);
  s.objects.push_back(ObjectInstance{Box{10, 0, 15, 10}, 1});
  CHECK(occlusion_confidence(s, 1) == doctest::Approx(0.5));
}

TEST_CASE("hard-case tags") {
  CHECK(tag_hard_cases(with_pairs(3, 3)).crowded);
  CHECK_FALSE(tag_hard_cases(with_pairs(2, 4)).crowded);
  CHECK(tag_hard_cases(with_pairs(2, 4)).interactive_pair_count == 2);

  SceneAnnotation tiny = with_pairs(1, 1);
  tiny.width = tiny.height = 100;
  tiny.persons[0].bbox = Box{0, 0, 25, 20};  // 5% of the image
  const SceneTags t = tag_hard_cases(tiny);
  CHECK(t.min_person_area_ratio == doctest::Approx(0.05));
  CHECK(t.tiny);
  tiny.persons[0].bbox = Box{0, 0, 50, 20};  // exactly 10%: not tiny
  CHECK_FALSE(tag_hard_cases(tiny).tiny);

  SceneAnnotation occ = with_pairs(1, 2);
  occ.persons[0].joint_confidence = occ.persons[1].joint_confidence = 0.7;
  CHECK(tag_hard_cases(occ).occluded == OcclusionBand::low);
  occ.persons[0].joint_confidence = occ.persons[1].joint_confidence = 0.1;
  CHECK(tag_hard_cases(occ).occluded == OcclusionBand::high);
  occ.persons[0].joint_confidence = occ.persons[1].joint_confidence = 0.6;
  CHECK(tag_hard_cases(occ).occluded == OcclusionBand::mid);
  occ.persons[0].joint_confidence = occ.persons[1].joint_confidence = 0.2;
  CHECK(tag_hard_cases(occ).occluded == OcclusionBand::mid);
}

TEST_CASE("annotation files") {
  const auto scenes = generate_dataset(500, 500, SceneProfile{});
  std::vector<SceneAnnotation> annotations;
  for (const auto& s : scenes) annotations.push_back(s.annotation);

  SUBCASE("save, load and canonical re-serialization") {
    const auto path = temp_file("hoi_scenes_roundtrip.json");
    save_annotations(annotations, path);
    const auto loaded = load_annotations(path);
    CHECK(loaded == annotations);
    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), {});
    CHECK(canonical_dump(loaded) == bytes);
    std::filesystem::remove(path);
  }
  SUBCASE("schema errors name the offending path") {
    nlohmann::json doc = annotations_to_json({annotations[0]});
    nlohmann::json neg = doc;
    neg["images"][0]["objects"][0]["bbox"][1] = -3;
    CHECK_THROWS_WITH_AS(annotations_from_json(neg), doctest::Contains("/images/0/objects/0/bbox/1: negative coordinate"),
                         SchemaError);
    nlohmann::json version = doc;
    version["schema"] = 2;
    CHECK_THROWS_WITH_AS(annotations_from_json(version), doctest::Contains("schema version"), SchemaError);
    nlohmann::json extra = doc;
    extra["images"][0]["persons"][0]["pose"] = 1;
    CHECK_THROWS_WITH_AS(annotations_from_json(extra), doctest::Contains("/images/0/persons/0/pose: unknown field"),
                         SchemaError);
    nlohmann::json flag = doc;
    flag["images"][0]["interactions"][0]["interactive"] = !flag["images"][0]["interactions"][0]["interactive"].get<bool>();
    CHECK_THROWS_AS(annotations_from_json(flag), SchemaError);
    nlohmann::json outside = doc;
    outside["images"][0]["persons"][0]["bbox"][2] = 1000;
    CHECK_THROWS_WITH_AS(annotations_from_json(outside), doctest::Contains("exceeds image bounds"), SchemaError);
  }
  SUBCASE("malformed JSON") {
    const auto path = temp_file("hoi_scenes_bad.json");
    std::ofstream(path) << "{\"schema\": 1, \"images\": [";
    CHECK_THROWS_AS(load_annotations(path), SchemaError);
    std::filesystem::remove(path);
  }
}

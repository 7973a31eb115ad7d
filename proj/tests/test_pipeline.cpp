#include "doctest.h"
#include "oracles.hpp"

#include "hoi/losses.hpp"
#include "hoi/train.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hoi;
using oracle::random_matrix;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.image_size = 64;
  c.grid_size = 4;
  c.stem_cells = 4;
  c.dim = 16;
  c.heads = 2;
  c.ffn_hidden = 32;
  c.num_queries = 6;
  return c;
}

SceneProfile tiny_profile() {
  SceneProfile p;
  p.image_size = 64;
  p.grid_size = 4;
  return p;
}

TrainConfig tiny_train() {
  TrainConfig t;
  t.model = tiny_model();
  t.stage1_epochs = 1;
  t.stage2_epochs = 1;
  t.batch = 2;
  return t;
}

Box random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
  return Box{std::min(a, b), std::min(c, d), std::max(a, b) + 1e-3, std::max(c, d) + 1e-3};
}

std::vector<GroundTruthPair> random_gts(std::mt19937_64& rng, int count, int classes = 3) {
  std::vector<GroundTruthPair> out;
  for (int g = 0; g < count; ++g) {
    GroundTruthPair p;
    p.human = random_box(rng);
    p.object = random_box(rng);
    p.category = 1 + g % classes;
    p.interactive = g % 2 == 0;
    if (p.interactive) p.verbs = {g % 4};
    PartFlags flags{};
    flags[static_cast<std::size_t>(g % 6)] = p.interactive;
    p.part_labels = flags;
    out.push_back(p);
  }
  return out;
}

Matrix box_matrix(const std::vector<Box>& boxes) {
  Matrix m(static_cast<Eigen::Index>(boxes.size()), 4);
  for (std::size_t i = 0; i < boxes.size(); ++i) m.row(static_cast<Eigen::Index>(i)) << boxes[i].w1, boxes[i].h1, boxes[i].w2, boxes[i].h2;
  return m;
}

DetectorOutput fake_detector(const Var& human_raw, const Var& object_raw, const Var& class_logits) {
  DetectorOutput d;
  d.human_boxes = PredictionHead::squash(HeadKind::human_box, human_raw);
  d.object_boxes = PredictionHead::squash(HeadKind::object_box, object_raw);
  d.class_logits = class_logits;
  d.class_probs = ad::softmax_rows(class_logits);
  return d;
}

}  // namespace

TEST_CASE("box overlap measures") {
  std::mt19937_64 rng(1);
  CHECK(iou(Box{0, 0, 2, 2}, Box{1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(giou(Box{0, 0, 1, 1}, Box{2, 0, 3, 1}) == doctest::Approx(-1.0 / 3.0));
  CHECK(giou(Box{0, 0, 1, 1}, Box{0, 0, 1, 1}) == 1.0);
  std::vector<Box> a, b;
  for (int i = 0; i < 500; ++i) {
    a.push_back(random_box(rng));
    b.push_back(random_box(rng));
    const double g = giou(a.back(), b.back());
    CHECK(g >= -1.0);
    CHECK(g <= iou(a.back(), b.back()) + 1e-15);
  }
  const Matrix rows = giou_rows(Var::constant(box_matrix(a)), Var::constant(box_matrix(b))).value();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(rows(static_cast<Eigen::Index>(i), 0) == doctest::Approx(giou(a[i], b[i])).epsilon(1e-12));
}

TEST_CASE("bipartite matching") {
  std::mt19937_64 rng(2);
  SUBCASE("Hungarian solver equals the permutation minimum") {
    for (int trial = 0; trial < 200; ++trial) {
      const int g = 1 + trial % 6;
      const int q = g + trial % 3;
      const Matrix cost = random_matrix(rng, g, q, 0, 10);
      const auto cols = solve_assignment(cost);
      double total = 0;
      for (int r = 0; r < g; ++r) total += cost(r, cols[static_cast<std::size_t>(r)]);
      CHECK(total == doctest::Approx(oracle::brute_force_assignment(cost)).epsilon(1e-12));
      std::vector<int> sorted = cols;
      std::sort(sorted.begin(), sorted.end());
      CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    }
  }
  SUBCASE("one proposal equal to the ground truth") {
    const auto gts = random_gts(rng, 1);
    Matrix h = random_matrix(rng, 4, 4, 0, 1), o = random_matrix(rng, 4, 4, 0, 1);
    h.row(2) << gts[0].human.w1, gts[0].human.h1, gts[0].human.w2, gts[0].human.h2;
    o.row(2) << gts[0].object.w1, gts[0].object.h1, gts[0].object.w2, gts[0].object.h2;
    Matrix probs = Matrix::Constant(4, 4, 0.25);
    probs.row(2).setZero();
    probs(2, gts[0].category) = 1.0;
    const auto m = bipartite_match(h, o, probs, gts, LossWeights{});
    REQUIRE(m.size() == 1);
    CHECK(m[0] == 2);
    CHECK(matching_cost(h, o, probs, gts, LossWeights{})(0, 2) == doctest::Approx(0.0).epsilon(1e-15));
  }
  SUBCASE("empty ground truth and overflow") {
    const Matrix h = random_matrix(rng, 3, 4, 0, 1);
    CHECK(bipartite_match(h, h, Matrix::Constant(3, 4, 0.25), {}, LossWeights{}).empty());
    CHECK_THROWS_WITH_AS(bipartite_match(h, h, Matrix::Constant(3, 4, 0.25), random_gts(rng, 4), LossWeights{}),
                         doctest::Contains("4 ground-truth pairs but only 3 proposals"), std::invalid_argument);
  }
}

TEST_CASE("losses") {
  std::mt19937_64 rng(3);
  const auto gts = random_gts(rng, 3);
  const std::vector<int> matching = {4, 0, 2};

  SUBCASE("hand-computed values and the L_det identity") {
    const Var hr = Var::constant(random_matrix(rng, 5, 4, -2, 2));
    const Var orw = Var::constant(random_matrix(rng, 5, 4, -2, 2));
    const Var cl = Var::constant(random_matrix(rng, 5, 4, -2, 2));
    const DetectorOutput det = fake_detector(hr, orw, cl);
    const LossWeights w;
    const DetectionLoss dl = detection_loss(det, gts, matching, w);
    const auto hb = det.human_box_values(), ob = det.object_box_values();
    double lb = 0, lu = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const Box& h = hb[static_cast<std::size_t>(matching[g])];
      const Box& o = ob[static_cast<std::size_t>(matching[g])];
      lb += std::abs(h.w1 - gts[g].human.w1) + std::abs(h.h1 - gts[g].human.h1) + std::abs(h.w2 - gts[g].human.w2) +
            std::abs(h.h2 - gts[g].human.h2);
      lb += std::abs(o.w1 - gts[g].object.w1) + std::abs(o.h1 - gts[g].object.h1) + std::abs(o.w2 - gts[g].object.w2) +
            std::abs(o.h2 - gts[g].object.h2);
      lu += 2.0 - giou(h, gts[g].human) - giou(o, gts[g].object);
    }
    std::vector<int> target(5, 0);
    for (std::size_t g = 0; g < gts.size(); ++g) target[static_cast<std::size_t>(matching[g])] = gts[g].category;
    double num = 0, den = 0;
    for (int q = 0; q < 5; ++q) {
      const auto r = cl.value().row(q);
      const double weight = target[static_cast<std::size_t>(q)] == 0 ? 0.1 : 1.0;
      num += weight * (std::log(r.array().exp().sum()) - r(target[static_cast<std::size_t>(q)]));
      den += weight;
    }
    CHECK(std::abs(dl.l_b.scalar() - lb / 3) < 1e-8);
    CHECK(std::abs(dl.l_u.scalar() - lu / 3) < 1e-8);
    CHECK(std::abs(dl.l_c.scalar() - num / den) < 1e-8);
    CHECK(dl.l_det.scalar() == w.lambda1 * dl.l_b.scalar() + w.lambda2 * dl.l_u.scalar() + w.lambda3 * dl.l_c.scalar());
  }
  SUBCASE("perfect boxes give zero box losses") {
    DetectorOutput det;
    Matrix h = random_matrix(rng, 5, 4, 0, 1), o = h;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto q = static_cast<Eigen::Index>(matching[g]);
      h.row(q) << gts[g].human.w1, gts[g].human.h1, gts[g].human.w2, gts[g].human.h2;
      o.row(q) << gts[g].object.w1, gts[g].object.h1, gts[g].object.w2, gts[g].object.h2;
    }
    det.human_boxes = Var::constant(h);
    det.object_boxes = Var::constant(o);
    det.class_logits = Var::constant(Matrix::Zero(5, 4));
    det.class_probs = ad::softmax_rows(det.class_logits);
    const DetectionLoss dl = detection_loss(det, gts, matching, LossWeights{});
    CHECK(dl.l_b.scalar() == 0.0);
    CHECK(std::abs(dl.l_u.scalar()) < 1e-15);
  }
  SUBCASE("interactiveness labels follow the matching") {
    Matrix logits = Matrix::Constant(5, 1, -60.0);
    logits(4, 0) = 60.0;  // gt 0 interactive
    logits(2, 0) = 60.0;  // gt 2 interactive; gt 1 (proposal 0) is not
    CHECK(interactiveness_loss(Var::constant(logits), gts, matching).scalar() < 1e-20);
    logits(0, 0) = 60.0;
    CHECK(interactiveness_loss(Var::constant(logits), gts, matching).scalar() == doctest::Approx(60.0 / 5));
  }
  SUBCASE("verb and part losses") {
    CHECK(verb_loss(Var::constant(Matrix::Zero(5, 4)), {}, {}).scalar() == 0.0);
    CHECK(verb_loss(Var::constant(Matrix::Zero(5, 4)), gts, matching).scalar() == doctest::Approx(std::log(2.0)));
    auto unlabeled = gts;
    for (auto& g : unlabeled) g.part_labels.reset();
    CHECK_FALSE(part_loss(Var::constant(Matrix::Zero(5, 6)), unlabeled, matching).has_value());
    CHECK(part_loss(Var::constant(Matrix::Zero(5, 6)), gts, matching)->scalar() == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("gradients") {
    const Var hr = Var::parameter(random_matrix(rng, 5, 4, -2, 2));
    const Var orw = Var::parameter(random_matrix(rng, 5, 4, -2, 2));
    const Var cl = Var::parameter(random_matrix(rng, 5, 4, -2, 2));
    CHECK(oracle::gradient_error({hr, orw, cl}, [&] {
            return detection_loss(fake_detector(hr, orw, cl), gts, matching, LossWeights{}).l_det;
          }) < 1e-4);
    const Var il = Var::parameter(random_matrix(rng, 5, 1, -3, 3));
    CHECK(oracle::gradient_error({il}, [&] { return interactiveness_loss(il, gts, matching); }) < 1e-4);
    const Var vl = Var::parameter(random_matrix(rng, 5, 4, -3, 3));
    CHECK(oracle::gradient_error({vl}, [&] { return verb_loss(vl, gts, matching); }) < 1e-4);
    const Var pl = Var::parameter(random_matrix(rng, 5, 6, -3, 3));
    CHECK(oracle::gradient_error({pl}, [&] { return *part_loss(pl, gts, matching); }) < 1e-4);
  }
}

TEST_CASE("sparsity adaptive sampler") {
  std::vector<bool> crowded(200);
  for (std::size_t i = 0; i < crowded.size(); ++i) crowded[i] = i % 2 == 1;
  SparsitySampler s(crowded, 3.0, 7);
  CHECK(s.probability(0) == doctest::Approx(1.0 / 400));
  CHECK(s.probability(1) == doctest::Approx(3.0 / 400));
  const auto draws = s.draw(10000);
  const auto hits = std::count_if(draws.begin(), draws.end(), [&](std::size_t i) { return crowded[i]; });
  CHECK(std::abs(static_cast<double>(hits) / 10000 - 0.75) <= 0.02);
  SparsitySampler again(crowded, 3.0, 7);
  CHECK(again.draw(10000) == draws);
  CHECK_THROWS(SparsitySampler({true}, 0.0, 1));
}

TEST_CASE("config files") {
  const TrainConfig d;
  CHECK(d.loss.lambda1 == 1.0);
  CHECK(d.loss.lambda2 == 2.5);
  CHECK(d.loss.lambda3 == 1.0);
  CHECK(d.alpha == 3.0);
  CHECK(d.model.num_queries == 8);
  const TrainConfig c = parse_config("# desk run\nalpha = 1\nnq=6\n  lr = 1e-3  # faster\nscheme = intuitive\n\nborder_drop = true\n");
  CHECK(c.alpha == 1.0);
  CHECK(c.model.num_queries == 6);
  CHECK(c.lr == 1e-3);
  CHECK(c.model.scheme == InteractivenessScheme::intuitive);
  CHECK(c.border_drop);
  CHECK_THROWS_WITH(parse_config("alpha = 3\nbogus = 1\n"), doctest::Contains("line 2"));
  CHECK_THROWS(parse_config("alpha = three\n"));
  CHECK_THROWS(parse_config("alpha\n"));
  CHECK(TrainConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("encoder and heads") {
  const ModelConfig cfg = tiny_model();
  const HoiModel model(cfg, 3);
  std::mt19937_64 rng(4);
  SUBCASE("injected features pass through unchanged") {
    const Matrix f = random_matrix(rng, 16, cfg.dim);
    CHECK(model.inject(f).values.value() == f);
    CHECK_THROWS(model.inject(random_matrix(rng, 15, cfg.dim)));
  }
  SUBCASE("64x64 image with factor 32 gives a 2x2 grid") {
    ModelConfig c2 = cfg;
    c2.grid_size = 2;
    c2.stem_cells = 4;
    const HoiModel m2(c2, 3);
    Image img{64, 64, std::vector<float>(64 * 64 * 3, 0.5f)};
    const FeatureGrid g = m2.encode(stem_features(img, c2.grid(), c2.stem_cells));
    CHECK(g.height == 2);
    CHECK(g.width == 2);
    CHECK(g.tokens() == 4);
  }
  SUBCASE("constant color image gives spatially constant pre-positional features") {
    Image img{64, 64, {}};
    for (int i = 0; i < 64 * 64; ++i) img.rgb.insert(img.rgb.end(), {0.2f, 0.7f, 0.4f});
    const Matrix e = model.stem_embed(stem_features(img, cfg.grid(), cfg.stem_cells)).value();
    for (Eigen::Index t = 1; t < e.rows(); ++t) CHECK((e.row(t) - e.row(0)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("detector output shape and ranges") {
    const FeatureGrid g = model.inject(random_matrix(rng, 16, cfg.dim));
    const DetectorOutput d = model.detect(g);
    CHECK(d.human_boxes.rows() == cfg.num_queries);
    CHECK(d.object_boxes.rows() == cfg.num_queries);
    CHECK(d.human_boxes.value().minCoeff() >= 0.0);
    CHECK(d.human_boxes.value().maxCoeff() <= 1.0);
    CHECK(d.object_boxes.value().minCoeff() >= 0.0);
    CHECK(d.object_boxes.value().maxCoeff() <= 1.0);
    for (Eigen::Index q = 0; q < cfg.num_queries; ++q) CHECK(std::abs(d.class_probs.value().row(q).sum() - 1.0) <= 1e-12);
    const Matrix v = model.verb_scores(g, d.embeddings).value();
    CHECK(v.rows() == cfg.num_queries);
    CHECK(v.cols() == cfg.num_verbs);
    CHECK(v.minCoeff() > 0.0);
    CHECK(v.maxCoeff() < 1.0);
    CHECK(model.detect(g, true).auxiliary.size() == static_cast<std::size_t>(cfg.detector_depth - 1));
  }
  SUBCASE("zero-weight verb head gives 0.5") {
    HoiModel m(cfg, 3);
    for (const auto& [name, p] : m.params().entries()) {
      if (name.rfind("verb.head.1.", 0) == 0) ad::Var(p).mutable_value().setZero();
    }
    const FeatureGrid g = m.inject(random_matrix(rng, 16, cfg.dim));
    CHECK((m.verb_scores(g, m.detect(g).embeddings).value().array() == 0.5).all());
  }
}

TEST_CASE("two-stage training") {
  const TrainConfig cfg = tiny_train();
  const auto scenes = generate_dataset(5, 10, tiny_profile());
  const auto data = prepare_samples(scenes, cfg.model);

  SUBCASE("stage groups leave the other heads untouched") {
    HoiModel model(cfg.model, 9);
    const auto verb_before = model.params().hash("verb.");
    const auto int_before = model.params().hash("int.");
    const auto det_before = model.params().hash("det.");
    std::ostringstream log;
    const auto h1 = train_stage(model, 1, data, cfg, &log);
    CHECK(h1.size() == 1);
    CHECK(model.params().hash("verb.") == verb_before);
    CHECK(model.params().hash("int.") != int_before);
    CHECK(model.params().hash("det.") != det_before);
    const auto j = nlohmann::json::parse(log.str());
    CHECK(j.at("stage") == 1);
    CHECK(j.at("sampler").at("draws") == 10);
    const auto int_after = model.params().hash("int.");
    train_stage(model, 2, data, cfg);
    CHECK(model.params().hash("int.") == int_after);
    CHECK(model.params().hash("verb.") != verb_before);
  }
  SUBCASE("fixed seed gives bit-identical runs and checkpoints") {
    std::string a_bytes, b_bytes;
    std::vector<EpochLog> ha, hb;
    for (int run = 0; run < 2; ++run) {
      HoiModel model(cfg.model, 9);
      auto& h = run == 0 ? ha : hb;
      h = train_stage(model, 1, data, cfg);
      const auto path = std::filesystem::temp_directory_path() / ("hoi_det_" + std::to_string(run) + ".ckpt");
      save_checkpoint(make_checkpoint(model, cfg, 1, h), path);
      std::ifstream in(path, std::ios::binary);
      (run == 0 ? a_bytes : b_bytes).assign(std::istreambuf_iterator<char>(in), {});
      std::filesystem::remove(path);
    }
    CHECK(ha[0].to_json().dump() == hb[0].to_json().dump());
    CHECK(a_bytes == b_bytes);
  }
  SUBCASE("checkpoint round trip") {
    HoiModel model(cfg.model, 9);
    const auto h = train_stage(model, 1, data, cfg);
    const auto path = std::filesystem::temp_directory_path() / "hoi_roundtrip.ckpt";
    save_checkpoint(make_checkpoint(model, cfg, 1, h), path);
    const Checkpoint loaded = load_checkpoint(path);
    std::filesystem::remove(path);
    const HoiModel back = model_from_checkpoint(loaded);
    CHECK(back.params().hash() == model.params().hash());
    CHECK(config_from_checkpoint(loaded).to_json() == cfg.to_json());
    CHECK(loaded.meta.at("stage") == 1);
    CHECK(loaded.meta.at("history").size() == 1);
  }
  SUBCASE("non-finite loss aborts with the batch id") {
    HoiModel model(cfg.model, 9);
    ad::Var(model.params().get("det.queries")).mutable_value()(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_WITH_AS(train_stage(model, 1, data, cfg), doctest::Contains("batch 0"), TrainingDiverged);
  }
  SUBCASE("stage 2 on verbs only lowers the verb loss on a fixed set") {
    TrainConfig c = cfg;
    c.stage2_epochs = 8;
    c.lr = 2e-3;
    HoiModel model(c.model, 9);
    const auto h = train_stage(model, 2, data, c);
    CHECK(h.back().loss.l_verb < h.front().loss.l_verb);
  }
}

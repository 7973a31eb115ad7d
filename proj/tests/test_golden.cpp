#include "doctest.h"

#include "hoi/train.hpp"

#include <fstream>

using namespace hoi;

namespace {

Matrix matrix_from(const nlohmann::json& rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.at(0).size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rows.at(r).at(c).get<double>();
  }
  return m;
}

double max_diff(const Matrix& a, const Matrix& b) {
  REQUIRE(a.rows() == b.rows());
  REQUIRE(a.cols() == b.cols());
  return (a - b).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("detector and verb outputs match the golden fixture") {
  const std::string dir = HOI_TEST_DATA;
  const HoiModel model = model_from_checkpoint(load_checkpoint(dir + "/golden_model.ckpt"));
  std::ifstream in(dir + "/golden_outputs.json");
  const nlohmann::json golden = nlohmann::json::parse(in);
  const FeatureGrid grid = model.inject(matrix_from(golden.at("features")));
  const DetectorOutput det = model.detect(grid);
  CHECK(det.human_boxes.rows() == model.config().num_queries);
  CHECK(max_diff(det.human_boxes.value(), matrix_from(golden.at("human_boxes"))) <= 1e-6);
  CHECK(max_diff(det.object_boxes.value(), matrix_from(golden.at("object_boxes"))) <= 1e-6);
  CHECK(max_diff(det.class_probs.value(), matrix_from(golden.at("class_probs"))) <= 1e-6);
  const Matrix verbs = model.verb_scores(grid, det.embeddings).value();
  CHECK(verbs.cols() == model.config().num_verbs);
  CHECK(max_diff(verbs, matrix_from(golden.at("verb_scores"))) <= 1e-6);
}

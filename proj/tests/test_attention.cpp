#include "doctest.h"
#include "oracles.hpp"

#include "hoi/attention.hpp"

#include <random>

using namespace hoi;
using oracle::random_matrix;

namespace {

Matrix random_mask(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<Eigen::Index> pick(0, c - 1);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index t = 0; t < c; ++t) m(i, t) = coin(rng);
    m(i, pick(rng)) = 1.0;
  }
  return m;
}

FeatureGrid random_grid(std::mt19937_64& rng, int h, int w, int dim) {
  const GridSpec spec{h * 8, w * 8, h, w};
  return FeatureGrid{Var::constant(random_matrix(rng, h * w, dim)), sinusoidal_positional_encoding(spec, dim), h, w};
}

}  // namespace

TEST_CASE("masked attention") {
  std::mt19937_64 rng(21);
  SUBCASE("single active token returns its value row") {
    const Matrix q = random_matrix(rng, 1, 4), k = random_matrix(rng, 3, 4), v = random_matrix(rng, 3, 5);
    Matrix mask = Matrix::Zero(1, 3);
    mask(0, 1) = 1;
    Matrix w;
    const Var out = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), mask, &w);
    CHECK(w(0, 1) == 1.0);
    CHECK((out.value() - v.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("all-ones mask equals unmasked attention bitwise") {
    const Matrix q = random_matrix(rng, 3, 4), k = random_matrix(rng, 6, 4), v = random_matrix(rng, 6, 4);
    const Var a = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), Matrix::Ones(3, 6));
    const Var b = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), Matrix());
    CHECK(a.value() == b.value());
  }
  SUBCASE("reduced-matrix oracle, weight sums and masked-value independence") {
    for (int n = 0; n < 200; ++n) {
      const Eigen::Index nq = 1 + n % 4, nt = 3 + n % 9, d = 2 + n % 7;
      const Matrix q = random_matrix(rng, nq, d, -3, 3), k = random_matrix(rng, nt, d, -3, 3);
      Matrix v = random_matrix(rng, nt, d);
      const Matrix mask = random_mask(rng, nq, nt);
      Matrix w;
      const Matrix out = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), mask, &w).value();
      REQUIRE((out - oracle::reduced_attention(q, k, v, mask)).cwiseAbs().maxCoeff() <= 1e-10);
      for (Eigen::Index i = 0; i < nq; ++i) {
        REQUIRE(std::abs(w.row(i).cwiseProduct(mask.row(i)).sum() - 1.0) <= 1e-6);
        for (Eigen::Index t = 0; t < nt; ++t) {
          if (mask(i, t) == 0) REQUIRE(w(i, t) <= 1e-6);
        }
      }
      // Values at tokens no query may see are free to change.
      for (Eigen::Index t = 0; t < nt; ++t) {
        if (mask.col(t).sum() == 0) v.row(t).setConstant(1e6);
      }
      const Matrix again = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), mask).value();
      REQUIRE((again - out).cwiseAbs().maxCoeff() <= 1e-6);
    }
  }
  SUBCASE("three tokens, two active") {
    const Matrix q = random_matrix(rng, 1, 4), k = random_matrix(rng, 3, 4), v = random_matrix(rng, 3, 4);
    Matrix mask(1, 3);
    mask << 1, 0, 1;
    const Matrix out = masked_attention(Var::constant(q), Var::constant(k), Var::constant(v), mask).value();
    CHECK((out - oracle::reduced_attention(q, k, v, mask)).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("empty mask policy") {
  Matrix mask = Matrix::Zero(2, 3);
  mask(0, 2) = 1;
  AttentionStats stats;
  const Matrix fixed = apply_empty_mask_policy(mask, &stats, "unit/layer1");
  CHECK(stats.fallback_count == 1);
  CHECK(fixed.row(1).sum() == 3);
  CHECK(fixed.row(0) == mask.row(0));
  stats.fallback_enabled = false;
  try {
    apply_empty_mask_policy(mask, &stats, "unit/layer2");
    FAIL("expected an error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("unit/layer2, query 1") != std::string::npos);
  }
}

TEST_CASE("positional encoding") {
  const GridSpec spec{128, 128, 16, 16};
  const Matrix a = sinusoidal_positional_encoding(spec, 64);
  CHECK(a == sinusoidal_positional_encoding(spec, 64));
  CHECK(a.cwiseAbs().maxCoeff() == 1.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.rows(); ++j) REQUIRE(a.row(i) != a.row(j));
  }
  CHECK_THROWS_AS(sinusoidal_positional_encoding(spec, 30), std::invalid_argument);
}

TEST_CASE("decoder layer") {
  std::mt19937_64 rng(5);
  ParamStore store(3);
  const DecoderConfig cfg{1, 2, 8, 16, 0.0};
  const DecoderLayer layer(store, "l", cfg);
  const FeatureGrid grid = random_grid(rng, 2, 3, 8);

  SUBCASE("zero queries") {
    const Var out = layer.forward(Var::constant(Matrix(0, 8)), grid, Matrix(), Matrix(), nullptr, nullptr, "t");
    CHECK(out.rows() == 0);
  }
  SUBCASE("identical queries with identical masks give identical rows") {
    Matrix q(3, 8);
    const Matrix row = random_matrix(rng, 1, 8);
    q << row, random_matrix(rng, 1, 8), row;
    Matrix mask = Matrix::Ones(3, 6);
    mask(0, 4) = mask(2, 4) = 0;
    const Matrix out = layer.forward(Var::constant(q), grid, mask, Matrix(), nullptr, nullptr, "t").value();
    CHECK((out.row(0) - out.row(2)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("matches an independent re-evaluation from the serialized parameters") {
    const Matrix q = random_matrix(rng, 3, 8);
    const Matrix mask = random_mask(rng, 3, 6);
    const Matrix out = layer.forward(Var::constant(q), grid, mask, Matrix(), nullptr, nullptr, "t").value();

    const Checkpoint ck = Checkpoint::from_params(store, {});
    const auto P = [&](const std::string& n) { return *ck.find(n); };
    const auto lin = [&](const Matrix& x, const std::string& n) -> Matrix {
      return (x * P(n + ".w")).rowwise() + P(n + ".b").row(0);
    };
    const auto ln = [&](const Matrix& x, const std::string& n) {
      Matrix y(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        y.row(i) = ((x.row(i).array() - mu) / std::sqrt(var + 1e-5)).matrix().cwiseProduct(P(n + ".g").row(0)) +
                   P(n + ".b").row(0);
      }
      return y;
    };
    const auto mha = [&](const Matrix& qi, const Matrix& ki, const Matrix& vi, const Matrix& m, const std::string& n) {
      const Matrix Q = lin(qi, n + ".q"), K = lin(ki, n + ".k"), V = lin(vi, n + ".v");
      Matrix cat(Q.rows(), 8);
      for (int h = 0; h < 2; ++h) {
        Matrix mm = m.size() ? m : Matrix::Ones(Q.rows(), K.rows());
        cat.middleCols(h * 4, 4) =
            oracle::reduced_attention(Q.middleCols(h * 4, 4), K.middleCols(h * 4, 4), V.middleCols(h * 4, 4), mm);
      }
      return lin(cat, n + ".o");
    };
    Matrix t = q;
    const Matrix s = ln(t, "l.ln1");
    t += mha(s, s, s, Matrix(), "l.sa");
    t += mha(ln(t, "l.ln2"), grid.values.value() + grid.pos, grid.values.value(), mask, "l.ca");
    const Matrix f = ln(t, "l.ln3");
    t += lin(lin(f, "l.ffn.0").cwiseMax(0.0), "l.ffn.1");
    CHECK((out - t).cwiseAbs().maxCoeff() < 1e-8);
  }
  SUBCASE("token permutation with positions and mask leaves outputs unchanged") {
    const Matrix q = random_matrix(rng, 2, 8);
    const Matrix mask = random_mask(rng, 2, 6);
    const Matrix out = layer.forward(Var::constant(q), grid, mask, Matrix(), nullptr, nullptr, "t").value();
    std::vector<int> perm = {4, 0, 5, 2, 1, 3};
    FeatureGrid g2 = grid;
    Matrix values(6, 8), pos(6, 8), m2(2, 6);
    for (int t = 0; t < 6; ++t) {
      values.row(t) = grid.values.value().row(perm[t]);
      pos.row(t) = grid.pos.row(perm[t]);
      m2.col(t) = mask.col(perm[t]);
    }
    g2.values = Var::constant(values);
    g2.pos = pos;
    const Matrix out2 = layer.forward(Var::constant(q), g2, m2, Matrix(), nullptr, nullptr, "t").value();
    CHECK((out - out2).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("token ops count active tokens per query row") {
    Matrix mask = Matrix::Zero(2, 6);
    mask(0, 1) = mask(0, 2) = 1;
    AttentionStats stats;
    layer.forward(Var::constant(random_matrix(rng, 2, 8)), grid, mask, Matrix(), &stats, nullptr, "t");
    CHECK(stats.token_ops == 2 + 6);
    CHECK(stats.fallback_count == 1);
  }
}

TEST_CASE("prediction heads") {
  std::mt19937_64 rng(8);
  ParamStore store(1);
  const Var x = Var::constant(random_matrix(rng, 5, 8, -20, 20));
  SUBCASE("boxes stay valid inside the unit square") {
    const Matrix b = PredictionHead(store, "h", HeadKind::human_box, 8, 4, 2).predict(x).value();
    for (Eigen::Index i = 0; i < b.rows(); ++i) {
      CHECK(b.row(i).minCoeff() >= 0.0);
      CHECK(b.row(i).maxCoeff() <= 1.0);
      CHECK(b(i, 0) <= b(i, 2));
      CHECK(b(i, 1) <= b(i, 3));
    }
    const Matrix extreme = PredictionHead::squash(HeadKind::object_box, Var::constant(random_matrix(rng, 50, 4, -60, 60))).value();
    CHECK(extreme.minCoeff() >= 0.0);
    CHECK(extreme.maxCoeff() <= 1.0);
  }
  SUBCASE("class head rows sum to one") {
    const Matrix c = PredictionHead(store, "c", HeadKind::object_class, 8, 4, 0).predict(x).value();
    for (Eigen::Index i = 0; i < c.rows(); ++i) CHECK(std::abs(c.row(i).sum() - 1.0) <= 1e-6);
  }
  SUBCASE("verb head on zero logits") {
    const Matrix v = PredictionHead::squash(HeadKind::verb, Var::constant(Matrix::Zero(3, 4))).value();
    CHECK((v.array() == 0.5).all());
  }
}

TEST_CASE("gradients match central differences") {
  std::mt19937_64 rng(17);
  SUBCASE("masked attention") {
    for (int n = 0; n < 10; ++n) {
      const Var q = Var::parameter(random_matrix(rng, 1 + n % 4, 6));
      const Var k = Var::parameter(random_matrix(rng, 4 + n % 12, 6));
      const Var v = Var::parameter(random_matrix(rng, k.rows(), 5));
      const Matrix mask = random_mask(rng, q.rows(), k.rows());
      const Matrix w = random_matrix(rng, q.rows(), 5);
      const double err = oracle::gradient_error({q, k, v}, [&] {
        return ad::sum(ad::mul(masked_attention(q, k, v, mask), Var::constant(w)));
      });
      CHECK(err < 1e-4);
    }
  }
  SUBCASE("decoder layer parameters") {
    ParamStore store(4);
    const DecoderLayer layer(store, "g", DecoderConfig{1, 2, 8, 12, 0.0});
    const FeatureGrid grid = random_grid(rng, 2, 2, 8);
    const Var q = Var::parameter(random_matrix(rng, 3, 8));
    const Matrix mask = random_mask(rng, 3, 4), w = random_matrix(rng, 3, 8);
    std::vector<Var> params{q};
    for (const auto& [name, p] : store.entries()) params.push_back(p);
    const double err = oracle::gradient_error(params, [&] {
      return ad::sum(ad::mul(layer.forward(q, grid, mask, Matrix(), nullptr, nullptr, "g"), Var::constant(w)));
    });
    CHECK(err < 1e-4);
  }
}

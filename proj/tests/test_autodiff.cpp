#include "doctest.h"
#include "oracles.hpp"

#include "hoi/autodiff.hpp"

#include <random>

using namespace hoi::ad;
using oracle::random_matrix;

namespace {

Var weighted(const Var& out, std::mt19937_64& rng) {
  return sum(mul(out, Var::constant(random_matrix(rng, out.rows(), out.cols()))));
}

}  // namespace

TEST_CASE("elementwise and structural ops have correct gradients") {
  std::mt19937_64 rng(2);
  const Var a = Var::parameter(random_matrix(rng, 3, 4));
  const Var b = Var::parameter(random_matrix(rng, 3, 4, 0.5, 2.0));
  const Var row = Var::parameter(random_matrix(rng, 1, 4));
  const Var col = Var::parameter(random_matrix(rng, 3, 1));
  const Var c = Var::parameter(random_matrix(rng, 4, 2));
  const Var d = Var::parameter(random_matrix(rng, 5, 4));

  const std::vector<std::pair<const char*, std::function<Var()>>> cases = {
      {"add/sub/mul", [&] { return weighted(a + b * a - b, rng); }},
      {"div", [&] { return weighted(div(a, b), rng); }},
      {"scale/add_scalar", [&] { return weighted(add_scalar(scale(a, -1.7), 0.3), rng); }},
      {"add_row", [&] { return weighted(add_row(a, row), rng); }},
      {"mul_col", [&] { return weighted(mul_col(a, col), rng); }},
      {"matmul", [&] { return weighted(matmul(a, c), rng); }},
      {"matmul_bt", [&] { return weighted(matmul_bt(a, d), rng); }},
      {"relu", [&] { return weighted(relu(a), rng); }},
      {"sigmoid", [&] { return weighted(sigmoid(a), rng); }},
      {"abs", [&] { return weighted(abs(a), rng); }},
      {"log", [&] { return weighted(log(b), rng); }},
      {"minimum/maximum", [&] { return weighted(minimum(a, b) + maximum(a, scale(b, -1.0)), rng); }},
      {"clamp_min", [&] { return weighted(clamp_min(a, 0.1), rng); }},
      {"mean/row_sum", [&] { return mean(row_sum(mul(a, a))); }},
      {"row_max", [&] { return weighted(row_max(a), rng); }},
      {"slices", [&] { return weighted(slice_cols(a, 1, 2), rng) + weighted(slice_rows(a, 1, 2), rng); }},
      {"gather_rows", [&] { return weighted(gather_rows(a, {2, 0, 2}), rng); }},
      {"concat", [&] { return weighted(concat_cols({a, b}), rng) + weighted(concat_rows({a, d}), rng); }},
      {"softmax", [&] { return weighted(softmax_rows(a), rng); }},
      {"layer_norm", [&] { return weighted(layer_norm_rows(a, row, scale(row, 0.5)), rng); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    // Fix the random weights by reseeding before every evaluation.
    const auto seeded = [&, f = f] {
      rng.seed(99);
      return f();
    };
    CHECK(oracle::gradient_error({a, b, row, col, c, d}, seeded) < 1e-4);
  }
}

TEST_CASE("loss primitives") {
  std::mt19937_64 rng(6);
  const Var logits = Var::parameter(random_matrix(rng, 4, 3, -3, 3));
  SUBCASE("bce_with_logits value and gradient") {
    Matrix t(4, 3);
    t << 1, 0, 1, 0, 0, 1, 1, 1, 0, 0, 1, 0;
    double expect = 0;
    for (Eigen::Index i = 0; i < 12; ++i) {
      const double p = 1 / (1 + std::exp(-logits.value().data()[i]));
      expect -= t.data()[i] * std::log(p) + (1 - t.data()[i]) * std::log(1 - p);
    }
    CHECK(bce_with_logits(logits, t).scalar() == doctest::Approx(expect / 12).epsilon(1e-12));
    CHECK(oracle::gradient_error({logits}, [&] { return bce_with_logits(logits, t); }) < 1e-4);
  }
  SUBCASE("weighted cross-entropy value and gradient") {
    const std::vector<int> targets = {0, 2, 1, 0};
    const std::vector<double> w = {0.1, 1.0, 1.0};
    double num = 0, den = 0;
    for (int i = 0; i < 4; ++i) {
      const auto r = logits.value().row(i);
      const double lse = std::log(r.array().exp().sum());
      num += w[targets[i]] * (lse - r(targets[i]));
      den += w[targets[i]];
    }
    CHECK(cross_entropy_rows(logits, targets, w).scalar() == doctest::Approx(num / den).epsilon(1e-12));
    CHECK(oracle::gradient_error({logits}, [&] { return cross_entropy_rows(logits, targets, w); }) < 1e-4);
  }
  SUBCASE("masked softmax with sentinel") {
    Matrix mask(4, 3);
    mask << 1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 0, 1;
    const Matrix s = masked_softmax_rows(logits, mask).value();
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(std::abs(s.row(i).sum() - 1.0) < 1e-12);
    CHECK(s(1, 1) == 1.0);
    CHECK(s(0, 1) == 0.0);
    const Matrix w = random_matrix(rng, 4, 3);
    CHECK(oracle::gradient_error({logits}, [&] {
            return sum(mul(masked_softmax_rows(logits, mask), Var::constant(w)));
          }) < 1e-4);
  }
}

TEST_CASE("tape bookkeeping") {
  const Var p = Var::parameter(Matrix::Constant(1, 1, 2.0));
  SUBCASE("no tape means no recording") {
    const Var y = mul(p, p);
    CHECK(y.node()->backward == nullptr);
  }
  SUBCASE("constants do not record") {
    Tape tape;
    TapeScope scope(tape);
    const Var c = Var::constant(Matrix::Ones(2, 2));
    add(c, c);
    CHECK(tape.size() == 0);
  }
  SUBCASE("gradient accumulates over repeated use") {
    Tape tape;
    Var y;
    {
      TapeScope scope(tape);
      y = add(mul(p, p), scale(p, 3.0));
    }
    tape.backward(y);
    CHECK(p.grad()(0, 0) == doctest::Approx(7.0));
  }
}

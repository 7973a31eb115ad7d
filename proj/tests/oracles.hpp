// Independent reference computations used by the tests.
#pragma once

#include "hoi/autodiff.hpp"
#include "hoi/mask_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using hoi::ad::Matrix;
using hoi::ad::Var;

// Direct per-cell evaluation of the inclusive box predicate.
inline hoi::TokenMask rasterize(const hoi::Box& raw, const hoi::GridSpec& spec) {
  hoi::Box b = raw;
  b.w1 = std::clamp(b.w1, 0.0, double(spec.image_width));
  b.w2 = std::clamp(b.w2, 0.0, double(spec.image_width));
  b.h1 = std::clamp(b.h1, 0.0, double(spec.image_height));
  b.h2 = std::clamp(b.h2, 0.0, double(spec.image_height));
  hoi::TokenMask m(spec.grid_height, spec.grid_width);
  for (int x = 0; x < spec.grid_height; ++x) {
    for (int y = 0; y < spec.grid_width; ++y) {
      const double px = x * double(spec.image_height) / spec.grid_height;
      const double py = y * double(spec.image_width) / spec.grid_width;
      m.set(x, y, b.h1 <= px && px <= b.h2 && b.w1 <= py && py <= b.w2);
    }
  }
  return m;
}

// softmax over the active columns only, then the weighted sum of value rows.
inline Matrix reduced_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Matrix& mask) {
  Matrix out = Matrix::Zero(q.rows(), v.cols());
  const double scale = 1.0 / std::sqrt(double(q.cols()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    std::vector<Eigen::Index> active;
    for (Eigen::Index t = 0; t < k.rows(); ++t) {
      if (mask.size() == 0 || mask(i, t) != 0.0) active.push_back(t);
    }
    std::vector<double> logits;
    for (auto t : active) logits.push_back(q.row(i).dot(k.row(t)) * scale);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (double& l : logits) z += (l = std::exp(l - mx));
    for (std::size_t a = 0; a < active.size(); ++a) out.row(i) += (logits[a] / z) * v.row(active[a]);
  }
  return out;
}

// Worst relative error between analytic and central-difference gradients,
// measured per parameter tensor as ‖g_a - g_n‖ / max(‖g_a‖, ‖g_n‖, 1e-6). The floor keeps
// tensors whose true gradient is zero (key biases under softmax) from
// reporting finite-difference noise as error.
inline double gradient_error(std::vector<Var> params, const std::function<Var()>& loss, double step = 1e-5) {
  for (auto& p : params) p.zero_grad();
  hoi::ad::Tape tape;
  {
    hoi::ad::TapeScope scope(tape);
    const Var l = loss();
    tape.backward(l);
  }
  double worst = 0;
  for (auto& p : params) {
    Matrix analytic = p.grad().size() == 0 ? Matrix::Zero(p.rows(), p.cols()) : p.grad();
    Matrix numeric(p.rows(), p.cols());
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      double& x = p.mutable_value().data()[i];
      const double saved = x;
      x = saved + step;
      const double up = loss().scalar();
      x = saved - step;
      const double down = loss().scalar();
      x = saved;
      numeric.data()[i] = (up - down) / (2 * step);
    }
    const double denom = std::max({analytic.norm(), numeric.norm(), 1e-6});
    worst = std::max(worst, (analytic - numeric).norm() / denom);
  }
  return worst;
}

// All-point interpolated AP by walking every recall level and taking the best
// precision at that recall or beyond.
inline double brute_force_ap(const std::vector<bool>& tp_sorted, int num_gt) {
  if (num_gt == 0) return 0;
  const std::size_t n = tp_sorted.size();
  std::vector<double> prec(n), rec(n);
  int tps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tps += tp_sorted[i];
    prec[i] = double(tps) / double(i + 1);
    rec[i] = double(tps) / num_gt;
  }
  double ap = 0;
  for (int level = 1; level <= num_gt; ++level) {
    const double r = double(level) / num_gt;
    double best = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (rec[i] >= r - 1e-12) best = std::max(best, prec[i]);
    }
    ap += best / num_gt;
  }
  return ap;
}

// Minimum total cost over every injective row → column assignment.
inline double brute_force_assignment(const Matrix& cost, std::vector<int>* best_cols = nullptr) {
  std::vector<int> cols(static_cast<std::size_t>(cost.cols()));
  std::iota(cols.begin(), cols.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double c = 0;
    for (Eigen::Index r = 0; r < cost.rows(); ++r) c += cost(r, cols[static_cast<std::size_t>(r)]);
    if (c < best) {
      best = c;
      if (best_cols) best_cols->assign(cols.begin(), cols.begin() + cost.rows());
    }
  } while (std::next_permutation(cols.begin(), cols.end()));
  return best;
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace oracle

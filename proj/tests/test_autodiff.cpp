#include <doctest.h>

#include <random>

#include "sketchalign/autodiff.hpp"

using namespace sketchalign;
using ad::Mat;
using Tape = ad::Tape;

namespace {

Mat random_mat(std::mt19937_64& rng, int rows, int cols, double scale = 1.0) {
  Mat m(rows, cols);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

// Central-difference check of d(graph)/d(leaf) for every leaf coordinate.
void check_gradients(const std::function<Tape::Var(Tape&, const std::vector<Tape::Var>&)>& graph,
                     std::vector<Mat> leaves, double tol = 1e-7, double step = 1e-6) {
  Tape tape;
  std::vector<Tape::Var> vars;
  for (const auto& leaf : leaves) vars.push_back(tape.leaf(leaf));
  Tape::Var root = graph(tape, vars);
  tape.backward(root);

  for (size_t l = 0; l < leaves.size(); ++l) {
    for (int idx = 0; idx < leaves[l].size(); ++idx) {
      auto eval = [&](double delta) {
        std::vector<Mat> shifted = leaves;
        shifted[l].data()[idx] += delta;
        Tape t2;
        std::vector<Tape::Var> vs;
        for (const auto& leaf : shifted) vs.push_back(t2.leaf(leaf));
        return t2.value(graph(t2, vs))(0, 0);
      };
      double fd = (eval(step) - eval(-step)) / (2.0 * step);
      double analytic = tape.grad(vars[l]).data()[idx];
      double denom = std::max({1.0, std::abs(fd), std::abs(analytic)});
      INFO("leaf ", l, " coord ", idx);
      CHECK(std::abs(fd - analytic) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul chain gradient") {
  std::mt19937_64 rng(1);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) {
        return t.sum(t.matmul(v[0], v[1]));
      },
      {random_mat(rng, 3, 4), random_mat(rng, 4, 2)});
}

TEST_CASE("matmul_nt and slice and concat gradients") {
  std::mt19937_64 rng(2);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) {
        auto a = t.slice_cols(v[0], 1, 2);
        auto b = t.concat_cols(a, v[1]);
        return t.sum(t.matmul_nt(b, b));
      },
      {random_mat(rng, 3, 4), random_mat(rng, 3, 2)});
}

TEST_CASE("row broadcast, hadamard, scale") {
  std::mt19937_64 rng(3);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) {
        auto x = t.add_rowvec(v[0], v[1]);
        return t.mean(t.hadamard(t.scale(x, 1.7), v[0]));
      },
      {random_mat(rng, 4, 3), random_mat(rng, 1, 3)});
}

TEST_CASE("gelu gradient") {
  std::mt19937_64 rng(4);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) { return t.sum(t.gelu(v[0])); },
      {random_mat(rng, 3, 5, 2.0)});
}

TEST_CASE("layer norm gradient") {
  std::mt19937_64 rng(5);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) {
        return t.sum(t.layer_norm(v[0], v[1], v[2]));
      },
      {random_mat(rng, 3, 6), random_mat(rng, 1, 6), random_mat(rng, 1, 6)}, 1e-6);
}

TEST_CASE("masked softmax gradient") {
  std::mt19937_64 rng(6);
  Mat mask = Mat::Zero(3, 4);
  mask(0, 3) = -std::numeric_limits<double>::infinity();
  mask(2, 0) = -std::numeric_limits<double>::infinity();
  Mat weights = random_mat(rng, 3, 4);
  check_gradients(
      [mask, weights](Tape& t, const std::vector<Tape::Var>& v) {
        return t.weighted_sum(t.softmax_rows(v[0], mask), weights);
      },
      {random_mat(rng, 3, 4)});
}

TEST_CASE("masked log softmax pick gradient") {
  std::mt19937_64 rng(7);
  Mat mask = Mat::Zero(3, 5);
  mask(1, 4) = -std::numeric_limits<double>::infinity();
  std::vector<int> picks = {2, 0, 4};
  check_gradients(
      [mask, picks](Tape& t, const std::vector<Tape::Var>& v) {
        return t.sum(t.masked_log_softmax_pick(v[0], mask, picks));
      },
      {random_mat(rng, 3, 5)});
}

TEST_CASE("gather rows accumulates through repeats") {
  std::mt19937_64 rng(8);
  std::vector<int> rows = {0, 2, 2, 1};
  check_gradients(
      [rows](Tape& t, const std::vector<Tape::Var>& v) {
        return t.sum(t.gather_rows(v[0], rows));
      },
      {random_mat(rng, 3, 4)});
}

TEST_CASE("sigmoid family gradients") {
  std::mt19937_64 rng(9);
  check_gradients(
      [](Tape& t, const std::vector<Tape::Var>& v) {
        auto s = t.sigmoid(v[0]);
        auto ls = t.log_sigmoid(t.scale(v[0], -1.3));
        return t.sum(t.add(s, t.exp(t.scale(ls, 0.5))));
      },
      {random_mat(rng, 2, 3, 3.0)});
}

TEST_CASE("clipped surrogate value and gradient") {
  SUBCASE("at rho=1 the kl term vanishes and slope matches the advantage") {
    Tape tape;
    Mat delta = Mat::Zero(2, 1);
    Mat adv(2, 1);
    adv << 0.7, -1.1;
    auto d = tape.leaf(delta);
    auto obj = tape.clipped_surrogate(d, adv, 0.2, 0.05);
    // value: mean of rho*A at rho=1, KL exactly zero
    CHECK(tape.value(obj)(0, 0) == doctest::Approx(0.5 * (0.7 - 1.1)));
    tape.backward(obj);
    CHECK(tape.grad(d)(0, 0) == doctest::Approx(0.5 * 0.7));
    CHECK(tape.grad(d)(1, 0) == doctest::Approx(0.5 * -1.1));
  }
  SUBCASE("clipping zeroes the gradient for large positive-advantage ratios") {
    Tape tape;
    Mat delta = Mat::Constant(1, 1, 0.5);  // rho ~ 1.65, above 1+eps
    Mat adv = Mat::Constant(1, 1, 2.0);
    auto d = tape.leaf(delta);
    auto obj = tape.clipped_surrogate(d, adv, 0.2, 0.0);
    CHECK(tape.value(obj)(0, 0) == doctest::Approx(1.2 * 2.0));
    tape.backward(obj);
    CHECK(tape.grad(d)(0, 0) == doctest::Approx(0.0));
  }
  SUBCASE("finite differences away from the kinks") {
    std::mt19937_64 rng(10);
    Mat adv = random_mat(rng, 4, 1, 1.5);
    check_gradients(
        [adv](Tape& t, const std::vector<Tape::Var>& v) {
          return t.clipped_surrogate(v[0], adv, 0.2, 0.03);
        },
        {random_mat(rng, 4, 1, 0.08)});  // ratios stay inside the clip band
  }
}

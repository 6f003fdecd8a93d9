#include <doctest.h>

#include <numbers>

#include "sketchalign/residuals.hpp"
#include "test_helpers.hpp"

using namespace sketchalign;

namespace {

Eigen::MatrixXd fd_jacobian(const ResidualSystem& system, const Eigen::VectorXd& x,
                            double step = 1e-6) {
  Eigen::MatrixXd jac(system.num_residuals(), system.num_variables());
  for (int j = 0; j < system.num_variables(); ++j) {
    Eigen::VectorXd hi = x, lo = x;
    hi[j] += step;
    lo[j] -= step;
    jac.col(j) = (system.residuals(hi) - system.residuals(lo)) / (2.0 * step);
  }
  return jac;
}

int analytic_nullspace_dim(const Sketch& sketch, const ConstraintSequence& seq) {
  SolveReport report = solve(sketch, seq);
  REQUIRE(report.solvable());
  return static_cast<int>(report.rank_analysis->nullspace_basis.cols());
}

}  // namespace

TEST_CASE("residual values") {
  SUBCASE("horizontal point pair measures dy") {
    Sketch s = test::two_point_sketch(3.0, 4.0);
    ConstraintSequence seq{{{ConstraintKind::Horizontal, {0, 1}, std::nullopt}}};
    ResidualSystem system(s, seq);
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(), 2);
    Eigen::VectorXd r = system.residuals(x);
    REQUIRE(r.size() == 1);
    CHECK(r[0] == doctest::Approx(4.0));
  }
  SUBCASE("satisfied distance is zero") {
    Sketch s = test::two_point_sketch(3.0, 4.0);
    ResidualSystem system(s, test::f2_constraints());
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(), 2);
    CHECK(system.residuals(x)[0] == doctest::Approx(0.0));
  }
  SUBCASE("perpendicular axis-aligned lines are satisfied") {
    Sketch s = test::unit_line_cross();
    ConstraintSequence seq{{{ConstraintKind::Perpendicular, {1, 2}, std::nullopt}}};
    ResidualSystem system(s, seq);
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(),
                                               system.num_variables());
    CHECK(system.residuals(x)[0] == doctest::Approx(0.0));
  }
}

TEST_CASE("jacobian closed forms") {
  SUBCASE("distance row is the unit direction") {
    Sketch s = test::two_point_sketch(3.0, 4.0);
    ResidualSystem system(s, test::f2_constraints());
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(), 2);
    Eigen::MatrixXd jac = system.jacobian(x);
    CHECK(jac(0, 0) == doctest::Approx(0.6));
    CHECK(jac(0, 1) == doctest::Approx(0.8));
  }
  SUBCASE("horizontal row over two free points") {
    Sketch s({Primitive::point(0, 0, 0, true), Primitive::point(1, 1, 1),
              Primitive::point(2, 2, 2)});
    ConstraintSequence seq{{{ConstraintKind::Horizontal, {1, 2}, std::nullopt}}};
    ResidualSystem system(s, seq);
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(), 4);
    Eigen::MatrixXd jac = system.jacobian(x);
    CHECK(jac(0, 0) == doctest::Approx(0.0));
    CHECK(jac(0, 1) == doctest::Approx(-1.0));
    CHECK(jac(0, 2) == doctest::Approx(0.0));
    CHECK(jac(0, 3) == doctest::Approx(1.0));
  }
  SUBCASE("zero constraints give an empty jacobian") {
    Sketch s = test::two_point_sketch(1.0, 1.0);
    ResidualSystem system(s, {});
    auto x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(), 2);
    CHECK(system.jacobian(x).rows() == 0);
    CHECK(system.jacobian(x).cols() == 2);
  }
}

TEST_CASE("jacobian matches central finite differences on random systems") {
  std::mt19937_64 rng(13);
  int tested = 0;
  while (tested < 100) {
    Sketch s = test::random_sketch(rng, 3 + tested % 6);
    ConstraintSequence seq;
    for (int c = 0; c < 4; ++c) {
      if (auto item = test::random_constraint(s, rng)) seq.items.push_back(*item);
    }
    if (seq.empty()) continue;
    ResidualSystem system(s, seq);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(),
                                                          system.num_variables());
    // perturb away from the constructed geometry but stay nondegenerate
    for (int i = 0; i < x.size(); ++i) {
      x[i] += std::uniform_real_distribution<double>(-0.05, 0.05)(rng);
    }
    Eigen::MatrixXd analytic = system.jacobian(x);
    Eigen::MatrixXd fd = fd_jacobian(system, x);
    double worst = 0.0;
    for (int i = 0; i < analytic.rows(); ++i) {
      for (int j = 0; j < analytic.cols(); ++j) {
        double denom = std::max({1.0, std::abs(analytic(i, j)), std::abs(fd(i, j))});
        worst = std::max(worst, std::abs(analytic(i, j) - fd(i, j)) / denom);
      }
    }
    CHECK(worst < 1e-6);
    ++tested;
  }
}

TEST_CASE("rank analysis") {
  SolveOptions opts;
  SUBCASE("identity") {
    RankAnalysis r = rank_analysis(Eigen::MatrixXd::Identity(2, 2), opts);
    CHECK(r.rank == 2);
    CHECK(r.nullspace_basis.cols() == 0);
    CHECK_FALSE(r.redundant);
  }
  SUBCASE("duplicate rows") {
    Eigen::MatrixXd j(2, 2);
    j << 1, 0, 1, 0;
    RankAnalysis r = rank_analysis(j, opts);
    CHECK(r.rank == 1);
    REQUIRE(r.nullspace_basis.cols() == 1);
    CHECK(std::abs(r.nullspace_basis(1, 0)) == doctest::Approx(1.0));
    CHECK(r.redundant);
  }
  SUBCASE("empty jacobian") {
    RankAnalysis r = rank_analysis(Eigen::MatrixXd(0, 3), opts, 0);
    CHECK(r.rank == 0);
    CHECK(r.nullspace_basis.cols() == 3);
    CHECK_FALSE(r.redundant);
  }
  SUBCASE("basis is orthonormal") {
    std::mt19937_64 rng(3);
    Eigen::MatrixXd j(3, 6);
    for (int i = 0; i < j.size(); ++i) {
      j.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
    }
    RankAnalysis r = rank_analysis(j, opts);
    Eigen::MatrixXd gram =
        r.nullspace_basis.transpose() * r.nullspace_basis;
    CHECK((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).norm() < 1e-10);
  }
}

TEST_CASE("solve fixtures") {
  SUBCASE("already satisfied leaves geometry untouched") {
    Sketch s = test::two_point_sketch(5.0, 0.0);
    SolveReport report = solve(s, test::f3_constraints());
    REQUIRE(report.solvable());
    CHECK(report.iterations == 0);
    CHECK(report.solved_sketch->at(1).params[0] == 5.0);  // bitwise: no step taken
    CHECK(report.solved_sketch->at(1).params[1] == 0.0);
    CHECK(report.status.category == SketchCategory::FullyConstrained);
  }
  SUBCASE("F3 converges to the nearest root") {
    Sketch s = test::two_point_sketch(4.0, 1.0);
    SolveReport report = solve(s, test::f3_constraints());
    REQUIRE(report.solvable());
    CHECK(report.status.category == SketchCategory::FullyConstrained);
    CHECK(report.solved_sketch->at(1).params[0] == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(report.solved_sketch->at(1).params[1] == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("F4 is not solvable") {
    Sketch s = test::two_point_sketch(4.0, 1.0);
    SolveReport report = solve(s, test::f4_constraints());
    CHECK_FALSE(report.solvable());
    CHECK(report.status.category == SketchCategory::NotSolvable);
    CHECK(report.status.per_entity_fc.empty());
  }
  SUBCASE("F2 is under constrained with P free along the circle") {
    Sketch s = test::two_point_sketch(3.0, 4.0);
    SolveReport report = solve(s, test::f2_constraints());
    REQUIRE(report.solvable());
    CHECK(report.status.category == SketchCategory::UnderConstrained);
    CHECK_FALSE(report.status.per_entity_fc.at(1));
    CHECK(report.status.per_entity_fc.at(0));  // fixed anchor counts FC
    CHECK(report.status.fc_point_fraction == doctest::Approx(0.5));
  }
  SUBCASE("duplicate constraint is over-constrained but solvable") {
    Sketch s = test::two_point_sketch(5.0, 0.0);
    ConstraintSequence seq = test::f3_constraints();
    seq.items.push_back({ConstraintKind::Horizontal, {0, 1}, std::nullopt});
    SolveReport report = solve(s, seq);
    REQUIRE(report.solvable());
    CHECK(report.status.category == SketchCategory::OverConstrained);
    CHECK(report.status.oc_flag);
  }
  SUBCASE("inconsistent distances are not solvable and flag redundancy") {
    Sketch s = test::two_point_sketch(3.0, 4.0);
    ConstraintSequence seq{{{ConstraintKind::DistanceDim, {0, 1}, 5.0},
                            {ConstraintKind::DistanceDim, {0, 1}, 6.0}}};
    SolveReport report = solve(s, seq);
    CHECK(report.status.category == SketchCategory::NotSolvable);
    CHECK(report.status.oc_flag);
  }
}

TEST_CASE("nullspace dimension equals hand-counted degrees of freedom") {
  auto anchored = [](Primitive prim) {
    return Sketch({Primitive::point(0, -9.0, -9.0, true), std::move(prim)});
  };
  // free primitives alone
  CHECK(analytic_nullspace_dim(anchored(Primitive::point(1, 1, 1)), {}) == 2);
  CHECK(analytic_nullspace_dim(anchored(Primitive::line(1, 0, 0, 1, 1)), {}) == 4);
  CHECK(analytic_nullspace_dim(anchored(Primitive::circle(1, 0, 0, 1)), {}) == 3);
  CHECK(analytic_nullspace_dim(anchored(Primitive::arc(1, 0, 0, 1, 0.5, 2.0)), {}) == 5);
  // distance fixtures
  CHECK(analytic_nullspace_dim(test::two_point_sketch(3, 4), test::f2_constraints()) == 1);
  CHECK(analytic_nullspace_dim(test::two_point_sketch(5, 0), test::f3_constraints()) == 0);
  // two free points joined
  {
    Sketch s({Primitive::point(0, 0, 0, true), Primitive::point(1, 1, 1),
              Primitive::point(2, 1, 1)});
    ConstraintSequence seq{{{ConstraintKind::Coincident, {1, 2}, std::nullopt}}};
    CHECK(analytic_nullspace_dim(s, seq) == 2);
  }
  // free point pinned to the fixed anchor
  {
    Sketch s({Primitive::point(0, 2, 3, true), Primitive::point(1, 2, 3)});
    ConstraintSequence seq{{{ConstraintKind::Coincident, {1, 0}, std::nullopt}}};
    CHECK(analytic_nullspace_dim(s, seq) == 0);
  }
  // midpoint of a fixed line
  {
    Sketch s({Primitive::line(0, 0, 0, 2, 2, true), Primitive::point(1, 1, 1)});
    ConstraintSequence seq{{{ConstraintKind::Midpoint, {1, 0}, std::nullopt}}};
    CHECK(analytic_nullspace_dim(s, seq) == 0);
  }
  // concentric circles with both radii pinned still translate together
  {
    Sketch s({Primitive::point(0, 9, 9, true), Primitive::circle(1, 0, 0, 1),
              Primitive::circle(2, 0, 0, 2)});
    ConstraintSequence seq{{{ConstraintKind::Concentric, {1, 2}, std::nullopt},
                            {ConstraintKind::RadiusDim, {1}, 1.0},
                            {ConstraintKind::RadiusDim, {2}, 2.0}}};
    CHECK(analytic_nullspace_dim(s, seq) == 2);
  }
  // circle tangent to a fixed line
  {
    Sketch s({Primitive::line(0, 0, 0, 4, 0, true), Primitive::circle(1, 1, 1, 1)});
    ConstraintSequence seq{{{ConstraintKind::Tangent, {0, 1}, std::nullopt}}};
    CHECK(analytic_nullspace_dim(s, seq) == 2);
  }
  // line with length tied to a fixed line
  {
    Sketch s({Primitive::line(0, 0, 0, 2, 0, true), Primitive::line(1, 0, 1, 2, 1)});
    ConstraintSequence seq{{{ConstraintKind::Equal, {1, 0}, std::nullopt}}};
    CHECK(analytic_nullspace_dim(s, seq) == 3);
  }
}

TEST_CASE("classification is invariant to constraint order") {
  Sketch s = test::two_point_sketch(5.0, 0.0);
  ConstraintSequence seq = test::f3_constraints();
  seq.items.push_back({ConstraintKind::Horizontal, {0, 1}, std::nullopt});
  std::vector<std::vector<size_t>> orders = {{0, 1, 2}, {2, 1, 0}, {1, 2, 0}, {2, 0, 1}};
  for (const auto& order : orders) {
    ConstraintSequence permuted;
    for (size_t i : order) permuted.items.push_back(seq.items[i]);
    SolveReport report = solve(s, permuted);
    CHECK(report.status.category == SketchCategory::OverConstrained);
    CHECK(report.status.oc_flag);
  }
}

TEST_CASE("stability bins") {
  Rect unit{0.0, 0.0, 1.0, 1.0};
  auto one_point = [&](double x, double y) {
    return Sketch({Primitive::point(0, x, y, true)}, unit);
  };
  SUBCASE("identical geometry is stable") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 20; ++i) {
      Sketch s = test::random_sketch(rng, 4);
      for (int bins : {1, 2, 4, 9}) CHECK(stability_check(s, s, bins));
    }
  }
  SUBCASE("movement within one bin is stable") {
    CHECK(stability_check(one_point(0.10, 0.5), one_point(0.12, 0.5), 4));
  }
  SUBCASE("crossing a bin boundary is unstable") {
    CHECK_FALSE(stability_check(one_point(0.24, 0.5), one_point(0.26, 0.5), 4));
  }
}

TEST_CASE("incremental apply") {
  SUBCASE("infeasible third constraint is dropped") {
    Sketch s = test::two_point_sketch(4.0, 1.0);
    IncrementalResult result = incremental_apply(s, test::f4_constraints());
    CHECK(result.kept.size() == 2);
    CHECK(result.problematic == std::set<int>{2});
  }
  SUBCASE("consistent sequence keeps everything") {
    Sketch s = test::two_point_sketch(4.0, 1.0);
    IncrementalResult result = incremental_apply(s, test::f3_constraints());
    CHECK(result.problematic.empty());
    CHECK(result.kept.size() == 2);
  }
  SUBCASE("appended duplicate is flagged") {
    Sketch s = test::two_point_sketch(4.0, 1.0);
    ConstraintSequence seq = test::f3_constraints();
    seq.items.push_back(seq.items[1]);
    IncrementalResult result = incremental_apply(s, seq);
    CHECK(result.problematic == std::set<int>{2});
  }
  SUBCASE("kept sets re-classify clean") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
      Sketch s = test::random_sketch(rng, 4);
      ConstraintSequence seq;
      for (int c = 0; c < 6; ++c) {
        if (auto item = test::random_constraint(s, rng)) seq.items.push_back(*item);
      }
      IncrementalResult result = incremental_apply(s, seq);
      SolveReport report = solve(s, result.kept);
      CHECK(report.solvable());
      CHECK_FALSE(report.status.oc_flag);
    }
  }
}

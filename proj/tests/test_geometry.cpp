#include <doctest.h>

#include <numbers>

#include "test_helpers.hpp"

using namespace sketchalign;

TEST_CASE("dof per primitive kind") {
  CHECK(dof_of_primitive(PrimitiveKind::Point) == 2);
  CHECK(dof_of_primitive(PrimitiveKind::Line) == 4);
  CHECK(dof_of_primitive(PrimitiveKind::Circle) == 3);
  CHECK(dof_of_primitive(PrimitiveKind::Arc) == 5);
}

TEST_CASE("residual arity per constraint") {
  using PK = PrimitiveKind;
  CHECK(residual_arity(ConstraintKind::Coincident, {PK::Point, PK::Point}) == 2);
  CHECK(residual_arity(ConstraintKind::Parallel, {PK::Line, PK::Line}) == 1);
  CHECK(residual_arity(ConstraintKind::Midpoint, {PK::Point, PK::Line}) == 2);
  CHECK(residual_arity(ConstraintKind::Horizontal, {PK::Line}) == 1);
  CHECK(residual_arity(ConstraintKind::Concentric, {PK::Circle, PK::Arc}) == 2);
  CHECK_THROWS_AS(residual_arity(ConstraintKind::Perpendicular, {PK::Point, PK::Line}),
                  std::invalid_argument);
}

TEST_CASE("pack parameters") {
  SUBCASE("fixed point plus free line") {
    Sketch s({Primitive::point(0, 1.0, 2.0, true), Primitive::line(1, 0, 0, 1, 1)});
    auto packed = pack_parameters(s);
    CHECK(packed.size() == 4);
    CHECK_FALSE(packed.slices[0].has_value());
    CHECK(packed.slices[1]->offset == 0);
    CHECK(packed.slices[1]->length == 4);
  }
  SUBCASE("all fixed is empty") {
    Sketch s({Primitive::point(0, 1.0, 2.0, true), Primitive::circle(1, 0, 0, 1, true)});
    CHECK(pack_parameters(s).size() == 0);
  }
  SUBCASE("free point and circle") {
    Sketch s({Primitive::point(0, 0, 0, true), Primitive::point(1, 1, 1),
              Primitive::circle(2, 0, 0, 2)});
    auto packed = pack_parameters(s);
    CHECK(packed.size() == 5);
    CHECK(packed.slices[1]->offset == 0);
    CHECK(packed.slices[1]->length == 2);
    CHECK(packed.slices[2]->offset == 2);
    CHECK(packed.slices[2]->length == 3);
  }
}

TEST_CASE("pack/unpack round trip is bitwise exact") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    Sketch s = test::random_sketch(rng, 2 + trial % 9);
    auto packed = pack_parameters(s);
    Sketch back = unpack_parameters(s, packed.values);
    REQUIRE(back.primitives.size() == s.primitives.size());
    for (size_t i = 0; i < s.primitives.size(); ++i) {
      CHECK(back.primitives[i].params == s.primitives[i].params);
    }
    // packed length equals the dof sum over free primitives
    int dof = 0;
    for (const auto& p : s.primitives) {
      if (!p.fixed) dof += dof_of_primitive(p.kind);
    }
    CHECK(packed.size() == dof);
  }
}

TEST_CASE("measure dimension") {
  Sketch s({Primitive::point(0, 0, 0, true), Primitive::point(1, 3, 4),
            Primitive::circle(2, 1, 1, 2),
            Primitive::line(3, 0, 0, 2, 0), Primitive::line(4, 0, 0, 1, 1)});
  CHECK(measure_dimension(s, {ConstraintKind::DistanceDim, {0, 1}, 0.0}) == doctest::Approx(5.0));
  CHECK(measure_dimension(s, {ConstraintKind::DiameterDim, {2}, 0.0}) == doctest::Approx(4.0));
  CHECK(measure_dimension(s, {ConstraintKind::AngleDim, {3, 4}, 0.0}) ==
        doctest::Approx(std::numbers::pi / 4.0));
}

TEST_CASE("measure dimension is translation invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    Sketch s = test::random_sketch(rng, 5);
    auto c = test::random_constraint(s, rng);
    if (!c || !is_dimension(c->kind)) continue;
    double before = measure_dimension(s, *c);
    Sketch moved = s;
    double dx = 1.7, dy = -2.3;
    for (auto& prim : moved.primitives) {
      prim.params[0] += dx;
      prim.params[1] += dy;
      if (prim.kind == PrimitiveKind::Line) {
        prim.params[2] += dx;
        prim.params[3] += dy;
      }
    }
    CHECK(measure_dimension(moved, *c) == doctest::Approx(before).epsilon(1e-12));
  }
}

TEST_CASE("validate constraint") {
  Sketch s = test::unit_line_cross();
  SUBCASE("legal perpendicular") {
    CHECK_FALSE(validate_constraint(s, {ConstraintKind::Perpendicular, {1, 2}, std::nullopt}));
  }
  SUBCASE("illegal operand kinds") {
    auto err = validate_constraint(s, {ConstraintKind::Perpendicular, {0, 1}, std::nullopt});
    REQUIRE(err.has_value());
    CHECK(*err == ValidationError::IllegalOperandKinds);
  }
  SUBCASE("bad arity") {
    auto err = validate_constraint(s, {ConstraintKind::Coincident, {0}, std::nullopt});
    REQUIRE(err.has_value());
    CHECK(*err == ValidationError::BadArity);
  }
  SUBCASE("missing value on a dimension") {
    auto err = validate_constraint(s, {ConstraintKind::LengthDim, {1}, std::nullopt});
    REQUIRE(err.has_value());
    CHECK(*err == ValidationError::MissingValue);
  }
  SUBCASE("ref out of range") {
    auto err = validate_constraint(s, {ConstraintKind::Coincident, {0, 9}, std::nullopt});
    REQUIRE(err.has_value());
    CHECK(*err == ValidationError::RefOutOfRange);
  }
  SUBCASE("degenerate line") {
    Sketch deg({Primitive::point(0, 0, 0, true), Primitive::line(1, 1, 1, 1, 1)});
    auto err = validate_constraint(deg, {ConstraintKind::Horizontal, {1}, std::nullopt});
    REQUIRE(err.has_value());
    CHECK(*err == ValidationError::DegeneratePrimitive);
  }
}

TEST_CASE("canvas derivation pads the bounding box") {
  Sketch s({Primitive::point(0, 0, 0, true), Primitive::point(1, 10, 20)});
  CHECK(s.canvas.min_x == doctest::Approx(-1.0));
  CHECK(s.canvas.max_x == doctest::Approx(11.0));
  CHECK(s.canvas.min_y == doctest::Approx(-2.0));
  CHECK(s.canvas.max_y == doctest::Approx(22.0));
}

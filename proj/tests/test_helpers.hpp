#pragma once

#include <random>

#include "sketchalign/geometry.hpp"
#include "sketchalign/solver.hpp"

namespace sketchalign::test {

// Distance fixtures from a fixed origin O (id 0) to a free point P (id 1).
// F2: one distance -> one tangential degree of freedom left.
// F3: distance + horizontal -> fully constrained, solves to P=(5,0).
// F4: F3 + vertical -> forces P onto O, contradicting the distance.
inline Sketch two_point_sketch(double px, double py) {
  return Sketch({Primitive::point(0, 0.0, 0.0, true), Primitive::point(1, px, py)});
}

inline ConstraintSequence f2_constraints() {
  return {{{ConstraintKind::DistanceDim, {0, 1}, 5.0}}};
}

inline ConstraintSequence f3_constraints() {
  return {{{ConstraintKind::DistanceDim, {0, 1}, 5.0},
           {ConstraintKind::Horizontal, {0, 1}, std::nullopt}}};
}

inline ConstraintSequence f4_constraints() {
  return {{{ConstraintKind::DistanceDim, {0, 1}, 5.0},
           {ConstraintKind::Horizontal, {0, 1}, std::nullopt},
           {ConstraintKind::Vertical, {0, 1}, std::nullopt}}};
}

inline Sketch unit_line_cross() {
  // two perpendicular unit lines sharing no points, plus an anchor
  return Sketch({Primitive::point(0, 0.0, 0.0, true),
                 Primitive::line(1, 0.0, 0.0, 1.0, 0.0),
                 Primitive::line(2, 0.5, -0.5, 0.5, 0.5)});
}

inline Sketch random_sketch(std::mt19937_64& rng, int prims) {
  std::uniform_real_distribution<double> coord(-3.0, 3.0);
  std::uniform_real_distribution<double> radius(0.5, 2.0);
  std::uniform_real_distribution<double> angle(0.0, 5.0);
  std::uniform_int_distribution<int> kind(0, 3);
  std::vector<Primitive> out;
  out.push_back(Primitive::point(0, coord(rng), coord(rng), true));
  for (int i = 1; i < prims; ++i) {
    switch (kind(rng)) {
      case 0:
        out.push_back(Primitive::point(i, coord(rng), coord(rng)));
        break;
      case 1: {
        double x1 = coord(rng), y1 = coord(rng);
        double dx = coord(rng) * 0.5, dy = coord(rng) * 0.5;
        if (std::abs(dx) + std::abs(dy) < 0.2) dx += 1.0;  // avoid degenerate lines
        out.push_back(Primitive::line(i, x1, y1, x1 + dx, y1 + dy));
        break;
      }
      case 2:
        out.push_back(Primitive::circle(i, coord(rng), coord(rng), radius(rng)));
        break;
      default: {
        double start = angle(rng);
        out.push_back(Primitive::arc(i, coord(rng), coord(rng), radius(rng), start,
                                     start + 0.4 + angle(rng) * 0.5));
        break;
      }
    }
  }
  return Sketch(std::move(out));
}

// Random structurally valid constraint over the sketch, if one applies.
inline std::optional<ConstraintInstance> random_constraint(const Sketch& sketch,
                                                           std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind_dist(0, kConstraintKindCount - 1);
  std::uniform_int_distribution<int> ref_dist(0, sketch.size() - 1);
  for (int attempt = 0; attempt < 60; ++attempt) {
    auto kind = static_cast<ConstraintKind>(kind_dist(rng));
    ConstraintInstance c;
    c.kind = kind;
    int first = ref_dist(rng);
    c.refs.push_back(first);
    int arity = constraint_arity(kind, sketch.at(first).kind);
    if (arity == 2) {
      int second = ref_dist(rng);
      if (second == first) continue;
      c.refs.push_back(second);
    }
    if (is_dimension(kind)) {
      std::vector<PrimitiveKind> kinds;
      for (int r : c.refs) kinds.push_back(sketch.at(r).kind);
      if (!operands_legal(kind, kinds)) continue;
      c.value = measure_dimension(sketch, c) + std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
      if (kind == ConstraintKind::AngleDim) {
        c.value = std::clamp(*c.value, 0.1, 3.0);
      } else if (*c.value <= 0.1) {
        c.value = 0.1;
      }
    }
    if (!validate_constraint(sketch, c)) return c;
  }
  return std::nullopt;
}

}  // namespace sketchalign::test

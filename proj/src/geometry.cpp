#include "sketchalign/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sketchalign {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_positive(double angle) {
  double a = std::fmod(angle, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a;
}

}  // namespace

Primitive Primitive::point(int id, double x, double y, bool fixed) {
  return Primitive{id, PrimitiveKind::Point, {x, y}, fixed};
}

Primitive Primitive::line(int id, double x1, double y1, double x2, double y2, bool fixed) {
  return Primitive{id, PrimitiveKind::Line, {x1, y1, x2, y2}, fixed};
}

Primitive Primitive::circle(int id, double cx, double cy, double r, bool fixed) {
  return Primitive{id, PrimitiveKind::Circle, {cx, cy, r}, fixed};
}

Primitive Primitive::arc(int id, double cx, double cy, double r, double theta_start,
                         double theta_end, bool fixed) {
  return Primitive{id, PrimitiveKind::Arc, {cx, cy, r, theta_start, theta_end}, fixed};
}

Rect derive_canvas(const std::vector<Primitive>& primitives) {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = min_x;
  double max_x = -min_x;
  double max_y = -min_x;
  for (const auto& prim : primitives) {
    for (const Vec2& p : tracked_points(prim)) {
      min_x = std::min(min_x, p.x);
      min_y = std::min(min_y, p.y);
      max_x = std::max(max_x, p.x);
      max_y = std::max(max_y, p.y);
    }
    // Circles/arcs can extend past their tracked points; include the full disk box.
    if (prim.kind == PrimitiveKind::Circle || prim.kind == PrimitiveKind::Arc) {
      double cx = prim.params[0], cy = prim.params[1], r = prim.params[2];
      min_x = std::min(min_x, cx - r);
      min_y = std::min(min_y, cy - r);
      max_x = std::max(max_x, cx + r);
      max_y = std::max(max_y, cy + r);
    }
  }
  if (primitives.empty() || !std::isfinite(min_x)) {
    return Rect{0.0, 0.0, 1.0, 1.0};
  }
  double w = max_x - min_x;
  double h = max_y - min_y;
  if (w < 1e-9) {
    min_x -= 0.5;
    max_x += 0.5;
    w = max_x - min_x;
  }
  if (h < 1e-9) {
    min_y -= 0.5;
    max_y += 0.5;
    h = max_y - min_y;
  }
  return Rect{min_x - 0.1 * w, min_y - 0.1 * h, max_x + 0.1 * w, max_y + 0.1 * h};
}

Sketch::Sketch(std::vector<Primitive> prims, std::optional<Rect> explicit_canvas)
    : primitives(std::move(prims)),
      canvas(explicit_canvas ? *explicit_canvas : derive_canvas(primitives)) {}

bool is_dimension(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::DistanceDim:
    case ConstraintKind::LengthDim:
    case ConstraintKind::RadiusDim:
    case ConstraintKind::DiameterDim:
    case ConstraintKind::AngleDim:
      return true;
    default:
      return false;
  }
}

const char* to_string(ConstraintKind kind) {
  switch (kind) {
    case ConstraintKind::Coincident: return "coincident";
    case ConstraintKind::Horizontal: return "horizontal";
    case ConstraintKind::Vertical: return "vertical";
    case ConstraintKind::Parallel: return "parallel";
    case ConstraintKind::Perpendicular: return "perpendicular";
    case ConstraintKind::Tangent: return "tangent";
    case ConstraintKind::Midpoint: return "midpoint";
    case ConstraintKind::Equal: return "equal";
    case ConstraintKind::Concentric: return "concentric";
    case ConstraintKind::DistanceDim: return "distance_dim";
    case ConstraintKind::LengthDim: return "length_dim";
    case ConstraintKind::RadiusDim: return "radius_dim";
    case ConstraintKind::DiameterDim: return "diameter_dim";
    case ConstraintKind::AngleDim: return "angle_dim";
  }
  return "?";
}

const char* to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Point: return "point";
    case PrimitiveKind::Line: return "line";
    case PrimitiveKind::Circle: return "circle";
    case PrimitiveKind::Arc: return "arc";
  }
  return "?";
}

std::optional<ConstraintKind> constraint_kind_from_string(const std::string& name) {
  for (int i = 0; i < kConstraintKindCount; ++i) {
    auto kind = static_cast<ConstraintKind>(i);
    if (name == to_string(kind)) return kind;
  }
  return std::nullopt;
}

std::optional<PrimitiveKind> primitive_kind_from_string(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    auto kind = static_cast<PrimitiveKind>(i);
    if (name == to_string(kind)) return kind;
  }
  return std::nullopt;
}

const char* to_string(ValidationError err) {
  switch (err) {
    case ValidationError::BadArity: return "bad_arity";
    case ValidationError::RefOutOfRange: return "ref_out_of_range";
    case ValidationError::IllegalOperandKinds: return "illegal_operand_kinds";
    case ValidationError::MissingValue: return "missing_value";
    case ValidationError::UnexpectedValue: return "unexpected_value";
    case ValidationError::DegeneratePrimitive: return "degenerate_primitive";
  }
  return "?";
}

int constraint_arity(ConstraintKind kind, PrimitiveKind first_operand) {
  switch (kind) {
    case ConstraintKind::Horizontal:
    case ConstraintKind::Vertical:
      return first_operand == PrimitiveKind::Point ? 2 : 1;
    case ConstraintKind::LengthDim:
    case ConstraintKind::RadiusDim:
    case ConstraintKind::DiameterDim:
      return 1;
    default:
      return 2;
  }
}

namespace {

bool is_circular(PrimitiveKind k) {
  return k == PrimitiveKind::Circle || k == PrimitiveKind::Arc;
}

}  // namespace

bool operands_legal(ConstraintKind kind, const std::vector<PrimitiveKind>& ops) {
  using PK = PrimitiveKind;
  auto two = [&](PK a, PK b) { return ops.size() == 2 && ops[0] == a && ops[1] == b; };
  switch (kind) {
    case ConstraintKind::Coincident:
      // Point-point, or point attached to a line/arc endpoint.
      return ops.size() == 2 && ops[0] == PK::Point &&
             (ops[1] == PK::Point || ops[1] == PK::Line || ops[1] == PK::Arc);
    case ConstraintKind::Horizontal:
    case ConstraintKind::Vertical:
      return (ops.size() == 1 && ops[0] == PK::Line) || two(PK::Point, PK::Point);
    case ConstraintKind::Parallel:
    case ConstraintKind::Perpendicular:
    case ConstraintKind::AngleDim:
      return two(PK::Line, PK::Line);
    case ConstraintKind::Tangent:
      return ops.size() == 2 &&
             ((ops[0] == PK::Line && is_circular(ops[1])) ||
              (is_circular(ops[0]) && is_circular(ops[1])));
    case ConstraintKind::Midpoint:
      return two(PK::Point, PK::Line);
    case ConstraintKind::Equal:
      return two(PK::Line, PK::Line) ||
             (ops.size() == 2 && is_circular(ops[0]) && is_circular(ops[1]));
    case ConstraintKind::Concentric:
      // Circular pair, or point anchored at a circle/arc center.
      return ops.size() == 2 && is_circular(ops[1]) &&
             (ops[0] == PK::Point || is_circular(ops[0]));
    case ConstraintKind::DistanceDim:
      return two(PK::Point, PK::Point);
    case ConstraintKind::LengthDim:
      return ops.size() == 1 && ops[0] == PK::Line;
    case ConstraintKind::RadiusDim:
    case ConstraintKind::DiameterDim:
      return ops.size() == 1 && is_circular(ops[0]);
  }
  return false;
}

int residual_arity(ConstraintKind kind, const std::vector<PrimitiveKind>& ops) {
  if (!operands_legal(kind, ops)) {
    throw std::invalid_argument("illegal operand kinds for " + std::string(to_string(kind)));
  }
  switch (kind) {
    case ConstraintKind::Coincident:
    case ConstraintKind::Midpoint:
    case ConstraintKind::Concentric:
      return 2;
    default:
      return 1;
  }
}

int dof_of_primitive(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::Point: return 2;
    case PrimitiveKind::Line: return 4;
    case PrimitiveKind::Circle: return 3;
    case PrimitiveKind::Arc: return 5;
  }
  return 0;
}

PackedParams pack_parameters(const Sketch& sketch) {
  PackedParams packed;
  packed.slices.resize(sketch.primitives.size());
  for (const auto& prim : sketch.primitives) {
    if (prim.fixed) continue;
    ParamSlice slice{packed.size(), static_cast<int>(prim.params.size())};
    packed.slices[static_cast<size_t>(prim.id)] = slice;
    packed.values.insert(packed.values.end(), prim.params.begin(), prim.params.end());
  }
  return packed;
}

Sketch unpack_parameters(const Sketch& sketch, const std::vector<double>& values) {
  Sketch out = sketch;
  int offset = 0;
  for (auto& prim : out.primitives) {
    if (prim.fixed) continue;
    for (double& p : prim.params) {
      p = values[static_cast<size_t>(offset++)];
    }
  }
  if (offset != static_cast<int>(values.size())) {
    throw std::invalid_argument("parameter vector length mismatch");
  }
  return out;
}

Vec2 curve_endpoint(const Primitive& prim, int which) {
  switch (prim.kind) {
    case PrimitiveKind::Line:
      return which == 0 ? Vec2{prim.params[0], prim.params[1]}
                        : Vec2{prim.params[2], prim.params[3]};
    case PrimitiveKind::Arc: {
      double theta = which == 0 ? prim.params[3] : prim.params[4];
      return Vec2{prim.params[0] + prim.params[2] * std::cos(theta),
                  prim.params[1] + prim.params[2] * std::sin(theta)};
    }
    default:
      throw std::invalid_argument("primitive has no endpoints");
  }
}

std::vector<Vec2> tracked_points(const Primitive& prim) {
  switch (prim.kind) {
    case PrimitiveKind::Point:
      return {Vec2{prim.params[0], prim.params[1]}};
    case PrimitiveKind::Line:
      return {curve_endpoint(prim, 0), curve_endpoint(prim, 1)};
    case PrimitiveKind::Circle:
      return {Vec2{prim.params[0], prim.params[1]}};
    case PrimitiveKind::Arc:
      return {Vec2{prim.params[0], prim.params[1]}, curve_endpoint(prim, 0),
              curve_endpoint(prim, 1)};
  }
  return {};
}

double arc_sweep(const Primitive& arc) {
  return wrap_positive(arc.params[4] - arc.params[3]);
}

Vec2 path_point(const Primitive& prim, double t) {
  switch (prim.kind) {
    case PrimitiveKind::Point:
      return Vec2{prim.params[0], prim.params[1]};
    case PrimitiveKind::Line: {
      Vec2 a = curve_endpoint(prim, 0), b = curve_endpoint(prim, 1);
      return Vec2{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
    }
    case PrimitiveKind::Circle: {
      double theta = kTwoPi * t;
      return Vec2{prim.params[0] + prim.params[2] * std::cos(theta),
                  prim.params[1] + prim.params[2] * std::sin(theta)};
    }
    case PrimitiveKind::Arc: {
      double theta = prim.params[3] + t * arc_sweep(prim);
      return Vec2{prim.params[0] + prim.params[2] * std::cos(theta),
                  prim.params[1] + prim.params[2] * std::sin(theta)};
    }
  }
  return {};
}

namespace {

double line_length(const Primitive& line) {
  Vec2 a = curve_endpoint(line, 0), b = curve_endpoint(line, 1);
  return std::hypot(b.x - a.x, b.y - a.y);
}

}  // namespace

double measure_dimension(const Sketch& sketch, const ConstraintInstance& dim) {
  const auto& refs = dim.refs;
  switch (dim.kind) {
    case ConstraintKind::DistanceDim: {
      const auto& p = sketch.at(refs[0]).params;
      const auto& q = sketch.at(refs[1]).params;
      return std::hypot(p[0] - q[0], p[1] - q[1]);
    }
    case ConstraintKind::LengthDim:
      return line_length(sketch.at(refs[0]));
    case ConstraintKind::RadiusDim:
      return sketch.at(refs[0]).params[2];
    case ConstraintKind::DiameterDim:
      return 2.0 * sketch.at(refs[0]).params[2];
    case ConstraintKind::AngleDim: {
      Vec2 a0 = curve_endpoint(sketch.at(refs[0]), 0);
      Vec2 a1 = curve_endpoint(sketch.at(refs[0]), 1);
      Vec2 b0 = curve_endpoint(sketch.at(refs[1]), 0);
      Vec2 b1 = curve_endpoint(sketch.at(refs[1]), 1);
      double d1x = a1.x - a0.x, d1y = a1.y - a0.y;
      double d2x = b1.x - b0.x, d2y = b1.y - b0.y;
      double cross = d1x * d2y - d1y * d2x;
      double dot = d1x * d2x + d1y * d2y;
      return std::atan2(std::abs(cross), dot);  // in [0, pi]
    }
    default:
      throw std::invalid_argument("not a dimension kind");
  }
}

std::optional<ValidationError> validate_constraint(const Sketch& sketch,
                                                   const ConstraintInstance& c) {
  if (c.refs.empty() || c.refs.size() > 2) return ValidationError::BadArity;
  for (int ref : c.refs) {
    if (ref < 0 || ref >= sketch.size()) return ValidationError::RefOutOfRange;
  }
  int expected = constraint_arity(c.kind, sketch.at(c.refs[0]).kind);
  if (static_cast<int>(c.refs.size()) != expected) return ValidationError::BadArity;

  std::vector<PrimitiveKind> kinds;
  kinds.reserve(c.refs.size());
  for (int ref : c.refs) kinds.push_back(sketch.at(ref).kind);
  if (!operands_legal(c.kind, kinds)) return ValidationError::IllegalOperandKinds;

  if (is_dimension(c.kind)) {
    if (!c.value.has_value()) return ValidationError::MissingValue;
  } else if (c.value.has_value()) {
    return ValidationError::UnexpectedValue;
  }

  // Zero-length lines make direction-based residuals degenerate.
  for (int ref : c.refs) {
    const auto& prim = sketch.at(ref);
    if (prim.kind == PrimitiveKind::Line && line_length(prim) < 1e-12) {
      return ValidationError::DegeneratePrimitive;
    }
  }
  return std::nullopt;
}

std::optional<ValidationError> validate_sequence(const Sketch& sketch,
                                                 const ConstraintSequence& seq) {
  for (const auto& item : seq.items) {
    if (auto err = validate_constraint(sketch, item)) return err;
  }
  return std::nullopt;
}

}  // namespace sketchalign

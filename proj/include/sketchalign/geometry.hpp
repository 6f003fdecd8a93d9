#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sketchalign {

constexpr int kMaxPrimitives = 16;
constexpr int kMaxConstraints = 64;

enum class PrimitiveKind { Point, Line, Circle, Arc };

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// A sketch entity. Params by kind:
///   Point:  x, y
///   Line:   x1, y1, x2, y2
///   Circle: cx, cy, r
///   Arc:    cx, cy, r, theta_start, theta_end   (radians, CCW sweep)
struct Primitive {
  int id = 0;
  PrimitiveKind kind = PrimitiveKind::Point;
  std::vector<double> params;
  bool fixed = false;

  static Primitive point(int id, double x, double y, bool fixed = false);
  static Primitive line(int id, double x1, double y1, double x2, double y2, bool fixed = false);
  static Primitive circle(int id, double cx, double cy, double r, bool fixed = false);
  static Primitive arc(int id, double cx, double cy, double r, double theta_start,
                       double theta_end, bool fixed = false);

  bool is_curve() const { return kind != PrimitiveKind::Point; }
};

struct Rect {
  double min_x = 0.0, min_y = 0.0, max_x = 1.0, max_y = 1.0;
  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
};

/// Axis-aligned frame used for coordinate quantization and stability bins:
/// geometry bounding box expanded by 10% per side (degenerate extents padded).
Rect derive_canvas(const std::vector<Primitive>& primitives);

struct Sketch {
  std::vector<Primitive> primitives;
  Rect canvas;

  Sketch() = default;
  explicit Sketch(std::vector<Primitive> prims, std::optional<Rect> explicit_canvas = {});

  const Primitive& at(int id) const { return primitives[static_cast<size_t>(id)]; }
  int size() const { return static_cast<int>(primitives.size()); }
};

enum class ConstraintKind {
  Coincident,
  Horizontal,
  Vertical,
  Parallel,
  Perpendicular,
  Tangent,
  Midpoint,
  Equal,
  Concentric,
  DistanceDim,
  LengthDim,
  RadiusDim,
  DiameterDim,
  AngleDim,
};
constexpr int kConstraintKindCount = 14;

bool is_dimension(ConstraintKind kind);
const char* to_string(ConstraintKind kind);
const char* to_string(PrimitiveKind kind);
std::optional<ConstraintKind> constraint_kind_from_string(const std::string& name);
std::optional<PrimitiveKind> primitive_kind_from_string(const std::string& name);

struct ConstraintInstance {
  ConstraintKind kind = ConstraintKind::Coincident;
  std::vector<int> refs;
  std::optional<double> value;  // dimensions only

  bool operator==(const ConstraintInstance& other) const = default;
};

struct ConstraintSequence {
  std::vector<ConstraintInstance> items;

  int size() const { return static_cast<int>(items.size()); }
  bool empty() const { return items.empty(); }
};

enum class ValidationError {
  BadArity,
  RefOutOfRange,
  IllegalOperandKinds,
  MissingValue,
  UnexpectedValue,
  DegeneratePrimitive,
};
const char* to_string(ValidationError err);

/// Arity of a constraint given the kind of its first operand. Horizontal and
/// Vertical take one Line or two Points; every other kind has a fixed arity.
int constraint_arity(ConstraintKind kind, PrimitiveKind first_operand);

/// Number of scalar residual equations contributed by one constraint.
/// Fails with IllegalOperandKinds for combinations outside the legality table.
int residual_arity(ConstraintKind kind, const std::vector<PrimitiveKind>& operand_kinds);
bool operands_legal(ConstraintKind kind, const std::vector<PrimitiveKind>& operand_kinds);

/// Free parameters a primitive contributes to the solve vector (0 when fixed).
int dof_of_primitive(PrimitiveKind kind);

struct ParamSlice {
  int offset = 0;
  int length = 0;
};

struct PackedParams {
  std::vector<double> values;
  /// primitive id -> slice into `values`; fixed primitives are absent.
  std::vector<std::optional<ParamSlice>> slices;

  int size() const { return static_cast<int>(values.size()); }
};

PackedParams pack_parameters(const Sketch& sketch);
/// Writes `values` back into a copy of `sketch`; exact inverse of pack.
Sketch unpack_parameters(const Sketch& sketch, const std::vector<double>& values);

/// Current measured quantity of a dimension (ignores the stored value).
/// Distances/lengths in sketch units, angles in [0, pi].
double measure_dimension(const Sketch& sketch, const ConstraintInstance& dim);

std::optional<ValidationError> validate_constraint(const Sketch& sketch,
                                                   const ConstraintInstance& c);
std::optional<ValidationError> validate_sequence(const Sketch& sketch,
                                                 const ConstraintSequence& seq);

/// Endpoints of a line or arc in sketch space.
Vec2 curve_endpoint(const Primitive& prim, int which);  // which: 0 = start, 1 = end
/// Points tracked by the stability grid: Point coords, Line endpoints,
/// Circle/Arc centers, Arc endpoints.
std::vector<Vec2> tracked_points(const Primitive& prim);
/// Arc sweep normalized to (0, 2*pi].
double arc_sweep(const Primitive& arc);
/// Point on a primitive path at t in [0,1] (Point: itself; Line/Arc: along;
/// Circle: angle 2*pi*t).
Vec2 path_point(const Primitive& prim, double t);

}  // namespace sketchalign

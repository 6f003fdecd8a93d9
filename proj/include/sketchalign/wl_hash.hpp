#pragma once

#include <string>

#include "sketchalign/geometry.hpp"

namespace sketchalign {

/// Weisfeiler-Lehman digest of the sketch-plus-constraints graph. Nodes are
/// primitives labeled by (kind, params quantized to quant_bins over the
/// canvas, fixed flag); binary constraints become edges labeled by kind
/// (order-free for symmetric kinds, role-tagged otherwise); unary constraints
/// fold into their node label. Three refinement rounds, fnv1a64 digest.
std::string wl_hash(const Sketch& sketch, const ConstraintSequence& constraints,
                    int quant_bins = 4);

/// Whether refs of this kind are interchangeable given the operand kinds.
bool refs_symmetric(ConstraintKind kind, PrimitiveKind a, PrimitiveKind b);

/// Constraint-set identity used by diversity metrics: (kind, canonicalized
/// refs), dimension values excluded.
std::vector<std::string> canonical_constraint_set(const Sketch& sketch,
                                                  const ConstraintSequence& seq);

/// Mean intersection-over-union across all unordered pairs of K >= 2
/// generations; identical empty sets count as IoU 1.
double miou(const std::vector<std::vector<std::string>>& constraint_sets);

}  // namespace sketchalign

#pragma once

#include <Eigen/Dense>
#include <map>
#include <set>

#include "sketchalign/geometry.hpp"

namespace sketchalign {

struct SolveOptions {
  int max_iterations = 200;     // iteration budget stands in for a wall-clock cutoff
  double residual_tol = 1e-8;   // max-abs residual at convergence
  double rank_tol = 1e-7;       // relative singular-value cutoff
  double nullspace_tol = 1e-6;  // row-norm threshold for per-entity FC
  double damping_init = 1e-3;
  int stability_bins = 4;
};

struct RankAnalysis {
  int n = 0;  // variable count
  int m = 0;  // residual row count
  int rank = 0;
  Eigen::MatrixXd nullspace_basis;  // n x (n - rank), orthonormal columns
  bool redundant = false;           // rank < m
};

enum class SketchCategory { FullyConstrained, UnderConstrained, OverConstrained, NotSolvable };
const char* to_string(SketchCategory category);

struct SketchStatus {
  SketchCategory category = SketchCategory::NotSolvable;
  bool oc_flag = false;  // redundancy, recorded independently of the category
  bool stable = false;
  std::map<int, bool> per_entity_fc;
  double fc_curve_fraction = 0.0;
  double fc_point_fraction = 0.0;
};

struct SolveReport {
  SketchStatus status;
  std::optional<Sketch> solved_sketch;  // present iff solvable
  int iterations = 0;
  double final_residual_norm = 0.0;  // max-abs
  std::optional<RankAnalysis> rank_analysis;

  bool solvable() const { return solved_sketch.has_value(); }
};

/// SVD-based rank/nullspace of a Jacobian; cutoff is rank_tol * sigma_max.
RankAnalysis rank_analysis(const Eigen::MatrixXd& jacobian, const SolveOptions& opts,
                           int num_rows_hint = -1);

struct EntityFc {
  std::map<int, bool> per_entity;
  double curve_fraction = 1.0;
  double point_fraction = 1.0;
};

/// A free primitive is fully constrained iff every nullspace-basis row in its
/// slice has norm <= nullspace_tol; fixed primitives count as FC. Fractions
/// over empty classes are 1 (vacuously fully constrained).
EntityFc entity_fc_status(const Sketch& sketch, const RankAnalysis& analysis,
                          const PackedParams& packed, const SolveOptions& opts);

/// Grid-cell stability: every tracked point stays in its bin of the `before`
/// canvas. bins >= 1.
bool stability_check(const Sketch& before, const Sketch& after, int bins);

/// Damped least-squares solve from the sketch's current geometry, then rank
/// analysis, per-entity FC, category, and stability versus the input.
SolveReport solve(const Sketch& sketch, const ConstraintSequence& constraints,
                  const SolveOptions& opts = {});

struct IncrementalResult {
  ConstraintSequence kept;
  std::set<int> problematic;  // indices into the input sequence
};

/// Adds constraints one-by-one, dropping any item whose addition makes the
/// system not solvable or newly redundant. The kept set always solves cleanly.
IncrementalResult incremental_apply(const Sketch& sketch, const ConstraintSequence& seq,
                                    const SolveOptions& opts = {});

}  // namespace sketchalign

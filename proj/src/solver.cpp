#include "sketchalign/solver.hpp"

#include <cmath>

#include "sketchalign/residuals.hpp"

namespace sketchalign {

const char* to_string(SketchCategory category) {
  switch (category) {
    case SketchCategory::FullyConstrained: return "fully_constrained";
    case SketchCategory::UnderConstrained: return "under_constrained";
    case SketchCategory::OverConstrained: return "over_constrained";
    case SketchCategory::NotSolvable: return "not_solvable";
  }
  return "?";
}

RankAnalysis rank_analysis(const Eigen::MatrixXd& jacobian, const SolveOptions& opts,
                           int num_rows_hint) {
  RankAnalysis out;
  out.n = static_cast<int>(jacobian.cols());
  out.m = num_rows_hint >= 0 ? num_rows_hint : static_cast<int>(jacobian.rows());

  if (jacobian.rows() == 0 || jacobian.cols() == 0) {
    out.rank = 0;
    out.nullspace_basis = Eigen::MatrixXd::Identity(out.n, out.n);
  } else {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(jacobian, Eigen::ComputeFullV);
    const auto& sigma = svd.singularValues();
    double cutoff = opts.rank_tol * sigma(0);
    int rank = 0;
    for (int i = 0; i < sigma.size(); ++i) {
      if (sigma(i) > cutoff && sigma(i) > 0.0) ++rank;
    }
    out.rank = rank;
    out.nullspace_basis = svd.matrixV().rightCols(out.n - rank);
  }
  out.redundant = out.rank < out.m;
  return out;
}

EntityFc entity_fc_status(const Sketch& sketch, const RankAnalysis& analysis,
                          const PackedParams& packed, const SolveOptions& opts) {
  EntityFc out;
  int curves = 0, curves_fc = 0, points = 0, points_fc = 0;
  for (const auto& prim : sketch.primitives) {
    bool fc = true;
    const auto& slice = packed.slices[static_cast<size_t>(prim.id)];
    if (slice && analysis.nullspace_basis.cols() > 0) {
      for (int k = 0; k < slice->length && fc; ++k) {
        if (analysis.nullspace_basis.row(slice->offset + k).norm() > opts.nullspace_tol) {
          fc = false;
        }
      }
    }
    out.per_entity[prim.id] = fc;
    if (prim.is_curve()) {
      ++curves;
      curves_fc += fc ? 1 : 0;
    } else {
      ++points;
      points_fc += fc ? 1 : 0;
    }
  }
  out.curve_fraction = curves == 0 ? 1.0 : static_cast<double>(curves_fc) / curves;
  out.point_fraction = points == 0 ? 1.0 : static_cast<double>(points_fc) / points;
  return out;
}

bool stability_check(const Sketch& before, const Sketch& after, int bins) {
  const Rect& canvas = before.canvas;
  auto bin_of = [&](double coord, double lo, double extent) {
    int b = static_cast<int>(std::floor(bins * (coord - lo) / extent));
    return std::clamp(b, 0, bins - 1);
  };
  double w = std::max(canvas.width(), 1e-12);
  double h = std::max(canvas.height(), 1e-12);
  for (size_t i = 0; i < before.primitives.size(); ++i) {
    auto pts_before = tracked_points(before.primitives[i]);
    auto pts_after = tracked_points(after.primitives[i]);
    for (size_t k = 0; k < pts_before.size(); ++k) {
      if (bin_of(pts_before[k].x, canvas.min_x, w) != bin_of(pts_after[k].x, canvas.min_x, w) ||
          bin_of(pts_before[k].y, canvas.min_y, h) != bin_of(pts_after[k].y, canvas.min_y, h)) {
        return false;
      }
    }
  }
  return true;
}

namespace {

struct LmResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
  double max_abs_residual = 0.0;
};

LmResult levenberg_marquardt(const ResidualSystem& system, const SolveOptions& opts) {
  LmResult out;
  out.x = Eigen::Map<const Eigen::VectorXd>(system.packed().values.data(),
                                            system.packed().size());
  if (system.num_residuals() == 0 || system.num_variables() == 0) {
    Eigen::VectorXd r = system.residuals(out.x);
    out.max_abs_residual = r.size() == 0 ? 0.0 : r.cwiseAbs().maxCoeff();
    out.converged = out.max_abs_residual <= opts.residual_tol;
    return out;
  }

  Eigen::VectorXd r = system.residuals(out.x);
  double cost = r.squaredNorm();
  out.max_abs_residual = r.cwiseAbs().maxCoeff();
  if (out.max_abs_residual <= opts.residual_tol) {
    out.converged = true;  // no step taken on an already-satisfied system
    return out;
  }

  double lambda = opts.damping_init;
  const int n = system.num_variables();
  for (int iter = 1; iter <= opts.max_iterations; ++iter) {
    out.iterations = iter;
    Eigen::MatrixXd jac = system.jacobian(out.x);
    Eigen::MatrixXd jtj = jac.transpose() * jac;
    Eigen::VectorXd jtr = jac.transpose() * r;

    bool accepted = false;
    for (int attempt = 0; attempt < 12; ++attempt) {
      Eigen::MatrixXd damped = jtj;
      damped.diagonal().array() += lambda;
      Eigen::VectorXd step = damped.ldlt().solve(-jtr);
      if (!step.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Eigen::VectorXd x_new = out.x + step;
      Eigen::VectorXd r_new = system.residuals(x_new);
      double cost_new = r_new.squaredNorm();
      if (std::isfinite(cost_new) && cost_new < cost) {
        out.x = x_new;
        r = r_new;
        cost = cost_new;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }

    out.max_abs_residual = r.cwiseAbs().maxCoeff();
    if (out.max_abs_residual <= opts.residual_tol) {
      out.converged = true;
      return out;
    }
    if (!accepted) {
      return out;  // stalled; cannot reduce the residual further
    }
    (void)n;
  }
  return out;
}

}  // namespace

SolveReport solve(const Sketch& sketch, const ConstraintSequence& constraints,
                  const SolveOptions& opts) {
  ResidualSystem system(sketch, constraints);
  LmResult lm = levenberg_marquardt(system, opts);

  SolveReport report;
  report.iterations = lm.iterations;
  report.final_residual_norm = lm.max_abs_residual;

  Eigen::MatrixXd jac = system.jacobian(lm.x);
  RankAnalysis analysis = rank_analysis(jac, opts, system.num_residuals());

  if (!lm.converged) {
    report.status.category = SketchCategory::NotSolvable;
    // Redundancy at the best-effort final point, still reported via the flag.
    report.status.oc_flag = analysis.redundant;
    return report;
  }

  std::vector<double> solved(lm.x.data(), lm.x.data() + lm.x.size());
  report.solved_sketch = unpack_parameters(sketch, solved);
  report.rank_analysis = analysis;

  EntityFc fc = entity_fc_status(sketch, analysis, system.packed(), opts);
  report.status.per_entity_fc = fc.per_entity;
  report.status.fc_curve_fraction = fc.curve_fraction;
  report.status.fc_point_fraction = fc.point_fraction;
  report.status.oc_flag = analysis.redundant;
  report.status.stable = stability_check(sketch, *report.solved_sketch, opts.stability_bins);

  if (analysis.redundant) {
    report.status.category = SketchCategory::OverConstrained;
  } else if (analysis.rank == analysis.n) {
    report.status.category = SketchCategory::FullyConstrained;
  } else {
    report.status.category = SketchCategory::UnderConstrained;
  }
  return report;
}

IncrementalResult incremental_apply(const Sketch& sketch, const ConstraintSequence& seq,
                                    const SolveOptions& opts) {
  IncrementalResult out;

  // A sequence that already solves without redundancy keeps every item.
  SolveReport full = solve(sketch, seq, opts);
  if (full.solvable() && !full.status.oc_flag) {
    out.kept = seq;
    return out;
  }

  ConstraintSequence kept;
  for (int i = 0; i < seq.size(); ++i) {
    ConstraintSequence trial = kept;
    trial.items.push_back(seq.items[static_cast<size_t>(i)]);
    SolveReport report = solve(sketch, trial, opts);
    if (report.solvable() && !report.status.oc_flag) {
      kept = std::move(trial);
    } else {
      out.problematic.insert(i);
    }
  }
  out.kept = std::move(kept);
  return out;
}

}  // namespace sketchalign

#include "sketchalign/rewards.hpp"

namespace sketchalign {

RewardBreakdown reward(const SolveReport& report, const ConstraintSequence& seq,
                       int num_entities, const RewardConfig& cfg) {
  RewardBreakdown out;
  switch (report.status.category) {
    case SketchCategory::NotSolvable:
      out.failure_mode = FailureMode::NotSolvable;
      out.penalty = cfg.r_not_solvable;
      out.total = out.penalty;
      return out;
    case SketchCategory::OverConstrained:
      out.failure_mode = FailureMode::OverConstrained;
      out.penalty = cfg.r_over_constrained;
      out.total = out.penalty;
      return out;
    default:
      break;
  }
  out.r_curves = report.status.fc_curve_fraction;
  out.r_points = report.status.fc_point_fraction;
  if (!report.status.stable) out.penalty += cfg.r_unstable;
  if (cfg.overdim_penalty_enabled && num_entities > 0 && seq.size() > 0) {
    int dims = 0;
    for (const auto& item : seq.items) dims += is_dimension(item.kind) ? 1 : 0;
    out.penalty -= cfg.overdim_count_coeff * (static_cast<double>(seq.size()) / num_entities);
    out.penalty -= cfg.overdim_ratio_coeff * (static_cast<double>(dims) / seq.size());
  }
  out.total = out.r_curves + out.r_points + out.penalty;
  return out;
}

RewardBreakdown reward_failure(const RewardConfig& cfg) {
  RewardBreakdown out;
  out.failure_mode = FailureMode::Failure;
  out.penalty = cfg.r_failure;
  out.total = out.penalty;
  return out;
}

std::map<int, double> constraintwise_penalties(const Sketch& sketch, const ConstraintSequence& seq,
                                               const RewardConfig& cfg,
                                               const SolveOptions& opts) {
  std::map<int, double> penalties;
  ConstraintSequence valid;
  std::vector<int> valid_indices;
  for (int i = 0; i < seq.size(); ++i) {
    if (validate_constraint(sketch, seq.items[static_cast<size_t>(i)])) {
      penalties[i] = cfg.constraintwise_penalty;
    } else {
      valid.items.push_back(seq.items[static_cast<size_t>(i)]);
      valid_indices.push_back(i);
    }
  }
  IncrementalResult result = incremental_apply(sketch, valid, opts);
  for (int idx : result.problematic) {
    penalties[valid_indices[static_cast<size_t>(idx)]] = cfg.constraintwise_penalty;
  }
  return penalties;
}

}  // namespace sketchalign

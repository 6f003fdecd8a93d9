#pragma once

#include <map>

#include "sketchalign/solver.hpp"
#include "sketchalign/tokenizer.hpp"

namespace sketchalign {

struct RewardConfig {
  double r_unstable = -0.25;
  double r_not_solvable = -1.0;
  double r_over_constrained = -1.0;
  double r_failure = -0.5;
  double constraintwise_penalty = -1.0;
  int stability_bins = 4;
  bool overdim_penalty_enabled = false;
  double overdim_count_coeff = 0.05;
  double overdim_ratio_coeff = 0.25;
};

enum class FailureMode { NotSolvable, OverConstrained, Failure };

struct RewardBreakdown {
  double r_curves = 0.0;  // in [0,1]
  double r_points = 0.0;  // in [0,1]
  double penalty = 0.0;   // <= 0
  double total = 0.0;
  std::optional<FailureMode> failure_mode;
};

/// Sequence reward R(tau): fully-constrained fractions plus conditional
/// penalties for valid sketches; a single failure penalty otherwise.
RewardBreakdown reward(const SolveReport& report, const ConstraintSequence& seq,
                       int num_entities, const RewardConfig& cfg);
/// Decode/validation failures and solver exceptions score r_failure.
RewardBreakdown reward_failure(const RewardConfig& cfg);

/// Per-item penalties from the incremental solver pass. Items that fail
/// validation are counted problematic without reaching the solver.
std::map<int, double> constraintwise_penalties(const Sketch& sketch, const ConstraintSequence& seq,
                                               const RewardConfig& cfg,
                                               const SolveOptions& opts = {});

}  // namespace sketchalign

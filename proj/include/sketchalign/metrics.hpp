#pragma once

#include "sketchalign/training.hpp"

namespace sketchalign {

struct MetricsTable {
  double fc_pct = 0.0;
  double uc_pct = 0.0;
  double oc_pct = 0.0;
  double ns_pct = 0.0;  // includes decode/validation failures
  double stable_pct = 0.0;
  std::map<int, double> pass_at;  // K -> percentage
  double unique_at_k = 0.0;
  double miou_at_k = 0.0;
  int k = 8;
  double temperature = 1.0;
  double top_p = 1.0;
  uint64_t seed = 0;
  int sketch_count = 0;
};

struct EvalOptions {
  int k = 8;
  double temperature = 1.0;
  double top_p = 1.0;
  uint64_t seed = 0;
  int threads = 2;
  RewardConfig reward;
  SolveOptions solve;
};

/// Samples K sequences per sketch, scores them with the solver, and reports
/// Table-style condition percentages, Pass@K, and diversity metrics. A sample
/// succeeds when fully constrained and stable at 4 bins.
MetricsTable eval_model(const PolicyModel& model,
                        const std::vector<const DatasetRecord*>& records,
                        const EvalOptions& options);

nlohmann::ordered_json metrics_to_json(const MetricsTable& metrics);

}  // namespace sketchalign

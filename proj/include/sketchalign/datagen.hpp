#pragma once

#include <json.hpp>
#include <random>

#include "sketchalign/solver.hpp"
#include "sketchalign/wl_hash.hpp"

namespace sketchalign {

enum class TemplateName {
  Rectangle,
  LShape,
  Slot,
  Triangle,
  ConcentricCircles,
  Polyline,
  LineArcChain,
};
const char* to_string(TemplateName name);
std::optional<TemplateName> template_from_string(const std::string& name);
std::vector<TemplateName> all_templates();

struct GeneratedSketch {
  Sketch sketch;
  ConstraintSequence recipe;  // fully-constraining ground truth
};

/// Randomized instance of a template; dimensions carry values measured from
/// the generated geometry, and primitive 0 is the fixed anchor point.
GeneratedSketch generate_sketch(TemplateName name, std::mt19937_64& rng);

struct DatasetRecord {
  Sketch sketch;
  ConstraintSequence constraints;
  std::string split;  // train | val | test
  std::string wl_hash;
  SketchCategory category = SketchCategory::NotSolvable;
  bool oc_flag = false;
  bool stable = false;

  bool usable_for_pretrain() const { return category != SketchCategory::NotSolvable; }
  bool usable_for_sft() const {
    return category == SketchCategory::FullyConstrained && stable && !oc_flag;
  }
};

/// Drops each constraint independently with drop_prob.
ConstraintSequence degrade_constraints(const ConstraintSequence& seq, double drop_prob,
                                       std::mt19937_64& rng);

/// Finds a drop probability whose degraded corpus lands near target_fc
/// fully-constrained fraction (measured by the solver on a generated sample).
double calibrate_drop_prob(const std::vector<TemplateName>& templates, int sample_count,
                           double target_fc, uint64_t seed, const SolveOptions& opts = {});

std::vector<DatasetRecord> dedup(std::vector<DatasetRecord> records);
/// Solves each record, replaces geometry by the solved geometry, and caches
/// the solver verdict used by the split-specific loaders.
void preprocess(DatasetRecord* record, const SolveOptions& opts = {});
void split_records(std::vector<DatasetRecord>* records, double train_ratio, double val_ratio,
                   uint64_t seed);

struct DatagenOptions {
  std::vector<TemplateName> templates = all_templates();
  int count = 1000;
  double drop_prob = 0.15;
  std::optional<double> target_fc;  // calibrates drop_prob when set
  int max_primitives = kMaxPrimitives;
  uint64_t seed = 0;
  double train_ratio = 0.9;
  double val_ratio = 0.05;
  int threads = 2;
  SolveOptions solve;
};

std::vector<DatasetRecord> generate_dataset(const DatagenOptions& options);

nlohmann::ordered_json dataset_stats(const std::vector<DatasetRecord>& records);

nlohmann::ordered_json record_to_json(const DatasetRecord& record);
DatasetRecord record_from_json(const nlohmann::ordered_json& j);
void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records);
std::vector<DatasetRecord> load_dataset(const std::string& path);

}  // namespace sketchalign

#include "sketchalign/metrics.hpp"

#include <cmath>
#include <map>

namespace sketchalign {

MetricsTable eval_model(const PolicyModel& model,
                        const std::vector<const DatasetRecord*>& records,
                        const EvalOptions& options) {
  MetricsTable out;
  out.k = options.k;
  out.temperature = options.temperature;
  out.top_p = options.top_p;
  out.seed = options.seed;
  out.sketch_count = static_cast<int>(records.size());
  if (records.empty() || options.k < 1) return out;

  struct SampleOutcome {
    SketchCategory category = SketchCategory::NotSolvable;
    bool stable = false;
    bool success = false;
    std::string hash;
    std::vector<std::string> constraint_set;
  };
  const int k = options.k;
  int total = static_cast<int>(records.size()) * k;
  std::vector<SampleOutcome> outcomes(static_cast<size_t>(total));

  parallel_for(total, options.threads, [&](int idx) {
    int rec_idx = idx / k;
    const DatasetRecord* rec = records[static_cast<size_t>(rec_idx)];
    EncodedSketch enc = encode_sketch_for_policy(rec->sketch, model.config.coord_bins);
    SampleResult sample = sample_sequence(
        model, enc.geo, enc.kinds, options.temperature, options.top_p,
        seed_mix(options.seed, 0xEAA1, static_cast<uint64_t>(idx)));
    ScoredRollout scored = score_tokens(rec->sketch, sample.tokens, std::move(sample.logprobs),
                                        options.reward, options.solve, false);
    SampleOutcome& o = outcomes[static_cast<size_t>(idx)];
    // Validation failures fold into the not-solvable bucket for the table.
    o.category = scored.decode_clean ? scored.category : SketchCategory::NotSolvable;
    o.stable = scored.decode_clean && scored.stable &&
               scored.category != SketchCategory::NotSolvable;
    o.success = scored.decode_clean && scored.success;
    if (scored.decoded) {
      o.hash = wl_hash(rec->sketch, *scored.decoded);
      o.constraint_set = canonical_constraint_set(rec->sketch, *scored.decoded);
    } else {
      std::string raw = "tokens";
      for (int t : scored.tokens) raw += ':' + std::to_string(t);
      o.hash = raw;
    }
  });

  int fc = 0, uc = 0, oc = 0, ns = 0, stable = 0, successes = 0;
  int sketches_with_success = 0;
  double unique_sum = 0.0, miou_sum = 0.0;
  for (size_t rec_idx = 0; rec_idx < records.size(); ++rec_idx) {
    bool any_success = false;
    std::map<std::string, int> hash_count;
    std::vector<std::vector<std::string>> sets;
    for (int g = 0; g < k; ++g) {
      const auto& o = outcomes[rec_idx * static_cast<size_t>(k) + static_cast<size_t>(g)];
      switch (o.category) {
        case SketchCategory::FullyConstrained: ++fc; break;
        case SketchCategory::UnderConstrained: ++uc; break;
        case SketchCategory::OverConstrained: ++oc; break;
        case SketchCategory::NotSolvable: ++ns; break;
      }
      stable += o.stable ? 1 : 0;
      successes += o.success ? 1 : 0;
      any_success = any_success || o.success;
      hash_count[o.hash] += 1;
      sets.push_back(o.constraint_set);
    }
    sketches_with_success += any_success ? 1 : 0;
    int unique = 0;
    for (int g = 0; g < k; ++g) {
      const auto& o = outcomes[rec_idx * static_cast<size_t>(k) + static_cast<size_t>(g)];
      unique += hash_count[o.hash] == 1 ? 1 : 0;
    }
    unique_sum += static_cast<double>(unique) / k;
    if (k >= 2) miou_sum += miou(sets);
  }

  double pct = 100.0 / total;
  out.fc_pct = fc * pct;
  out.uc_pct = uc * pct;
  out.oc_pct = oc * pct;
  out.ns_pct = ns * pct;
  out.stable_pct = stable * pct;
  out.pass_at[1] = successes * pct;
  out.pass_at[k] = 100.0 * sketches_with_success / static_cast<double>(records.size());
  out.unique_at_k = 100.0 * unique_sum / static_cast<double>(records.size());
  out.miou_at_k = k >= 2 ? miou_sum / static_cast<double>(records.size()) : 1.0;
  return out;
}

nlohmann::ordered_json metrics_to_json(const MetricsTable& metrics) {
  nlohmann::ordered_json j;
  j["fc_pct"] = metrics.fc_pct;
  j["uc_pct"] = metrics.uc_pct;
  j["oc_pct"] = metrics.oc_pct;
  j["ns_pct"] = metrics.ns_pct;
  j["stable_pct"] = metrics.stable_pct;
  nlohmann::ordered_json pass = nlohmann::ordered_json::object();
  for (const auto& [k, v] : metrics.pass_at) pass[std::to_string(k)] = v;
  j["pass_at"] = pass;
  j["unique_at_k"] = metrics.unique_at_k;
  j["miou_at_k"] = metrics.miou_at_k;
  j["k"] = metrics.k;
  j["temperature"] = metrics.temperature;
  j["top_p"] = metrics.top_p;
  j["seed"] = metrics.seed;
  j["sketch_count"] = metrics.sketch_count;
  return j;
}

}  // namespace sketchalign

#pragma once

#include <functional>

#include "sketchalign/datagen.hpp"
#include "sketchalign/policy.hpp"
#include "sketchalign/rewards.hpp"
#include "sketchalign/util.hpp"

namespace sketchalign {

struct EncodedSketch {
  GeometryTokens geo;
  std::vector<PrimitiveKind> kinds;
};
EncodedSketch encode_sketch_for_policy(const Sketch& sketch, int coord_bins);

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
  double fc_rate = 0.0;
  double kl = 0.0;
};
using StepLogger = std::function<void(const StepLog&)>;

/// Table B.1/B.2 hyperparameters plus desk-scale knobs; every field maps to a
/// key=value config entry of the same name.
struct TrainConfig {
  uint64_t seed = 0;
  int threads = 2;

  // next-token pretraining / SFT (scale-dependent; not pinned by the tables)
  double pretrain_lr = 3e-4;
  int pretrain_epochs = 30;
  int pretrain_batch = 64;
  double sft_lr = 1e-4;
  int sft_epochs = 20;
  int sft_batch = 64;

  // Expert Iteration
  double exit_lr = 1e-6;
  int exit_rounds = 2;
  int exit_k = 8;
  double exit_temperature = 1.0;
  int exit_batch = 64;
  int exit_epochs_per_round = 1;

  // DPO
  double dpo_lr = 1e-5;
  double dpo_beta = 0.1;
  double dpo_sft_weight = 0.05;
  double dpo_label_smoothing = 0.3;
  int dpo_rounds = 2;
  int dpo_k = 8;
  double dpo_temperature = 1.0;
  int dpo_batch = 64;
  double dpo_fc_curve_threshold = 0.9;
  int dpo_epochs_per_round = 1;

  // ReMax / RLOO / GRPO
  int rl_steps = 2000;
  int rl_batch = 32;  // queries per step
  int rl_group = 8;
  double rl_lr = 1e-5;
  double rl_temperature = 1.0;
  double rl_top_p = 1.0;
  int rl_ref_update = 100;
  double rl_kl_coeff = 0.01;  // KL added to rewards (ReMax/RLOO; GRPO uses 0)
  double grpo_kl_beta = 0.01;
  double grpo_clip_eps = 0.2;

  RewardConfig reward;
  SolveOptions solve;

  static TrainConfig from_config(const KeyValueConfig& kv);
};

// ---- Differentiable objectives (surrogate losses over fixed rollouts) ----

struct CeExample {
  const EncodedSketch* enc = nullptr;
  const std::vector<int>* tokens = nullptr;
};
/// Mean per-token cross-entropy over the batch; adds gradients when given.
double ce_loss_and_grad(const PolicyModel& model, const std::vector<CeExample>& batch,
                        int threads, GradStore* grads);

struct ReinforceSequence {
  const EncodedSketch* enc = nullptr;
  std::vector<int> tokens;
  std::vector<double> coeffs;  // per-prediction coefficient: advantage + penalty
};
/// loss = -scale * sum_seq sum_t coeff_t * log pi(t)
double reinforce_loss_and_grad(const PolicyModel& model,
                               const std::vector<ReinforceSequence>& seqs, double scale,
                               int threads, GradStore* grads);

struct GrpoSequence {
  const EncodedSketch* enc = nullptr;
  std::vector<int> tokens;
  std::vector<double> ref_logprobs;  // sampling-time, from the reference snapshot
  std::vector<double> advantages;    // per-prediction: A_g + penalty
};
/// loss = -scale * sum_seq mean_t[ min(rho A, clip(rho) A) - beta*(1/rho + ln rho - 1) ]
double grpo_loss_and_grad(const PolicyModel& model, const std::vector<GrpoSequence>& seqs,
                          double clip_eps, double kl_beta, double scale, int threads,
                          GradStore* grads);

struct DpoPair {
  const EncodedSketch* enc = nullptr;
  std::vector<int> win_tokens, lose_tokens;
  double ref_logprob_win = 0.0, ref_logprob_lose = 0.0;
};
struct DpoLossParts {
  double preference = 0.0;  // smoothed -log sigmoid part, mean over pairs
  double sft = 0.0;         // cross-entropy anchor on the winners
  double total = 0.0;
};
DpoLossParts dpo_loss_and_grad(const PolicyModel& model, const std::vector<DpoPair>& pairs,
                               double beta, double label_smoothing, double sft_weight,
                               int threads, GradStore* grads);

/// Per-token KL values along one sequence. GRPO uses the nonnegative ratio
/// estimator 1/rho + log rho - 1; ReMax/RLOO use log pi - log pi_ref.
std::vector<double> kl_per_token(const std::vector<double>& policy_logprobs,
                                 const std::vector<double>& ref_logprobs, bool ratio_estimator);

// ---- Rollout scoring ----

struct ScoredRollout {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // sampling-time, one per prediction
  RewardBreakdown breakdown;
  SketchCategory category = SketchCategory::NotSolvable;
  double fc_curve_fraction = 0.0;
  bool decode_clean = false;
  bool stable = false;
  bool success = false;                // fully constrained and stable
  std::vector<double> token_penalties;  // per-prediction constraint-wise penalty
  std::optional<ConstraintSequence> decoded;
};

ScoredRollout score_tokens(const Sketch& sketch, const std::vector<int>& tokens,
                           std::vector<double> logprobs, const RewardConfig& reward_cfg,
                           const SolveOptions& solve_opts, bool want_penalties);

/// Prediction-index ranges [begin, end) of each constraint item in a token
/// sequence (type token plus refs).
std::vector<std::pair<int, int>> item_token_ranges(const std::vector<int>& tokens,
                                                   const std::vector<PrimitiveKind>& kinds);

// ---- Training procedures ----

/// Next-token training; `filter` selects which records participate.
PolicyModel train_ce(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                     double lr, int epochs, int batch_size, int threads, uint64_t seed,
                     const StepLogger& log);

PolicyModel train_exit(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                       const TrainConfig& cfg, const StepLogger& log);
PolicyModel train_dpo(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                      const TrainConfig& cfg, const StepLogger& log);

enum class RlAlgo { ReMax, Rloo, Grpo };
std::optional<RlAlgo> rl_algo_from_string(const std::string& name);
PolicyModel train_rl(RlAlgo algo, PolicyModel model,
                     const std::vector<const DatasetRecord*>& records, const TrainConfig& cfg,
                     const StepLogger& log);

std::vector<const DatasetRecord*> select_split(const std::vector<DatasetRecord>& records,
                                               const std::string& split);
std::vector<const DatasetRecord*> filter_pretrainable(
    const std::vector<const DatasetRecord*>& records);
std::vector<const DatasetRecord*> filter_sft(const std::vector<const DatasetRecord*>& records);

}  // namespace sketchalign

#include "sketchalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace sketchalign {

EncodedSketch encode_sketch_for_policy(const Sketch& sketch, int coord_bins) {
  return EncodedSketch{encode_geometry(sketch, coord_bins), primitive_kinds(sketch)};
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& kv) {
  TrainConfig c;
  c.seed = static_cast<uint64_t>(kv.get("seed", 0));
  c.threads = kv.get("threads", c.threads);
  c.pretrain_lr = kv.get("pretrain_lr", c.pretrain_lr);
  c.pretrain_epochs = kv.get("pretrain_epochs", c.pretrain_epochs);
  c.pretrain_batch = kv.get("pretrain_batch", c.pretrain_batch);
  c.sft_lr = kv.get("sft_lr", c.sft_lr);
  c.sft_epochs = kv.get("sft_epochs", c.sft_epochs);
  c.sft_batch = kv.get("sft_batch", c.sft_batch);
  c.exit_lr = kv.get("exit_lr", c.exit_lr);
  c.exit_rounds = kv.get("exit_rounds", c.exit_rounds);
  c.exit_k = kv.get("exit_k", c.exit_k);
  c.exit_temperature = kv.get("exit_temperature", c.exit_temperature);
  c.exit_batch = kv.get("exit_batch", c.exit_batch);
  c.exit_epochs_per_round = kv.get("exit_epochs_per_round", c.exit_epochs_per_round);
  c.dpo_lr = kv.get("dpo_lr", c.dpo_lr);
  c.dpo_beta = kv.get("dpo_beta", c.dpo_beta);
  c.dpo_sft_weight = kv.get("dpo_sft_weight", c.dpo_sft_weight);
  c.dpo_label_smoothing = kv.get("dpo_label_smoothing", c.dpo_label_smoothing);
  c.dpo_rounds = kv.get("dpo_rounds", c.dpo_rounds);
  c.dpo_k = kv.get("dpo_k", c.dpo_k);
  c.dpo_temperature = kv.get("dpo_temperature", c.dpo_temperature);
  c.dpo_batch = kv.get("dpo_batch", c.dpo_batch);
  c.dpo_fc_curve_threshold = kv.get("dpo_fc_curve_threshold", c.dpo_fc_curve_threshold);
  c.dpo_epochs_per_round = kv.get("dpo_epochs_per_round", c.dpo_epochs_per_round);
  c.rl_steps = kv.get("rl_steps", c.rl_steps);
  c.rl_batch = kv.get("rl_batch", c.rl_batch);
  c.rl_group = kv.get("rl_group", c.rl_group);
  c.rl_lr = kv.get("rl_lr", c.rl_lr);
  c.rl_temperature = kv.get("rl_temperature", c.rl_temperature);
  c.rl_top_p = kv.get("rl_top_p", c.rl_top_p);
  c.rl_ref_update = kv.get("rl_ref_update", c.rl_ref_update);
  c.rl_kl_coeff = kv.get("rl_kl_coeff", c.rl_kl_coeff);
  c.grpo_kl_beta = kv.get("grpo_kl_beta", c.grpo_kl_beta);
  c.grpo_clip_eps = kv.get("grpo_clip_eps", c.grpo_clip_eps);
  c.reward.r_unstable = kv.get("r_unstable", c.reward.r_unstable);
  c.reward.r_not_solvable = kv.get("r_not_solvable", c.reward.r_not_solvable);
  c.reward.r_over_constrained = kv.get("r_over_constrained", c.reward.r_over_constrained);
  c.reward.r_failure = kv.get("r_failure", c.reward.r_failure);
  c.reward.constraintwise_penalty =
      kv.get("constraintwise_penalty", c.reward.constraintwise_penalty);
  c.reward.stability_bins = kv.get("stability_bins", c.reward.stability_bins);
  c.reward.overdim_penalty_enabled =
      kv.get("overdim_penalty_enabled", c.reward.overdim_penalty_enabled);
  c.reward.overdim_count_coeff = kv.get("overdim_count_coeff", c.reward.overdim_count_coeff);
  c.reward.overdim_ratio_coeff = kv.get("overdim_ratio_coeff", c.reward.overdim_ratio_coeff);
  c.solve.max_iterations = kv.get("solver_max_iterations", c.solve.max_iterations);
  c.solve.residual_tol = kv.get("solver_residual_tol", c.solve.residual_tol);
  c.solve.rank_tol = kv.get("solver_rank_tol", c.solve.rank_tol);
  c.solve.nullspace_tol = kv.get("solver_nullspace_tol", c.solve.nullspace_tol);
  c.solve.damping_init = kv.get("solver_damping_init", c.solve.damping_init);
  c.solve.stability_bins = c.reward.stability_bins;
  return c;
}

namespace {

// Contiguous-block partition shared by every parallel loss pass; block order
// is the merge order, so float accumulation stays reproducible.
void parallel_blocks(int count, int threads,
                     const std::function<void(int, int, int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  int chunk = (count + threads - 1) / threads;
  if (threads == 1) {
    if (count > 0) fn(0, 0, count);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    int begin = t * chunk;
    int end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, t, begin, end] { fn(t, begin, end); });
  }
  for (auto& th : pool) th.join();
}

// Runs per-item tape losses in parallel, merging gradients block by block.
double parallel_tape_loss(int count, int threads, const ParamStore& params, GradStore* grads,
                          const std::function<double(int, GradStore*)>& item) {
  if (count == 0) return 0.0;
  threads = std::max(1, std::min(threads, count));
  int blocks = std::min(threads, count);
  std::vector<GradStore> locals(static_cast<size_t>(blocks));
  if (grads) {
    for (auto& g : locals) g.init_like(params);
  }
  std::vector<double> losses(static_cast<size_t>(count), 0.0);
  parallel_blocks(count, threads, [&](int block, int begin, int end) {
    for (int i = begin; i < end; ++i) {
      losses[static_cast<size_t>(i)] =
          item(i, grads ? &locals[static_cast<size_t>(block)] : nullptr);
    }
  });
  if (grads) {
    for (const auto& local : locals) grads->add(local);
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total;
}

}  // namespace

double ce_loss_and_grad(const PolicyModel& model, const std::vector<CeExample>& batch,
                        int threads, GradStore* grads) {
  long total_tokens = 0;
  for (const auto& ex : batch) total_tokens += static_cast<long>(ex.tokens->size()) - 1;
  if (total_tokens <= 0) return 0.0;
  double inv = 1.0 / static_cast<double>(total_tokens);

  return parallel_tape_loss(
      static_cast<int>(batch.size()), threads, model.params, grads,
      [&](int i, GradStore* local) {
        const auto& ex = batch[static_cast<size_t>(i)];
        ad::Tape tape;
        TapeLeaves leaves = make_leaves(tape, model.params);
        auto lp = sequence_logprob_var(tape, leaves, model, ex.enc->geo, ex.enc->kinds,
                                       *ex.tokens);
        auto loss = tape.scale(tape.sum(lp), -inv);
        if (local) {
          tape.backward(loss);
          accumulate_grads(tape, leaves, local);
        }
        return tape.value(loss)(0, 0);
      });
}

double reinforce_loss_and_grad(const PolicyModel& model,
                               const std::vector<ReinforceSequence>& seqs, double scale,
                               int threads, GradStore* grads) {
  return parallel_tape_loss(
      static_cast<int>(seqs.size()), threads, model.params, grads,
      [&](int i, GradStore* local) {
        const auto& seq = seqs[static_cast<size_t>(i)];
        ad::Tape tape;
        TapeLeaves leaves = make_leaves(tape, model.params);
        auto lp = sequence_logprob_var(tape, leaves, model, seq.enc->geo, seq.enc->kinds,
                                       seq.tokens);
        ad::Mat weights(static_cast<int>(seq.coeffs.size()), 1);
        for (size_t t = 0; t < seq.coeffs.size(); ++t) {
          weights(static_cast<int>(t), 0) = -scale * seq.coeffs[t];
        }
        auto loss = tape.weighted_sum(lp, weights);
        if (local) {
          tape.backward(loss);
          accumulate_grads(tape, leaves, local);
        }
        return tape.value(loss)(0, 0);
      });
}

double grpo_loss_and_grad(const PolicyModel& model, const std::vector<GrpoSequence>& seqs,
                          double clip_eps, double kl_beta, double scale, int threads,
                          GradStore* grads) {
  return parallel_tape_loss(
      static_cast<int>(seqs.size()), threads, model.params, grads,
      [&](int i, GradStore* local) {
        const auto& seq = seqs[static_cast<size_t>(i)];
        ad::Tape tape;
        TapeLeaves leaves = make_leaves(tape, model.params);
        auto lp = sequence_logprob_var(tape, leaves, model, seq.enc->geo, seq.enc->kinds,
                                       seq.tokens);
        int rows = static_cast<int>(seq.ref_logprobs.size());
        ad::Mat ref(rows, 1);
        ad::Mat adv(rows, 1);
        for (int t = 0; t < rows; ++t) {
          ref(t, 0) = seq.ref_logprobs[static_cast<size_t>(t)];
          adv(t, 0) = seq.advantages[static_cast<size_t>(t)];
        }
        auto delta = tape.sub(lp, tape.constant(ref));
        auto objective = tape.clipped_surrogate(delta, adv, clip_eps, kl_beta);
        auto loss = tape.scale(objective, -scale);
        if (local) {
          tape.backward(loss);
          accumulate_grads(tape, leaves, local);
        }
        return tape.value(loss)(0, 0);
      });
}

DpoLossParts dpo_loss_and_grad(const PolicyModel& model, const std::vector<DpoPair>& pairs,
                               double beta, double label_smoothing, double sft_weight,
                               int threads, GradStore* grads) {
  if (pairs.empty()) return {};
  double inv = 1.0 / static_cast<double>(pairs.size());
  std::vector<double> pref_parts(pairs.size(), 0.0);
  std::vector<double> sft_parts(pairs.size(), 0.0);

  parallel_tape_loss(
      static_cast<int>(pairs.size()), threads, model.params, grads,
      [&](int i, GradStore* local) {
        const auto& pair = pairs[static_cast<size_t>(i)];
        ad::Tape tape;
        TapeLeaves leaves = make_leaves(tape, model.params);
        auto lp_w = sequence_logprob_var(tape, leaves, model, pair.enc->geo, pair.enc->kinds,
                                         pair.win_tokens);
        auto lp_l = sequence_logprob_var(tape, leaves, model, pair.enc->geo, pair.enc->kinds,
                                         pair.lose_tokens);
        auto sum_w = tape.sum(lp_w);
        auto sum_l = tape.sum(lp_l);
        auto delta = tape.sub(tape.sub(sum_w, tape.constant(ad::Mat::Constant(1, 1, pair.ref_logprob_win))),
                              tape.sub(sum_l, tape.constant(ad::Mat::Constant(1, 1, pair.ref_logprob_lose))));
        auto scaled = tape.scale(delta, beta);
        // smoothed preference loss: -(1-e)*log s(bD) - e*log s(-bD)
        auto pref = tape.add(tape.scale(tape.log_sigmoid(scaled), -(1.0 - label_smoothing)),
                             tape.scale(tape.log_sigmoid(tape.scale(scaled, -1.0)),
                                        -label_smoothing));
        double win_tokens = static_cast<double>(pair.win_tokens.size()) - 1.0;
        auto ce = tape.scale(sum_w, -1.0 / win_tokens);
        auto total = tape.add(pref, tape.scale(ce, sft_weight));
        auto loss = tape.scale(total, inv);
        if (local) {
          tape.backward(loss);
          accumulate_grads(tape, leaves, local);
        }
        pref_parts[static_cast<size_t>(i)] = tape.value(pref)(0, 0);
        sft_parts[static_cast<size_t>(i)] = tape.value(ce)(0, 0);
        return tape.value(loss)(0, 0);
      });

  DpoLossParts parts;
  for (size_t i = 0; i < pairs.size(); ++i) {
    parts.preference += pref_parts[i] * inv;
    parts.sft += sft_parts[i] * inv;
  }
  parts.total = parts.preference + sft_weight * parts.sft;
  return parts;
}

std::vector<double> kl_per_token(const std::vector<double>& policy_logprobs,
                                 const std::vector<double>& ref_logprobs,
                                 bool ratio_estimator) {
  std::vector<double> out(policy_logprobs.size());
  for (size_t i = 0; i < out.size(); ++i) {
    double delta = policy_logprobs[i] - ref_logprobs[i];
    out[i] = ratio_estimator ? std::exp(-delta) + delta - 1.0 : delta;
  }
  return out;
}

std::vector<std::pair<int, int>> item_token_ranges(const std::vector<int>& tokens,
                                                   const std::vector<PrimitiveKind>& kinds) {
  std::vector<std::pair<int, int>> ranges;
  size_t i = 1;
  while (i < tokens.size() && tokens[i] != vocab::kEos) {
    int begin = static_cast<int>(i) - 1;  // prediction index of the type token
    ConstraintKind kind = vocab::kind_of(tokens[i]);
    ++i;
    int arity = 2;
    for (int k = 0; k < arity && i < tokens.size() && vocab::is_ref(tokens[i]); ++k, ++i) {
      if (k == 0) {
        arity = constraint_arity(kind, kinds[static_cast<size_t>(vocab::ref_of(tokens[i]))]);
      }
    }
    ranges.emplace_back(begin, static_cast<int>(i) - 1);
  }
  return ranges;
}

ScoredRollout score_tokens(const Sketch& sketch, const std::vector<int>& tokens,
                           std::vector<double> logprobs, const RewardConfig& reward_cfg,
                           const SolveOptions& solve_opts, bool want_penalties) {
  ScoredRollout out;
  out.tokens = tokens;
  out.logprobs = std::move(logprobs);
  out.token_penalties.assign(tokens.size() > 0 ? tokens.size() - 1 : 0, 0.0);

  DecodeResult dec = decode(tokens, sketch);
  if (!dec.structurally_ok()) {
    out.breakdown = reward_failure(reward_cfg);
    return out;
  }
  out.decoded = dec.sequence;
  SolveOptions opts = solve_opts;
  opts.stability_bins = reward_cfg.stability_bins;

  auto apply_penalties = [&] {
    if (!want_penalties) return;
    auto penalties = constraintwise_penalties(sketch, *dec.sequence, reward_cfg, opts);
    if (penalties.empty()) return;
    auto ranges = item_token_ranges(tokens, primitive_kinds(sketch));
    for (const auto& [item, value] : penalties) {
      if (item < 0 || item >= static_cast<int>(ranges.size())) continue;
      for (int t = ranges[static_cast<size_t>(item)].first;
           t < ranges[static_cast<size_t>(item)].second; ++t) {
        out.token_penalties[static_cast<size_t>(t)] += value;
      }
    }
  };

  if (!dec.issues.empty()) {
    out.breakdown = reward_failure(reward_cfg);
    apply_penalties();
    return out;
  }

  out.decode_clean = true;
  SolveReport report = solve(sketch, *dec.sequence, opts);
  out.breakdown = reward(report, *dec.sequence, sketch.size(), reward_cfg);
  out.category = report.status.category;
  out.fc_curve_fraction = report.status.fc_curve_fraction;
  out.stable = report.status.stable;
  out.success = out.category == SketchCategory::FullyConstrained && out.stable;
  if (report.status.category == SketchCategory::NotSolvable ||
      report.status.category == SketchCategory::OverConstrained) {
    apply_penalties();
  }
  return out;
}

std::vector<const DatasetRecord*> select_split(const std::vector<DatasetRecord>& records,
                                               const std::string& split) {
  std::vector<const DatasetRecord*> out;
  for (const auto& rec : records) {
    if (split == "all" || rec.split == split) out.push_back(&rec);
  }
  return out;
}

std::vector<const DatasetRecord*> filter_pretrainable(
    const std::vector<const DatasetRecord*>& records) {
  std::vector<const DatasetRecord*> out;
  for (const auto* rec : records) {
    if (rec->usable_for_pretrain()) out.push_back(rec);
  }
  return out;
}

std::vector<const DatasetRecord*> filter_sft(const std::vector<const DatasetRecord*>& records) {
  std::vector<const DatasetRecord*> out;
  for (const auto* rec : records) {
    if (rec->usable_for_sft()) out.push_back(rec);
  }
  return out;
}

namespace {

struct EncodedCorpus {
  std::vector<EncodedSketch> encs;
  std::vector<std::vector<int>> gt_tokens;

  EncodedCorpus(const std::vector<const DatasetRecord*>& records, int coord_bins) {
    encs.reserve(records.size());
    gt_tokens.reserve(records.size());
    for (const auto* rec : records) {
      encs.push_back(encode_sketch_for_policy(rec->sketch, coord_bins));
      gt_tokens.push_back(encode_constraints(rec->constraints));
    }
  }
};

std::vector<size_t> shuffled_indices(size_t n, uint64_t seed) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace

PolicyModel train_ce(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                     double lr, int epochs, int batch_size, int threads, uint64_t seed,
                     const StepLogger& log) {
  if (records.empty()) return model;
  EncodedCorpus corpus(records, model.config.coord_bins);
  Adam adam(lr);
  int step = 0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto order = shuffled_indices(records.size(), seed_mix(seed, 0xCE0, static_cast<uint64_t>(epoch)));
    for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(batch_size)) {
      size_t end = std::min(order.size(), begin + static_cast<size_t>(batch_size));
      std::vector<CeExample> batch;
      batch.reserve(end - begin);
      for (size_t i = begin; i < end; ++i) {
        batch.push_back({&corpus.encs[order[i]], &corpus.gt_tokens[order[i]]});
      }
      GradStore grads;
      grads.init_like(model.params);
      double loss = ce_loss_and_grad(model, batch, threads, &grads);
      adam.step(&model.params, grads);
      if (log) log({++step, loss, 0.0, 0.0, 0.0});
    }
  }
  return model;
}

namespace {

struct SampledPool {
  std::vector<ScoredRollout> rollouts;  // records.size() * k entries
};

SampledPool sample_pool(const PolicyModel& sampler,
                        const std::vector<const DatasetRecord*>& records,
                        const EncodedCorpus& corpus, int k, double temperature,
                        const TrainConfig& cfg, uint64_t phase, int round) {
  SampledPool pool;
  int total = static_cast<int>(records.size()) * k;
  pool.rollouts.resize(static_cast<size_t>(total));
  parallel_for(total, cfg.threads, [&](int idx) {
    int rec = idx / k;
    SampleResult sample = sample_sequence(
        sampler, corpus.encs[static_cast<size_t>(rec)].geo,
        corpus.encs[static_cast<size_t>(rec)].kinds, temperature, 1.0,
        seed_mix(cfg.seed, phase, static_cast<uint64_t>(round), static_cast<uint64_t>(idx)));
    pool.rollouts[static_cast<size_t>(idx)] =
        score_tokens(records[static_cast<size_t>(rec)]->sketch, sample.tokens,
                     std::move(sample.logprobs), cfg.reward, cfg.solve, false);
  });
  return pool;
}

}  // namespace

PolicyModel train_exit(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                       const TrainConfig& cfg, const StepLogger& log) {
  if (records.empty()) return model;
  EncodedCorpus corpus(records, model.config.coord_bins);
  Adam adam(cfg.exit_lr);
  int step = 0;
  for (int round = 0; round < cfg.exit_rounds; ++round) {
    SampledPool pool =
        sample_pool(model, records, corpus, cfg.exit_k, cfg.exit_temperature, cfg, 0xE817, round);

    // Rejection filter: discard under-, over-constrained, and unsolvable.
    std::vector<std::vector<int>> kept_tokens;
    std::vector<size_t> kept_rec;
    double reward_sum = 0.0;
    int fc = 0;
    for (size_t idx = 0; idx < pool.rollouts.size(); ++idx) {
      const auto& r = pool.rollouts[idx];
      reward_sum += r.breakdown.total;
      if (r.decode_clean && r.category == SketchCategory::FullyConstrained) {
        ++fc;
        kept_tokens.push_back(r.tokens);
        kept_rec.push_back(idx / static_cast<size_t>(cfg.exit_k));
      }
    }
    double fc_rate = pool.rollouts.empty() ? 0.0 : static_cast<double>(fc) / pool.rollouts.size();
    double mean_reward = pool.rollouts.empty() ? 0.0 : reward_sum / pool.rollouts.size();

    for (int epoch = 0; epoch < cfg.exit_epochs_per_round; ++epoch) {
      auto order = shuffled_indices(
          kept_tokens.size(),
          seed_mix(cfg.seed, 0xE817E, static_cast<uint64_t>(round), static_cast<uint64_t>(epoch)));
      for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.exit_batch)) {
        size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.exit_batch));
        std::vector<CeExample> batch;
        for (size_t i = begin; i < end; ++i) {
          batch.push_back({&corpus.encs[kept_rec[order[i]]], &kept_tokens[order[i]]});
        }
        GradStore grads;
        grads.init_like(model.params);
        double loss = ce_loss_and_grad(model, batch, cfg.threads, &grads);
        adam.step(&model.params, grads);
        if (log) log({++step, loss, mean_reward, fc_rate, 0.0});
      }
    }
  }
  return model;
}

PolicyModel train_dpo(PolicyModel model, const std::vector<const DatasetRecord*>& records,
                      const TrainConfig& cfg, const StepLogger& log) {
  if (records.empty()) return model;
  EncodedCorpus corpus(records, model.config.coord_bins);
  Adam adam(cfg.dpo_lr);
  int step = 0;
  for (int round = 0; round < cfg.dpo_rounds; ++round) {
    PolicyModel ref = model;  // reference resets to the current policy each round
    SampledPool pool =
        sample_pool(model, records, corpus, cfg.dpo_k, cfg.dpo_temperature, cfg, 0xD90, round);

    double reward_sum = 0.0;
    int fc = 0;
    for (const auto& r : pool.rollouts) {
      reward_sum += r.breakdown.total;
      fc += (r.decode_clean && r.category == SketchCategory::FullyConstrained) ? 1 : 0;
    }
    double fc_rate = pool.rollouts.empty() ? 0.0 : static_cast<double>(fc) / pool.rollouts.size();
    double mean_reward = pool.rollouts.empty() ? 0.0 : reward_sum / pool.rollouts.size();

    // Winners are fully constrained; losers are UC/OC/NS under the curve-FC cap.
    std::vector<DpoPair> pairs;
    for (size_t rec = 0; rec < records.size(); ++rec) {
      std::vector<const ScoredRollout*> winners, losers;
      for (int k = 0; k < cfg.dpo_k; ++k) {
        const auto& r = pool.rollouts[rec * static_cast<size_t>(cfg.dpo_k) + static_cast<size_t>(k)];
        if (!r.decode_clean) continue;
        if (r.category == SketchCategory::FullyConstrained) {
          winners.push_back(&r);
        } else if (r.fc_curve_fraction < cfg.dpo_fc_curve_threshold) {
          losers.push_back(&r);
        }
      }
      for (const auto* w : winners) {
        for (const auto* l : losers) {
          DpoPair pair;
          pair.enc = &corpus.encs[rec];
          pair.win_tokens = w->tokens;
          pair.lose_tokens = l->tokens;
          pairs.push_back(std::move(pair));
        }
      }
    }

    parallel_for(static_cast<int>(pairs.size()), cfg.threads, [&](int i) {
      auto& pair = pairs[static_cast<size_t>(i)];
      pair.ref_logprob_win =
          sequence_logprob(ref, pair.enc->geo, pair.enc->kinds, pair.win_tokens);
      pair.ref_logprob_lose =
          sequence_logprob(ref, pair.enc->geo, pair.enc->kinds, pair.lose_tokens);
    });

    for (int epoch = 0; epoch < cfg.dpo_epochs_per_round; ++epoch) {
      auto order = shuffled_indices(
          pairs.size(),
          seed_mix(cfg.seed, 0xD90E, static_cast<uint64_t>(round), static_cast<uint64_t>(epoch)));
      for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(cfg.dpo_batch)) {
        size_t end = std::min(order.size(), begin + static_cast<size_t>(cfg.dpo_batch));
        std::vector<DpoPair> batch;
        for (size_t i = begin; i < end; ++i) batch.push_back(pairs[order[i]]);
        GradStore grads;
        grads.init_like(model.params);
        DpoLossParts parts = dpo_loss_and_grad(model, batch, cfg.dpo_beta,
                                               cfg.dpo_label_smoothing, cfg.dpo_sft_weight,
                                               cfg.threads, &grads);
        adam.step(&model.params, grads);
        if (log) log({++step, parts.total, mean_reward, fc_rate, 0.0});
      }
    }
  }
  return model;
}

std::optional<RlAlgo> rl_algo_from_string(const std::string& name) {
  if (name == "remax") return RlAlgo::ReMax;
  if (name == "rloo") return RlAlgo::Rloo;
  if (name == "grpo") return RlAlgo::Grpo;
  return std::nullopt;
}

PolicyModel train_rl(RlAlgo algo, PolicyModel model,
                     const std::vector<const DatasetRecord*>& records, const TrainConfig& cfg,
                     const StepLogger& log) {
  if (records.empty()) return model;
  if (algo != RlAlgo::ReMax && cfg.rl_group < 2) {
    throw std::invalid_argument("degenerate group: RLOO/GRPO need G >= 2");
  }
  EncodedCorpus corpus(records, model.config.coord_bins);
  Adam adam(cfg.rl_lr);
  PolicyModel ref = model;

  const int B = cfg.rl_batch;
  const int G = algo == RlAlgo::ReMax ? 1 : cfg.rl_group;
  const bool kl_in_reward = algo != RlAlgo::Grpo && cfg.rl_kl_coeff != 0.0;
  const double eps_guard = 1e-8;

  std::vector<size_t> order = shuffled_indices(records.size(), seed_mix(cfg.seed, 0x09DE, 0));
  size_t cursor = 0;
  uint64_t reshuffles = 0;
  auto next_batch = [&] {
    std::vector<size_t> batch;
    batch.reserve(static_cast<size_t>(B));
    for (int b = 0; b < B; ++b) {
      if (cursor >= order.size()) {
        order = shuffled_indices(records.size(), seed_mix(cfg.seed, 0x09DE, ++reshuffles));
        cursor = 0;
      }
      batch.push_back(order[cursor++]);
    }
    return batch;
  };

  for (int step = 1; step <= cfg.rl_steps; ++step) {
    if (cfg.rl_ref_update > 0 && step > 1 && (step - 1) % cfg.rl_ref_update == 0) {
      ref = model;
    }
    const PolicyModel& sampler = algo == RlAlgo::Grpo ? ref : model;
    std::vector<size_t> batch = next_batch();

    // Rollouts (plus one greedy slot per query for ReMax).
    int per_query = G + (algo == RlAlgo::ReMax ? 1 : 0);
    int total = B * per_query;
    std::vector<ScoredRollout> rollouts(static_cast<size_t>(total));
    parallel_for(total, cfg.threads, [&](int idx) {
      int b = idx / per_query;
      int g = idx % per_query;
      size_t rec = batch[static_cast<size_t>(b)];
      const auto& enc = corpus.encs[rec];
      SampleResult sample;
      if (algo == RlAlgo::ReMax && g == G) {
        sample = sample_sequence(model, enc.geo, enc.kinds, 0.0, 1.0, 0);
      } else {
        sample = sample_sequence(sampler, enc.geo, enc.kinds, cfg.rl_temperature, cfg.rl_top_p,
                                 seed_mix(cfg.seed, 0x57E9, static_cast<uint64_t>(step),
                                          static_cast<uint64_t>(idx)));
      }
      rollouts[static_cast<size_t>(idx)] =
          score_tokens(records[rec]->sketch, sample.tokens, std::move(sample.logprobs),
                       cfg.reward, cfg.solve, true);
    });

    // KL penalty added to rewards (sampling-time policy logprobs vs reference).
    std::vector<double> rewards(static_cast<size_t>(total));
    std::vector<double> kl_values(static_cast<size_t>(total), 0.0);
    if (kl_in_reward) {
      parallel_for(total, cfg.threads, [&](int idx) {
        int b = idx / per_query;
        size_t rec = batch[static_cast<size_t>(b)];
        const auto& enc = corpus.encs[rec];
        const auto& r = rollouts[static_cast<size_t>(idx)];
        std::vector<double> ref_lp;
        sequence_logprob(ref, enc.geo, enc.kinds, r.tokens, &ref_lp);
        double kl = 0.0;
        for (double v : kl_per_token(r.logprobs, ref_lp, false)) kl += v;
        kl_values[static_cast<size_t>(idx)] = kl;
      });
    }
    for (int idx = 0; idx < total; ++idx) {
      rewards[static_cast<size_t>(idx)] = rollouts[static_cast<size_t>(idx)].breakdown.total -
                                          cfg.rl_kl_coeff * kl_values[static_cast<size_t>(idx)];
    }

    // Advantages.
    std::vector<double> advantage(static_cast<size_t>(B * G), 0.0);
    if (algo == RlAlgo::ReMax) {
      std::vector<double> raw(static_cast<size_t>(B));
      for (int b = 0; b < B; ++b) {
        raw[static_cast<size_t>(b)] = rewards[static_cast<size_t>(b * per_query)] -
                                      rewards[static_cast<size_t>(b * per_query + G)];
      }
      double mean = 0.0;
      for (double a : raw) mean += a;
      mean /= B;
      double var = 0.0;
      for (double a : raw) var += (a - mean) * (a - mean);
      double std_dev = std::sqrt(var / B);
      for (int b = 0; b < B; ++b) {
        advantage[static_cast<size_t>(b)] = (raw[static_cast<size_t>(b)] - mean) /
                                            (std_dev + eps_guard);
      }
    } else {
      for (int b = 0; b < B; ++b) {
        double sum = 0.0;
        for (int g = 0; g < G; ++g) sum += rewards[static_cast<size_t>(b * G + g)];
        double mean = sum / G;
        std::vector<double> raw(static_cast<size_t>(G));
        if (algo == RlAlgo::Rloo) {
          for (int g = 0; g < G; ++g) {
            double r = rewards[static_cast<size_t>(b * G + g)];
            raw[static_cast<size_t>(g)] = r - (sum - r) / (G - 1);
          }
        } else {
          for (int g = 0; g < G; ++g) {
            raw[static_cast<size_t>(g)] = rewards[static_cast<size_t>(b * G + g)] - mean;
          }
        }
        double rmean = 0.0;
        for (double a : raw) rmean += a;
        rmean /= G;
        double var = 0.0;
        for (double a : raw) var += (a - rmean) * (a - rmean);
        double std_dev = std::sqrt(var / G);
        for (int g = 0; g < G; ++g) {
          advantage[static_cast<size_t>(b * G + g)] =
              (raw[static_cast<size_t>(g)] - rmean) / (std_dev + eps_guard);
        }
      }
    }

    // Loss over the sampled trajectories.
    double loss = 0.0;
    GradStore grads;
    grads.init_like(model.params);
    double mean_kl_log = 0.0;
    if (algo == RlAlgo::Grpo) {
      std::vector<GrpoSequence> seqs(static_cast<size_t>(B * G));
      for (int b = 0; b < B; ++b) {
        for (int g = 0; g < G; ++g) {
          int idx = b * G + g;
          const auto& r = rollouts[static_cast<size_t>(idx)];
          GrpoSequence seq;
          seq.enc = &corpus.encs[batch[static_cast<size_t>(b)]];
          seq.tokens = r.tokens;
          seq.ref_logprobs = r.logprobs;  // sampled from the reference snapshot
          seq.advantages.resize(r.token_penalties.size());
          for (size_t t = 0; t < seq.advantages.size(); ++t) {
            seq.advantages[t] = advantage[static_cast<size_t>(idx)] + r.token_penalties[t];
          }
          seqs[static_cast<size_t>(idx)] = std::move(seq);
        }
      }
      loss = grpo_loss_and_grad(model, seqs, cfg.grpo_clip_eps, cfg.grpo_kl_beta,
                                1.0 / (B * G), cfg.threads, &grads);
      // Ratio-form KL of the pre-update policy against the sampling snapshot.
      std::vector<double> kls(seqs.size(), 0.0);
      parallel_for(static_cast<int>(seqs.size()), cfg.threads, [&](int i) {
        const auto& seq = seqs[static_cast<size_t>(i)];
        std::vector<double> lp;
        sequence_logprob(model, seq.enc->geo, seq.enc->kinds, seq.tokens, &lp);
        double kl = 0.0;
        for (double v : kl_per_token(lp, seq.ref_logprobs, true)) kl += v;
        kls[static_cast<size_t>(i)] = kl / std::max<size_t>(lp.size(), 1);
      });
      for (double k : kls) mean_kl_log += k;
      mean_kl_log /= static_cast<double>(kls.size());
    } else {
      std::vector<ReinforceSequence> seqs(static_cast<size_t>(B * G));
      for (int b = 0; b < B; ++b) {
        for (int g = 0; g < G; ++g) {
          int roll_idx = b * per_query + g;
          int adv_idx = b * G + g;
          const auto& r = rollouts[static_cast<size_t>(roll_idx)];
          ReinforceSequence seq;
          seq.enc = &corpus.encs[batch[static_cast<size_t>(b)]];
          seq.tokens = r.tokens;
          seq.coeffs.resize(r.token_penalties.size());
          for (size_t t = 0; t < seq.coeffs.size(); ++t) {
            seq.coeffs[t] = advantage[static_cast<size_t>(adv_idx)] + r.token_penalties[t];
          }
          seqs[static_cast<size_t>(adv_idx)] = std::move(seq);
        }
      }
      double scale = algo == RlAlgo::ReMax ? 1.0 / B : 1.0 / (B * G);
      loss = reinforce_loss_and_grad(model, seqs, scale, cfg.threads, &grads);
      if (kl_in_reward) {
        for (int b = 0; b < B; ++b) {
          for (int g = 0; g < G; ++g) {
            mean_kl_log += kl_values[static_cast<size_t>(b * per_query + g)];
          }
        }
        mean_kl_log /= static_cast<double>(B * G);
      }
    }
    adam.step(&model.params, grads);

    double mean_reward = 0.0;
    int fc = 0;
    for (int b = 0; b < B; ++b) {
      for (int g = 0; g < G; ++g) {
        const auto& r = rollouts[static_cast<size_t>(b * per_query + g)];
        mean_reward += r.breakdown.total;
        fc += (r.decode_clean && r.category == SketchCategory::FullyConstrained) ? 1 : 0;
      }
    }
    mean_reward /= static_cast<double>(B * G);
    if (log) {
      log({step, loss, mean_reward, static_cast<double>(fc) / (B * G), mean_kl_log});
    }
  }
  return model;
}

}  // namespace sketchalign

#pragma once

#include <memory>
#include <random>

#include "sketchalign/autodiff.hpp"
#include "sketchalign/tokenizer.hpp"

namespace sketchalign {

struct PolicyConfig {
  int embed_dim = 128;
  int enc_layers = 2;
  int dec_layers = 2;
  int heads = 4;
  int ff_dim = 256;
  int max_seq_len = kMaxSeqLen;
  int coord_bins = kCoordBins;
  uint64_t seed = 0;

  int head_dim() const { return embed_dim / heads; }
};

/// Prediction-class layout at each decoding position:
/// [0..13] constraint types, [14] EOS, [15..15+n) pointer to primitive i.
constexpr int kTypeClasses = kConstraintKindCount + 1;
constexpr int kEosClass = kConstraintKindCount;
int class_of_token(int token);
int token_of_class(int cls);

struct NonFiniteError : std::runtime_error {
  NonFiniteError() : std::runtime_error("non-finite value in training step") {}
};

/// Named parameter matrices in a fixed registration order; flat-indexable for
/// checkpoints, finite-difference probing, and the optimizer.
struct ParamStore {
  std::vector<ad::Mat> mats;
  std::vector<std::string> names;
  uint64_t version = 0;

  size_t total_size() const;
  double flat_get(size_t index) const;
  void flat_set(size_t index, double value);
  std::vector<float> flatten_f32() const;
  void load_f32(const std::vector<float>& flat);
};

struct GradStore {
  std::vector<ad::Mat> grads;

  void init_like(const ParamStore& params);
  void zero();
  void add(const GradStore& other);
  void scale(double s);
  bool all_finite() const;
};

struct LnIdx { int g = -1, b = -1; };
struct AttnIdx { int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1; };
struct FfIdx { int w1 = -1, b1 = -1, w2 = -1, b2 = -1; };
struct EncLayerIdx { LnIdx ln1; AttnIdx attn; LnIdx ln2; FfIdx ff; };
struct DecLayerIdx { LnIdx ln1; AttnIdx self_attn; LnIdx ln2; AttnIdx cross_attn; LnIdx ln3; FfIdx ff; };

struct PolicyLayout {
  int kind_embed = -1, fixed_embed = -1;
  std::array<int, 2 * kSamplePoints> coord_embed{};
  std::vector<EncLayerIdx> enc;
  LnIdx enc_ln;
  int token_embed = -1, ref_marker = -1, pos_embed = -1;
  std::vector<DecLayerIdx> dec;
  LnIdx dec_ln;
  int type_w = -1, type_b = -1, ptr_q = -1, ptr_k = -1;
};

/// Encoder-decoder pointer-network policy. Weights are scaled-uniform fan-in;
/// both output heads start at zero so every initial distribution is uniform
/// over its allowed classes.
struct PolicyModel {
  PolicyConfig config;
  ParamStore params;
  PolicyLayout layout;

  static PolicyModel init(const PolicyConfig& config);
};

void save_checkpoint(const std::string& path, const PolicyModel& model);
PolicyModel load_checkpoint(const std::string& path);

/// Plain-Eigen encoder pass (no gradient): one embedding row per primitive.
ad::Mat encode_primitives(const PolicyModel& model, const GeometryTokens& geo);

/// Incremental decoding state with per-layer KV caches. Math matches the tape
/// path; the replay-consistency tests pin the two together.
class PolicyInference {
 public:
  PolicyInference(const PolicyModel& model, const GeometryTokens& geo,
                  std::vector<PrimitiveKind> prim_kinds);

  const ad::Mat& encoder_output() const { return enc_out_; }
  const GrammarState& grammar_state() const { return state_; }
  bool done() const { return state_.done; }
  int position() const { return state_.position; }

  /// Distribution over the full token vocabulary for the next position, after
  /// the structural grammar mask; zero for disallowed tokens.
  Eigen::VectorXd next_token_dist() const;
  /// Class-space logits (kTypeClasses + n) before masking.
  Eigen::VectorXd next_class_logits() const;

  void feed(int token);

 private:
  void run_token(int token);  // appends to caches, updates last_hidden_

  const PolicyModel& model_;
  std::vector<PrimitiveKind> prim_kinds_;
  ad::Mat enc_out_;        // n x d
  ad::Mat ptr_keys_;       // n x d, enc_out * ptr_k
  struct LayerCache {
    ad::Mat self_k, self_v;    // grows one row per token
    ad::Mat cross_k, cross_v;  // fixed, from encoder output
  };
  std::vector<LayerCache> caches_;
  Eigen::RowVectorXd last_hidden_;  // final-LN output for the latest position
  GrammarState state_;
};

struct SampleResult {
  std::vector<int> tokens;
  std::vector<double> logprobs;  // one per generated token (excludes SOS)
};

/// Ancestral sampling under the grammar mask. T=0 is argmax; nucleus keeps the
/// smallest probability prefix with mass >= top_p. Deterministic given seed.
SampleResult sample_sequence(const PolicyModel& model, const GeometryTokens& geo,
                             const std::vector<PrimitiveKind>& prim_kinds, double temperature,
                             double top_p, uint64_t seed);
std::vector<int> greedy_sequence(const PolicyModel& model, const GeometryTokens& geo,
                                 const std::vector<PrimitiveKind>& prim_kinds);
/// Total and per-token log probability of `tokens` under the grammar mask.
double sequence_logprob(const PolicyModel& model, const GeometryTokens& geo,
                        const std::vector<PrimitiveKind>& prim_kinds,
                        const std::vector<int>& tokens,
                        std::vector<double>* per_token = nullptr);

/// Tape-side forward pass for training.
struct TapeLeaves {
  std::vector<ad::Tape::Var> vars;  // parallel to ParamStore::mats
};
TapeLeaves make_leaves(ad::Tape& tape, const ParamStore& params);
/// Per-token log probabilities (rows = predictions for tokens[1..]) of a
/// structurally valid token sequence.
ad::Tape::Var sequence_logprob_var(ad::Tape& tape, const TapeLeaves& leaves,
                                   const PolicyModel& model, const GeometryTokens& geo,
                                   const std::vector<PrimitiveKind>& prim_kinds,
                                   const std::vector<int>& tokens);
void accumulate_grads(const ad::Tape& tape, const TapeLeaves& leaves, GradStore* out);

class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  /// Applies one update; throws NonFiniteError if the gradient is not finite.
  void step(ParamStore* params, const GradStore& grads);

 private:
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
  std::vector<ad::Mat> m_, v_;
};

}  // namespace sketchalign

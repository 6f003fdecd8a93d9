#pragma once

#include <array>
#include <json.hpp>

#include "sketchalign/geometry.hpp"

namespace sketchalign {

/// Output-token vocabulary: specials, one type token per constraint kind, and
/// one pointer token per primitive slot. Coordinate bins are input-side only.
namespace vocab {
constexpr int kPad = 0;
constexpr int kSos = 1;
constexpr int kEos = 2;
constexpr int kTypeBase = 3;                                // 14 type tokens
constexpr int kRefBase = kTypeBase + kConstraintKindCount;  // REF_0..REF_15
constexpr int kSize = kRefBase + kMaxPrimitives;

constexpr int type_token(ConstraintKind kind) { return kTypeBase + static_cast<int>(kind); }
constexpr int ref_token(int primitive_id) { return kRefBase + primitive_id; }
constexpr bool is_type(int token) { return token >= kTypeBase && token < kRefBase; }
constexpr bool is_ref(int token) { return token >= kRefBase && token < kSize; }
constexpr ConstraintKind kind_of(int token) {
  return static_cast<ConstraintKind>(token - kTypeBase);
}
constexpr int ref_of(int token) { return token - kRefBase; }

std::string token_name(int token);
nlohmann::ordered_json dump();
}  // namespace vocab

constexpr int kCoordBins = 64;
constexpr int kSamplePoints = 5;
constexpr int kMaxSeqLen = 1 + kMaxConstraints * 3 + 1;  // SOS + items + EOS

struct PrimitiveTokens {
  int kind = 0;  // PrimitiveKind index
  bool fixed = false;
  std::array<std::array<int, 2>, kSamplePoints> coord_bins{};  // (x,y) bins per sample
};

using GeometryTokens = std::vector<PrimitiveTokens>;

/// Per-primitive input encoding: kind, fixed flag, and 5 points sampled along
/// the path, each coordinate quantized over the canvas. Throws on >16 prims.
GeometryTokens encode_geometry(const Sketch& sketch, int bins = kCoordBins);

int quantize_coord(double coord, double lo, double extent, int bins);

struct GrammarState {
  enum class Expect { TypeOrEos, Ref };
  Expect expect = Expect::TypeOrEos;
  ConstraintKind pending = ConstraintKind::Coincident;
  PrimitiveKind first_ref_kind = PrimitiveKind::Point;
  int refs_taken = 0;
  int items_emitted = 0;
  int position = 1;  // tokens consumed, counting SOS
  bool done = false;
};

struct TokenClassMask {
  bool types = false;
  bool eos = false;
  bool refs = false;
};

/// Structural mask only: type-vs-ref-vs-EOS by position. Semantic legality of
/// operands is never masked; invalid items surface through rewards instead.
TokenClassMask grammar_mask(const GrammarState& state, int max_seq_len = kMaxSeqLen);

/// Consumes one token. `prim_kinds` resolves the arity of Horizontal/Vertical,
/// which take one line or two points.
GrammarState grammar_advance(const GrammarState& state, int token,
                             const std::vector<PrimitiveKind>& prim_kinds);

std::vector<PrimitiveKind> primitive_kinds(const Sketch& sketch);

/// [SOS, type, refs..., ..., EOS]; dimensions carry no value token.
std::vector<int> encode_constraints(const ConstraintSequence& seq);

enum class DecodeError { None, MissingSos, Truncated, UnexpectedToken, RefOutOfRange };
const char* to_string(DecodeError err);

struct DecodeIssue {
  int item_index = 0;
  ValidationError error = ValidationError::IllegalOperandKinds;
};

struct DecodeResult {
  std::optional<ConstraintSequence> sequence;  // absent on structural error
  DecodeError error = DecodeError::None;
  std::vector<DecodeIssue> issues;  // semantic problems, items kept in place

  bool structurally_ok() const { return error == DecodeError::None; }
  bool clean() const { return structurally_ok() && issues.empty(); }
};

/// Inverse of encode_constraints; dimension values are measured from the
/// sketch's current geometry. Trailing PAD after EOS is ignored.
DecodeResult decode(const std::vector<int>& tokens, const Sketch& sketch);

}  // namespace sketchalign

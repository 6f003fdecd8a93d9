#include "sketchalign/tokenizer.hpp"

#include <cmath>
#include <stdexcept>

namespace sketchalign {

namespace vocab {

std::string token_name(int token) {
  switch (token) {
    case kPad: return "PAD";
    case kSos: return "SOS";
    case kEos: return "EOS";
    default: break;
  }
  if (is_type(token)) {
    std::string name = to_string(kind_of(token));
    for (auto& ch : name) ch = static_cast<char>(std::toupper(ch));
    return name;
  }
  if (is_ref(token)) return "REF_" + std::to_string(ref_of(token));
  return "?";
}

nlohmann::ordered_json dump() {
  nlohmann::ordered_json j;
  j["size"] = kSize;
  j["coord_bins"] = kCoordBins;
  j["sample_points"] = kSamplePoints;
  j["max_seq_len"] = kMaxSeqLen;
  j["wl_digest"] = "fnv1a64, 3 refinement rounds, sorted node-label multiset";
  nlohmann::ordered_json tokens = nlohmann::ordered_json::object();
  for (int t = 0; t < kSize; ++t) tokens[std::to_string(t)] = token_name(t);
  j["tokens"] = tokens;
  return j;
}

}  // namespace vocab

int quantize_coord(double coord, double lo, double extent, int bins) {
  int b = static_cast<int>(std::floor(bins * (coord - lo) / extent));
  return std::clamp(b, 0, bins - 1);
}

GeometryTokens encode_geometry(const Sketch& sketch, int bins) {
  if (sketch.size() > kMaxPrimitives) throw std::invalid_argument("too many primitives");
  GeometryTokens out;
  out.reserve(sketch.primitives.size());
  double w = std::max(sketch.canvas.width(), 1e-12);
  double h = std::max(sketch.canvas.height(), 1e-12);
  for (const auto& prim : sketch.primitives) {
    PrimitiveTokens tok;
    tok.kind = static_cast<int>(prim.kind);
    tok.fixed = prim.fixed;
    for (int k = 0; k < kSamplePoints; ++k) {
      double t = prim.kind == PrimitiveKind::Circle
                     ? static_cast<double>(k) / kSamplePoints
                     : static_cast<double>(k) / (kSamplePoints - 1);
      Vec2 p = path_point(prim, t);
      tok.coord_bins[static_cast<size_t>(k)][0] = quantize_coord(p.x, sketch.canvas.min_x, w, bins);
      tok.coord_bins[static_cast<size_t>(k)][1] = quantize_coord(p.y, sketch.canvas.min_y, h, bins);
    }
    out.push_back(tok);
  }
  return out;
}

TokenClassMask grammar_mask(const GrammarState& state, int max_seq_len) {
  TokenClassMask mask;
  if (state.done) return mask;
  if (state.expect == GrammarState::Expect::Ref) {
    mask.refs = true;
    return mask;
  }
  mask.eos = true;
  // A new item needs room for its type, up to two refs, and the final EOS.
  if (state.items_emitted < kMaxConstraints && state.position + 4 <= max_seq_len) {
    mask.types = true;
  }
  return mask;
}

GrammarState grammar_advance(const GrammarState& state, int token,
                             const std::vector<PrimitiveKind>& prim_kinds) {
  GrammarState next = state;
  next.position = state.position + 1;
  if (state.done) throw std::logic_error("advance past EOS");

  if (state.expect == GrammarState::Expect::TypeOrEos) {
    if (token == vocab::kEos) {
      next.done = true;
      return next;
    }
    if (!vocab::is_type(token)) throw std::logic_error("expected type token");
    next.pending = vocab::kind_of(token);
    next.refs_taken = 0;
    next.expect = GrammarState::Expect::Ref;
    return next;
  }

  if (!vocab::is_ref(token)) throw std::logic_error("expected ref token");
  int ref = vocab::ref_of(token);
  if (ref < 0 || ref >= static_cast<int>(prim_kinds.size())) {
    throw std::logic_error("ref out of range");
  }
  if (state.refs_taken == 0) next.first_ref_kind = prim_kinds[static_cast<size_t>(ref)];
  next.refs_taken = state.refs_taken + 1;
  int arity = constraint_arity(next.pending, next.first_ref_kind);
  if (next.refs_taken >= arity) {
    next.expect = GrammarState::Expect::TypeOrEos;
    next.items_emitted = state.items_emitted + 1;
    next.refs_taken = 0;
  }
  return next;
}

std::vector<PrimitiveKind> primitive_kinds(const Sketch& sketch) {
  std::vector<PrimitiveKind> kinds;
  kinds.reserve(sketch.primitives.size());
  for (const auto& prim : sketch.primitives) kinds.push_back(prim.kind);
  return kinds;
}

std::vector<int> encode_constraints(const ConstraintSequence& seq) {
  std::vector<int> tokens;
  tokens.push_back(vocab::kSos);
  for (const auto& item : seq.items) {
    tokens.push_back(vocab::type_token(item.kind));
    for (int ref : item.refs) tokens.push_back(vocab::ref_token(ref));
  }
  tokens.push_back(vocab::kEos);
  return tokens;
}

const char* to_string(DecodeError err) {
  switch (err) {
    case DecodeError::None: return "none";
    case DecodeError::MissingSos: return "missing_sos";
    case DecodeError::Truncated: return "truncated";
    case DecodeError::UnexpectedToken: return "unexpected_token";
    case DecodeError::RefOutOfRange: return "ref_out_of_range";
  }
  return "?";
}

DecodeResult decode(const std::vector<int>& tokens, const Sketch& sketch) {
  DecodeResult result;
  if (tokens.empty() || tokens[0] != vocab::kSos) {
    result.error = DecodeError::MissingSos;
    return result;
  }

  ConstraintSequence seq;
  size_t i = 1;
  bool terminated = false;
  while (i < tokens.size()) {
    int tok = tokens[static_cast<size_t>(i)];
    if (tok == vocab::kEos) {
      terminated = true;
      ++i;
      break;
    }
    if (!vocab::is_type(tok)) {
      result.error = DecodeError::UnexpectedToken;
      return result;
    }
    ConstraintInstance item;
    item.kind = vocab::kind_of(tok);
    ++i;

    int arity = 2;
    for (int k = 0; k < arity; ++k) {
      if (i >= tokens.size() || tokens[i] == vocab::kEos) {
        result.error = DecodeError::Truncated;
        return result;
      }
      if (!vocab::is_ref(tokens[i])) {
        result.error = DecodeError::UnexpectedToken;
        return result;
      }
      int ref = vocab::ref_of(tokens[i]);
      if (ref >= sketch.size()) {
        result.error = DecodeError::RefOutOfRange;
        return result;
      }
      item.refs.push_back(ref);
      ++i;
      if (k == 0) arity = constraint_arity(item.kind, sketch.at(ref).kind);
    }

    int index = seq.size();
    std::vector<PrimitiveKind> kinds;
    for (int ref : item.refs) kinds.push_back(sketch.at(ref).kind);
    if (!operands_legal(item.kind, kinds)) {
      result.issues.push_back({index, ValidationError::IllegalOperandKinds});
    } else if (is_dimension(item.kind)) {
      item.value = measure_dimension(sketch, item);
    }
    if (auto err = validate_constraint(sketch, item);
        err && err != ValidationError::IllegalOperandKinds) {
      result.issues.push_back({index, *err});
    }
    seq.items.push_back(std::move(item));
  }

  if (!terminated) {
    result.error = DecodeError::Truncated;
    return result;
  }
  for (; i < tokens.size(); ++i) {
    if (tokens[i] != vocab::kPad) {
      result.error = DecodeError::UnexpectedToken;
      return result;
    }
  }
  result.sequence = std::move(seq);
  return result;
}

}  // namespace sketchalign

#include <doctest.h>

#include "sketchalign/tokenizer.hpp"
#include "test_helpers.hpp"

using namespace sketchalign;

TEST_CASE("geometry encoding quantizes over the canvas") {
  Rect unit{0.0, 0.0, 1.0, 1.0};
  SUBCASE("midpoint coordinate lands in bin 32") {
    Sketch s({Primitive::point(0, 0.5, 0.5, true)}, unit);
    GeometryTokens geo = encode_geometry(s);
    CHECK(geo[0].coord_bins[0][0] == 32);
    CHECK(geo[0].coord_bins[0][1] == 32);
  }
  SUBCASE("fixed point at canvas min is bin zero with the flag set") {
    Sketch s({Primitive::point(0, 0.0, 0.0, true)}, unit);
    GeometryTokens geo = encode_geometry(s);
    CHECK(geo[0].fixed);
    CHECK(geo[0].coord_bins[0][0] == 0);
    CHECK(geo[0].coord_bins[4][1] == 0);
  }
  SUBCASE("one position per primitive up to the cap") {
    std::vector<Primitive> prims;
    for (int i = 0; i < 16; ++i) {
      prims.push_back(Primitive::point(i, 0.1 * i, 0.2, i == 0));
    }
    Sketch s(std::move(prims));
    CHECK(encode_geometry(s).size() == 16);
  }
  SUBCASE("line samples are evenly spaced including endpoints") {
    Sketch s({Primitive::line(0, 0.0, 0.0, 1.0, 0.0, true)}, unit);
    GeometryTokens geo = encode_geometry(s);
    CHECK(geo[0].coord_bins[0][0] == 0);
    CHECK(geo[0].coord_bins[2][0] == 32);
    CHECK(geo[0].coord_bins[4][0] == 63);  // max coordinate clamps into the top bin
  }
  SUBCASE("too many primitives throws") {
    std::vector<Primitive> prims;
    for (int i = 0; i < 17; ++i) prims.push_back(Primitive::point(i, 0, 0, i == 0));
    Sketch s(std::move(prims));
    CHECK_THROWS(encode_geometry(s));
  }
  SUBCASE("sub-bin perturbations do not change the encoding") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
      Sketch s = test::random_sketch(rng, 4);
      GeometryTokens before = encode_geometry(s);
      Sketch moved = s;
      moved.canvas = s.canvas;  // keep the frame
      for (auto& prim : moved.primitives) prim.params[0] += 1e-9;
      GeometryTokens after = encode_geometry(moved);
      bool same = true;
      for (size_t i = 0; i < before.size(); ++i) {
        same = same && before[i].coord_bins == after[i].coord_bins;
      }
      CHECK(same);
    }
  }
}

TEST_CASE("constraint encoding") {
  SUBCASE("perpendicular example") {
    ConstraintSequence seq{{{ConstraintKind::Perpendicular, {3, 7}, std::nullopt}}};
    std::vector<int> tokens = encode_constraints(seq);
    std::vector<int> expected = {vocab::kSos, vocab::type_token(ConstraintKind::Perpendicular),
                                 vocab::ref_token(3), vocab::ref_token(7), vocab::kEos};
    CHECK(tokens == expected);
  }
  SUBCASE("empty sequence") {
    std::vector<int> tokens = encode_constraints({});
    CHECK(tokens == std::vector<int>{vocab::kSos, vocab::kEos});
  }
  SUBCASE("two binary items give the length formula") {
    ConstraintSequence seq{{{ConstraintKind::Parallel, {0, 1}, std::nullopt},
                            {ConstraintKind::Tangent, {1, 2}, std::nullopt}}};
    CHECK(encode_constraints(seq).size() == 2 + 2 * 3);
  }
}

TEST_CASE("decode") {
  Sketch s = test::unit_line_cross();  // point 0, lines 1 and 2
  SUBCASE("round trips the perpendicular example") {
    std::vector<int> tokens = {vocab::kSos, vocab::type_token(ConstraintKind::Perpendicular),
                               vocab::ref_token(1), vocab::ref_token(2), vocab::kEos};
    DecodeResult result = decode(tokens, s);
    REQUIRE(result.clean());
    REQUIRE(result.sequence->size() == 1);
    CHECK(result.sequence->items[0].kind == ConstraintKind::Perpendicular);
    CHECK(result.sequence->items[0].refs == std::vector<int>{1, 2});
  }
  SUBCASE("missing ref is truncated") {
    std::vector<int> tokens = {vocab::kSos, vocab::type_token(ConstraintKind::Perpendicular),
                               vocab::ref_token(1), vocab::kEos};
    CHECK(decode(tokens, s).error == DecodeError::Truncated);
  }
  SUBCASE("empty sequence decodes") {
    DecodeResult result = decode({vocab::kSos, vocab::kEos}, s);
    REQUIRE(result.clean());
    CHECK(result.sequence->empty());
  }
  SUBCASE("trailing pad ignored, other trailing tokens rejected") {
    std::vector<int> ok = {vocab::kSos, vocab::kEos, vocab::kPad, vocab::kPad};
    CHECK(decode(ok, s).clean());
    std::vector<int> bad = {vocab::kSos, vocab::kEos, vocab::kSos};
    CHECK(decode(bad, s).error == DecodeError::UnexpectedToken);
  }
  SUBCASE("ref out of range") {
    std::vector<int> tokens = {vocab::kSos, vocab::type_token(ConstraintKind::Perpendicular),
                               vocab::ref_token(1), vocab::ref_token(9), vocab::kEos};
    CHECK(decode(tokens, s).error == DecodeError::RefOutOfRange);
  }
  SUBCASE("semantic issues are reported, not dropped") {
    std::vector<int> tokens = {vocab::kSos, vocab::type_token(ConstraintKind::Perpendicular),
                               vocab::ref_token(0), vocab::ref_token(1), vocab::kEos};
    DecodeResult result = decode(tokens, s);
    REQUIRE(result.structurally_ok());
    REQUIRE(result.issues.size() == 1);
    CHECK(result.issues[0].error == ValidationError::IllegalOperandKinds);
    CHECK(result.sequence->size() == 1);
  }
  SUBCASE("dimension values come from the current measurement") {
    Sketch pts = test::two_point_sketch(3.0, 4.0);
    std::vector<int> tokens = {vocab::kSos, vocab::type_token(ConstraintKind::DistanceDim),
                               vocab::ref_token(0), vocab::ref_token(1), vocab::kEos};
    DecodeResult result = decode(tokens, pts);
    REQUIRE(result.clean());
    CHECK(*result.sequence->items[0].value == doctest::Approx(5.0));
  }
}

TEST_CASE("decode of encode is the identity with re-measured values") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 60; ++trial) {
    Sketch s = test::random_sketch(rng, 3 + trial % 7);
    ConstraintSequence seq;
    for (int c = 0; c < 5; ++c) {
      if (auto item = test::random_constraint(s, rng)) seq.items.push_back(*item);
    }
    DecodeResult result = decode(encode_constraints(seq), s);
    REQUIRE(result.structurally_ok());
    REQUIRE(result.sequence->size() == seq.size());
    for (int i = 0; i < seq.size(); ++i) {
      const auto& in = seq.items[static_cast<size_t>(i)];
      const auto& out = result.sequence->items[static_cast<size_t>(i)];
      CHECK(in.kind == out.kind);
      CHECK(in.refs == out.refs);
      if (is_dimension(in.kind)) {
        CHECK(*out.value == doctest::Approx(measure_dimension(s, in)));
      }
    }
  }
}

TEST_CASE("grammar mask") {
  Sketch s = test::unit_line_cross();
  auto kinds = primitive_kinds(s);
  GrammarState state;
  SUBCASE("start offers types and EOS") {
    TokenClassMask mask = grammar_mask(state);
    CHECK(mask.types);
    CHECK(mask.eos);
    CHECK_FALSE(mask.refs);
  }
  SUBCASE("pending refs offer pointers only") {
    state = grammar_advance(state, vocab::type_token(ConstraintKind::Perpendicular), kinds);
    TokenClassMask mask = grammar_mask(state);
    CHECK(mask.refs);
    CHECK_FALSE(mask.types);
    CHECK_FALSE(mask.eos);
    state = grammar_advance(state, vocab::ref_token(1), kinds);
    CHECK(grammar_mask(state).refs);  // second ref still pending
  }
  SUBCASE("after the final ref, types and EOS again") {
    state = grammar_advance(state, vocab::type_token(ConstraintKind::Perpendicular), kinds);
    state = grammar_advance(state, vocab::ref_token(1), kinds);
    state = grammar_advance(state, vocab::ref_token(2), kinds);
    TokenClassMask mask = grammar_mask(state);
    CHECK(mask.types);
    CHECK(mask.eos);
    CHECK(state.items_emitted == 1);
  }
  SUBCASE("horizontal arity depends on the first operand") {
    state = grammar_advance(state, vocab::type_token(ConstraintKind::Horizontal), kinds);
    GrammarState on_line = grammar_advance(state, vocab::ref_token(1), kinds);
    CHECK(on_line.expect == GrammarState::Expect::TypeOrEos);
    GrammarState on_point = grammar_advance(state, vocab::ref_token(0), kinds);
    CHECK(on_point.expect == GrammarState::Expect::Ref);
  }
  SUBCASE("item cap forces EOS") {
    GrammarState full;
    full.items_emitted = kMaxConstraints;
    TokenClassMask mask = grammar_mask(full);
    CHECK_FALSE(mask.types);
    CHECK(mask.eos);
  }
  SUBCASE("sequence budget forces EOS near the end") {
    GrammarState tail;
    tail.position = kMaxSeqLen - 3;
    TokenClassMask mask = grammar_mask(tail);
    CHECK_FALSE(mask.types);
    CHECK(mask.eos);
  }
}

TEST_CASE("random walks under the mask always decode structurally") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 80; ++trial) {
    Sketch s = test::random_sketch(rng, 2 + trial % 8);
    auto kinds = primitive_kinds(s);
    GrammarState state;
    std::vector<int> tokens{vocab::kSos};
    while (!state.done) {
      TokenClassMask mask = grammar_mask(state);
      std::vector<int> allowed;
      if (mask.types) {
        for (int k = 0; k < kConstraintKindCount; ++k) {
          allowed.push_back(vocab::kTypeBase + k);
        }
      }
      if (mask.eos) allowed.push_back(vocab::kEos);
      if (mask.refs) {
        for (int i = 0; i < s.size(); ++i) allowed.push_back(vocab::ref_token(i));
      }
      REQUIRE_FALSE(allowed.empty());
      int pick = allowed[std::uniform_int_distribution<size_t>(0, allowed.size() - 1)(rng)];
      tokens.push_back(pick);
      state = grammar_advance(state, pick, kinds);
    }
    CHECK(static_cast<int>(tokens.size()) <= kMaxSeqLen);
    DecodeResult result = decode(tokens, s);
    CHECK(result.structurally_ok());
  }
}

TEST_CASE("vocabulary layout is dense and disjoint") {
  auto dump = vocab::dump();
  CHECK(dump["size"] == vocab::kSize);
  CHECK(vocab::type_token(ConstraintKind::AngleDim) < vocab::kRefBase);
  CHECK(vocab::ref_token(15) == vocab::kSize - 1);
  CHECK(vocab::token_name(vocab::kSos) == "SOS");
  CHECK(vocab::token_name(vocab::type_token(ConstraintKind::Perpendicular)) == "PERPENDICULAR");
  CHECK(vocab::token_name(vocab::ref_token(3)) == "REF_3");
}

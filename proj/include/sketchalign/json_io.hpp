#pragma once

#include <json.hpp>
#include <string>

#include "sketchalign/geometry.hpp"
#include "sketchalign/solver.hpp"

namespace sketchalign {

using Json = nlohmann::ordered_json;

Json primitive_to_json(const Primitive& prim);
Json sketch_to_json(const Sketch& sketch);
Json constraint_to_json(const ConstraintInstance& c);
Json constraints_to_json(const ConstraintSequence& seq);
Json report_to_json(const SolveReport& report);

Primitive primitive_from_json(const Json& j);
/// Parses {"primitives": [...], ...}; validates dense ids, finite params,
/// primitive invariants, and the size/anchor bounds.
Sketch sketch_from_json(const Json& j);
ConstraintInstance constraint_from_json(const Json& j);
ConstraintSequence constraints_from_json(const Json& j);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace sketchalign

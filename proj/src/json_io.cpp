#include "sketchalign/json_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sketchalign {

Json primitive_to_json(const Primitive& prim) {
  Json j;
  j["id"] = prim.id;
  j["kind"] = to_string(prim.kind);
  j["params"] = prim.params;
  j["fixed"] = prim.fixed;
  return j;
}

Json sketch_to_json(const Sketch& sketch) {
  Json j;
  j["primitives"] = Json::array();
  for (const auto& prim : sketch.primitives) {
    j["primitives"].push_back(primitive_to_json(prim));
  }
  return j;
}

Json constraint_to_json(const ConstraintInstance& c) {
  Json j;
  j["kind"] = to_string(c.kind);
  j["refs"] = c.refs;
  if (c.value) j["value"] = *c.value;
  return j;
}

Json constraints_to_json(const ConstraintSequence& seq) {
  Json j = Json::array();
  for (const auto& item : seq.items) j.push_back(constraint_to_json(item));
  return j;
}

Json report_to_json(const SolveReport& report) {
  Json j;
  j["category"] = to_string(report.status.category);
  j["oc_flag"] = report.status.oc_flag;
  j["stable"] = report.status.stable;
  j["fc_curve_fraction"] = report.status.fc_curve_fraction;
  j["fc_point_fraction"] = report.status.fc_point_fraction;
  Json fc = Json::object();
  for (const auto& [id, is_fc] : report.status.per_entity_fc) {
    fc[std::to_string(id)] = is_fc;
  }
  j["per_entity_fc"] = fc;
  j["iterations"] = report.iterations;
  j["final_residual_norm"] = report.final_residual_norm;
  return j;
}

Primitive primitive_from_json(const Json& j) {
  Primitive prim;
  prim.id = j.at("id").get<int>();
  auto kind = primitive_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown primitive kind");
  prim.kind = *kind;
  prim.params = j.at("params").get<std::vector<double>>();
  prim.fixed = j.value("fixed", false);

  size_t expected = 0;
  switch (prim.kind) {
    case PrimitiveKind::Point: expected = 2; break;
    case PrimitiveKind::Line: expected = 4; break;
    case PrimitiveKind::Circle: expected = 3; break;
    case PrimitiveKind::Arc: expected = 5; break;
  }
  if (prim.params.size() != expected) throw std::invalid_argument("bad param count");
  for (double p : prim.params) {
    if (!std::isfinite(p)) throw std::invalid_argument("non-finite primitive param");
  }
  if ((prim.kind == PrimitiveKind::Circle || prim.kind == PrimitiveKind::Arc) &&
      prim.params[2] <= 0.0) {
    throw std::invalid_argument("radius must be positive");
  }
  if (prim.kind == PrimitiveKind::Arc) {
    double sweep = std::fmod(prim.params[4] - prim.params[3], 2.0 * 3.14159265358979323846);
    if (std::abs(sweep) < 1e-12) throw std::invalid_argument("degenerate arc sweep");
  }
  return prim;
}

Sketch sketch_from_json(const Json& j) {
  std::vector<Primitive> prims;
  for (const auto& pj : j.at("primitives")) {
    prims.push_back(primitive_from_json(pj));
  }
  if (prims.size() > static_cast<size_t>(kMaxPrimitives)) {
    throw std::invalid_argument("too many primitives");
  }
  bool any_fixed = false;
  for (size_t i = 0; i < prims.size(); ++i) {
    if (prims[i].id != static_cast<int>(i)) {
      throw std::invalid_argument("primitive ids must be dense 0..n-1");
    }
    any_fixed = any_fixed || prims[i].fixed;
  }
  if (!prims.empty() && !any_fixed) {
    throw std::invalid_argument("sketch needs at least one fixed anchor");
  }
  return Sketch(std::move(prims));
}

ConstraintInstance constraint_from_json(const Json& j) {
  ConstraintInstance c;
  auto kind = constraint_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown constraint kind");
  c.kind = *kind;
  c.refs = j.at("refs").get<std::vector<int>>();
  if (j.contains("value")) c.value = j.at("value").get<double>();
  return c;
}

ConstraintSequence constraints_from_json(const Json& j) {
  ConstraintSequence seq;
  for (const auto& cj : j) seq.items.push_back(constraint_from_json(cj));
  if (seq.size() > kMaxConstraints) throw std::invalid_argument("too many constraints");
  return seq;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << contents;
}

}  // namespace sketchalign

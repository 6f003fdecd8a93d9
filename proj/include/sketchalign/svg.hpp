#pragma once

#include <map>
#include <string>

#include "sketchalign/geometry.hpp"

namespace sketchalign {

/// SVG 1.1 document of the sketch: fully-constrained entities stroked black,
/// the rest blue, with an optional red overlay of the original geometry.
/// Output bytes are deterministic for identical inputs.
std::string render_svg(const Sketch& sketch, const std::map<int, bool>& per_entity_fc,
                       const Sketch* original = nullptr);

}  // namespace sketchalign

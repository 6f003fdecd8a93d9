#include "sketchalign/svg.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

namespace sketchalign {

namespace {

std::string num(double v) {
  char buf[40];
  snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

void emit_primitive(std::ostringstream& out, const Primitive& prim, const std::string& color,
                    double stroke_width) {
  std::string style = " fill=\"none\" stroke=\"" + color + "\" stroke-width=\"" +
                      num(stroke_width) + "\"";
  switch (prim.kind) {
    case PrimitiveKind::Point:
      out << "<circle cx=\"" << num(prim.params[0]) << "\" cy=\"" << num(prim.params[1])
          << "\" r=\"" << num(stroke_width * 1.5) << "\" fill=\"" << color << "\"/>\n";
      break;
    case PrimitiveKind::Line:
      out << "<line x1=\"" << num(prim.params[0]) << "\" y1=\"" << num(prim.params[1])
          << "\" x2=\"" << num(prim.params[2]) << "\" y2=\"" << num(prim.params[3]) << "\""
          << style << "/>\n";
      break;
    case PrimitiveKind::Circle:
      out << "<circle cx=\"" << num(prim.params[0]) << "\" cy=\"" << num(prim.params[1])
          << "\" r=\"" << num(prim.params[2]) << "\"" << style << "/>\n";
      break;
    case PrimitiveKind::Arc: {
      Vec2 a = curve_endpoint(prim, 0);
      Vec2 b = curve_endpoint(prim, 1);
      double sweep = arc_sweep(prim);
      int large = sweep > std::numbers::pi ? 1 : 0;
      // geometry is y-up and drawn under a y-flip, so CCW becomes sweep=0
      out << "<path d=\"M " << num(a.x) << ' ' << num(a.y) << " A " << num(prim.params[2])
          << ' ' << num(prim.params[2]) << " 0 " << large << " 0 " << num(b.x) << ' '
          << num(b.y) << "\"" << style << "/>\n";
      break;
    }
  }
}

}  // namespace

std::string render_svg(const Sketch& sketch, const std::map<int, bool>& per_entity_fc,
                       const Sketch* original) {
  const Rect& canvas = sketch.canvas;
  double w = std::max(canvas.width(), 1e-9);
  double h = std::max(canvas.height(), 1e-9);
  double stroke = 0.008 * std::max(w, h);

  std::ostringstream out;
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\""
      << num(canvas.min_x) << ' ' << num(-canvas.max_y) << ' ' << num(w) << ' ' << num(h)
      << "\" width=\"512\" height=\"" << num(512.0 * h / w) << "\">\n";
  out << "<g transform=\"scale(1,-1)\">\n";
  if (original) {
    for (const auto& prim : original->primitives) {
      if (prim.is_curve()) emit_primitive(out, prim, "red", stroke * 0.7);
    }
  }
  for (const auto& prim : sketch.primitives) {
    auto it = per_entity_fc.find(prim.id);
    bool fc = it != per_entity_fc.end() && it->second;
    emit_primitive(out, prim, fc ? "black" : "blue", stroke);
  }
  out << "</g>\n</svg>\n";
  return out.str();
}

}  // namespace sketchalign

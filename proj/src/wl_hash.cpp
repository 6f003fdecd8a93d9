#include "sketchalign/wl_hash.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "sketchalign/tokenizer.hpp"

namespace sketchalign {

namespace {

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Quantizes one primitive param: coordinates over their axis, radii over the
// larger canvas extent, angles over [0, 2*pi).
int quantize_param(const Primitive& prim, size_t param_idx, const Rect& canvas, int bins) {
  double v = prim.params[param_idx];
  double w = std::max(canvas.width(), 1e-12);
  double h = std::max(canvas.height(), 1e-12);
  bool is_angle = prim.kind == PrimitiveKind::Arc && param_idx >= 3;
  bool is_radius = (prim.kind == PrimitiveKind::Circle || prim.kind == PrimitiveKind::Arc) &&
                   param_idx == 2;
  if (is_angle) {
    double two_pi = 2.0 * std::numbers::pi;
    double a = std::fmod(v, two_pi);
    if (a < 0) a += two_pi;
    return std::clamp(static_cast<int>(std::floor(bins * a / two_pi)), 0, bins - 1);
  }
  if (is_radius) {
    return quantize_coord(v, 0.0, std::max(w, h), bins);
  }
  bool is_x = param_idx % 2 == 0;
  return is_x ? quantize_coord(v, canvas.min_x, w, bins)
              : quantize_coord(v, canvas.min_y, h, bins);
}

}  // namespace

bool refs_symmetric(ConstraintKind kind, PrimitiveKind a, PrimitiveKind b) {
  if (kind == ConstraintKind::Midpoint) return false;
  return a == b || (a != PrimitiveKind::Point && b != PrimitiveKind::Point &&
                    a != PrimitiveKind::Line && b != PrimitiveKind::Line);
}

std::string wl_hash(const Sketch& sketch, const ConstraintSequence& constraints, int quant_bins) {
  const int n = sketch.size();
  std::vector<std::string> labels(static_cast<size_t>(n));
  std::vector<std::vector<std::string>> unary(static_cast<size_t>(n));

  struct Edge {
    int other;
    std::string label;
  };
  std::vector<std::vector<Edge>> adj(static_cast<size_t>(n));

  for (const auto& c : constraints.items) {
    if (c.refs.size() == 1) {
      unary[static_cast<size_t>(c.refs[0])].push_back(to_string(c.kind));
      continue;
    }
    int a = c.refs[0], b = c.refs[1];
    std::string kind = to_string(c.kind);
    if (refs_symmetric(c.kind, sketch.at(a).kind, sketch.at(b).kind)) {
      adj[static_cast<size_t>(a)].push_back({b, kind});
      adj[static_cast<size_t>(b)].push_back({a, kind});
    } else {
      adj[static_cast<size_t>(a)].push_back({b, kind + ":a"});
      adj[static_cast<size_t>(b)].push_back({a, kind + ":b"});
    }
  }

  for (int i = 0; i < n; ++i) {
    const auto& prim = sketch.at(i);
    std::ostringstream base;
    base << to_string(prim.kind) << '|' << (prim.fixed ? 'f' : '.');
    for (size_t k = 0; k < prim.params.size(); ++k) {
      base << '|' << quantize_param(prim, k, sketch.canvas, quant_bins);
    }
    auto& u = unary[static_cast<size_t>(i)];
    std::sort(u.begin(), u.end());
    for (const auto& kind : u) base << '+' << kind;
    labels[static_cast<size_t>(i)] = hex64(fnv1a64(base.str()));
  }

  for (int round = 0; round < 3; ++round) {
    std::vector<std::string> next(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<std::string> neigh;
      for (const auto& e : adj[static_cast<size_t>(i)]) {
        neigh.push_back(e.label + '>' + labels[static_cast<size_t>(e.other)]);
      }
      std::sort(neigh.begin(), neigh.end());
      std::string acc = labels[static_cast<size_t>(i)];
      for (const auto& s : neigh) acc += ',' + s;
      next[static_cast<size_t>(i)] = hex64(fnv1a64(acc));
    }
    labels = std::move(next);
  }

  std::sort(labels.begin(), labels.end());
  std::string all;
  for (const auto& l : labels) all += l;
  return hex64(fnv1a64(all));
}

std::vector<std::string> canonical_constraint_set(const Sketch& sketch,
                                                  const ConstraintSequence& seq) {
  std::set<std::string> set;
  for (const auto& c : seq.items) {
    std::vector<int> refs = c.refs;
    if (refs.size() == 2 &&
        refs_symmetric(c.kind, sketch.at(refs[0]).kind, sketch.at(refs[1]).kind)) {
      std::sort(refs.begin(), refs.end());
    }
    std::string id = to_string(c.kind);
    for (int r : refs) id += ':' + std::to_string(r);
    set.insert(id);
  }
  return {set.begin(), set.end()};
}

double miou(const std::vector<std::vector<std::string>>& sets) {
  if (sets.size() < 2) throw std::invalid_argument("miou needs K >= 2");
  double total = 0.0;
  int pairs = 0;
  for (size_t i = 0; i < sets.size(); ++i) {
    for (size_t j = i + 1; j < sets.size(); ++j) {
      std::vector<std::string> inter, uni;
      std::set_intersection(sets[i].begin(), sets[i].end(), sets[j].begin(), sets[j].end(),
                            std::back_inserter(inter));
      std::set_union(sets[i].begin(), sets[i].end(), sets[j].begin(), sets[j].end(),
                     std::back_inserter(uni));
      total += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / uni.size();
      ++pairs;
    }
  }
  return total / pairs;
}

}  // namespace sketchalign

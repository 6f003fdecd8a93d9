#include "sketchalign/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <unordered_set>

#include "sketchalign/json_io.hpp"
#include "sketchalign/util.hpp"

namespace sketchalign {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

ConstraintInstance con(ConstraintKind kind, std::vector<int> refs) {
  return ConstraintInstance{kind, std::move(refs), std::nullopt};
}

// Dimensions lock to the measured value of the generated geometry.
void add_dim(GeneratedSketch* out, ConstraintKind kind, std::vector<int> refs) {
  ConstraintInstance c{kind, std::move(refs), 0.0};
  c.value = measure_dimension(out->sketch, c);
  out->recipe.items.push_back(std::move(c));
}

GeneratedSketch make_rectangle(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double w = uniform(rng, 1.0, 4.0), h = uniform(rng, 1.0, 4.0);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy, true));
  prims.push_back(Primitive::point(1, ox + w, oy));
  prims.push_back(Primitive::point(2, ox + w, oy + h));
  prims.push_back(Primitive::point(3, ox, oy + h));
  prims.push_back(Primitive::line(4, ox, oy, ox + w, oy));
  prims.push_back(Primitive::line(5, ox + w, oy, ox + w, oy + h));
  prims.push_back(Primitive::line(6, ox + w, oy + h, ox, oy + h));
  prims.push_back(Primitive::line(7, ox, oy + h, ox, oy));

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (auto [p, l] : {std::pair{0, 4}, {1, 4}, {1, 5}, {2, 5}, {2, 6}, {3, 6}, {3, 7}, {0, 7}}) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {p, l}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {4}));
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {6}));
  out.recipe.items.push_back(con(ConstraintKind::Vertical, {5}));
  out.recipe.items.push_back(con(ConstraintKind::Vertical, {7}));
  add_dim(&out, ConstraintKind::DistanceDim, {0, 1});
  add_dim(&out, ConstraintKind::DistanceDim, {1, 2});
  return out;
}

GeneratedSketch make_l_shape(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double w = uniform(rng, 2.5, 4.5);
  double h1 = uniform(rng, 0.8, 1.6);
  double h2 = h1 + uniform(rng, 0.8, std::min(2.0, w - 0.6));  // keeps w1 in range
  double w1 = w - (h2 - h1);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy, true));
  prims.push_back(Primitive::point(1, ox + w, oy));
  prims.push_back(Primitive::point(2, ox + w, oy + h1));
  prims.push_back(Primitive::point(3, ox + w1, oy + h1));
  prims.push_back(Primitive::point(4, ox + w1, oy + h2));
  prims.push_back(Primitive::point(5, ox, oy + h2));
  auto pt = [&](int i) { return Vec2{prims[static_cast<size_t>(i)].params[0],
                                     prims[static_cast<size_t>(i)].params[1]}; };
  for (int i = 0; i < 6; ++i) {
    Vec2 a = pt(i), b = pt((i + 1) % 6);
    prims.push_back(Primitive::line(6 + i, a.x, a.y, b.x, b.y));
  }

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (int i = 0; i < 6; ++i) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {i, 6 + i}));
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {(i + 1) % 6, 6 + i}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {6}));
  out.recipe.items.push_back(con(ConstraintKind::Vertical, {7}));
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {8}));
  out.recipe.items.push_back(con(ConstraintKind::Vertical, {3, 4}));  // point-pair form
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {10}));
  out.recipe.items.push_back(con(ConstraintKind::Vertical, {11}));
  out.recipe.items.push_back(con(ConstraintKind::Equal, {8, 9}));  // notch legs match
  add_dim(&out, ConstraintKind::DistanceDim, {0, 1});
  add_dim(&out, ConstraintKind::LengthDim, {7});
  add_dim(&out, ConstraintKind::LengthDim, {11});
  return out;
}

GeneratedSketch make_slot(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double w = uniform(rng, 2.0, 4.0);
  double r = uniform(rng, 0.5, 1.2);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy + r, true));
  prims.push_back(Primitive::point(1, ox + w, oy + r));
  prims.push_back(Primitive::point(2, ox + w, oy - r));
  prims.push_back(Primitive::point(3, ox, oy - r));
  prims.push_back(Primitive::line(4, ox, oy + r, ox + w, oy + r));
  prims.push_back(Primitive::line(5, ox + w, oy - r, ox, oy - r));
  prims.push_back(Primitive::arc(6, ox + w, oy, r, -kPi / 2.0, kPi / 2.0));
  prims.push_back(Primitive::arc(7, ox, oy, r, kPi / 2.0, 3.0 * kPi / 2.0));

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (auto [p, c] : {std::pair{0, 4}, {1, 4}, {2, 5}, {3, 5}, {1, 6}, {2, 6}, {0, 7}, {3, 7}}) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {p, c}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {4, 6}));
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {4, 7}));
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {5, 6}));
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {5, 7}));
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {4}));
  out.recipe.items.push_back(con(ConstraintKind::Equal, {6, 7}));
  add_dim(&out, ConstraintKind::RadiusDim, {6});
  add_dim(&out, ConstraintKind::DistanceDim, {0, 1});
  return out;
}

GeneratedSketch make_triangle(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double w = uniform(rng, 2.0, 4.0);
  double ax = ox + uniform(rng, 0.25, 0.75) * w;
  double ay = oy + uniform(rng, 0.8, 2.2);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy, true));
  prims.push_back(Primitive::point(1, ox + w, oy));
  prims.push_back(Primitive::point(2, ax, ay));
  prims.push_back(Primitive::line(3, ox, oy, ox + w, oy));
  prims.push_back(Primitive::line(4, ox + w, oy, ax, ay));
  prims.push_back(Primitive::line(5, ax, ay, ox, oy));

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (auto [p, l] : {std::pair{0, 3}, {1, 3}, {1, 4}, {2, 4}, {2, 5}, {0, 5}}) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {p, l}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {3}));
  add_dim(&out, ConstraintKind::DistanceDim, {0, 1});
  add_dim(&out, ConstraintKind::AngleDim, {3, 4});
  add_dim(&out, ConstraintKind::AngleDim, {3, 5});
  return out;
}

GeneratedSketch make_concentric_circles(std::mt19937_64& rng) {
  double cx = uniform(rng, -2.0, 2.0), cy = uniform(rng, -2.0, 2.0);
  int rings = std::uniform_int_distribution<int>(2, 3)(rng);
  double r0 = uniform(rng, 0.6, 1.2);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, cx, cy, true));
  double r = r0;
  for (int i = 0; i < rings; ++i) {
    prims.push_back(Primitive::circle(1 + i, cx, cy, r));
    r += uniform(rng, 0.4, 0.9);
  }
  GeneratedSketch out{Sketch(std::move(prims)), {}};
  out.recipe.items.push_back(con(ConstraintKind::Concentric, {0, 1}));
  add_dim(&out, ConstraintKind::RadiusDim, {1});
  for (int i = 1; i < rings; ++i) {
    out.recipe.items.push_back(con(ConstraintKind::Concentric, {i, i + 1}));
    add_dim(&out, i % 2 == 0 ? ConstraintKind::RadiusDim : ConstraintKind::DiameterDim,
            {i + 1});
  }
  return out;
}

GeneratedSketch make_polyline(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double a = uniform(rng, 1.5, 3.0);
  double b = uniform(rng, 1.0, 2.5);
  double c = uniform(rng, 1.0, 2.5);
  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy, true));
  prims.push_back(Primitive::point(1, ox + a, oy));
  prims.push_back(Primitive::point(2, ox + a, oy + b));
  prims.push_back(Primitive::point(3, ox + a + c, oy + b));
  prims.push_back(Primitive::point(4, ox + a, oy + b / 2.0));  // marker on the riser
  prims.push_back(Primitive::line(5, ox, oy, ox + a, oy));
  prims.push_back(Primitive::line(6, ox + a, oy, ox + a, oy + b));
  prims.push_back(Primitive::line(7, ox + a, oy + b, ox + a + c, oy + b));

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (auto [p, l] : {std::pair{0, 5}, {1, 5}, {1, 6}, {2, 6}, {2, 7}, {3, 7}}) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {p, l}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {0, 1}));  // point-pair form
  out.recipe.items.push_back(con(ConstraintKind::Perpendicular, {5, 6}));
  out.recipe.items.push_back(con(ConstraintKind::Parallel, {5, 7}));
  out.recipe.items.push_back(con(ConstraintKind::Midpoint, {4, 6}));
  add_dim(&out, ConstraintKind::DistanceDim, {0, 1});
  add_dim(&out, ConstraintKind::DistanceDim, {1, 2});
  add_dim(&out, ConstraintKind::DistanceDim, {2, 3});
  return out;
}

GeneratedSketch make_line_arc_chain(std::mt19937_64& rng) {
  double ox = uniform(rng, -2.0, 2.0), oy = uniform(rng, -2.0, 2.0);
  double l0 = uniform(rng, 1.5, 3.0);
  double r = uniform(rng, 0.6, 1.4);
  double sweep = uniform(rng, 0.5, 1.5);
  double l1 = uniform(rng, 1.0, 2.5);
  double cx = ox + l0, cy = oy + r;
  double te = -kPi / 2.0 + sweep;
  double p2x = cx + r * std::cos(te), p2y = cy + r * std::sin(te);
  double vx = -std::sin(te), vy = std::cos(te);  // CCW tangent direction
  double p3x = p2x + l1 * vx, p3y = p2y + l1 * vy;

  std::vector<Primitive> prims;
  prims.push_back(Primitive::point(0, ox, oy, true));
  prims.push_back(Primitive::point(1, ox + l0, oy));
  prims.push_back(Primitive::point(2, p2x, p2y));
  prims.push_back(Primitive::point(3, p3x, p3y));
  prims.push_back(Primitive::line(4, ox, oy, ox + l0, oy));
  prims.push_back(Primitive::arc(5, cx, cy, r, -kPi / 2.0, te));
  prims.push_back(Primitive::line(6, p2x, p2y, p3x, p3y));

  GeneratedSketch out{Sketch(std::move(prims)), {}};
  for (auto [p, c] : {std::pair{0, 4}, {1, 4}, {1, 5}, {2, 5}, {2, 6}, {3, 6}}) {
    out.recipe.items.push_back(con(ConstraintKind::Coincident, {p, c}));
  }
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {4, 5}));
  out.recipe.items.push_back(con(ConstraintKind::Tangent, {6, 5}));
  out.recipe.items.push_back(con(ConstraintKind::Horizontal, {4}));
  add_dim(&out, ConstraintKind::LengthDim, {4});
  add_dim(&out, ConstraintKind::RadiusDim, {5});
  add_dim(&out, ConstraintKind::LengthDim, {6});
  add_dim(&out, ConstraintKind::AngleDim, {4, 6});
  return out;
}

}  // namespace

const char* to_string(TemplateName name) {
  switch (name) {
    case TemplateName::Rectangle: return "rectangle";
    case TemplateName::LShape: return "l_shape";
    case TemplateName::Slot: return "slot";
    case TemplateName::Triangle: return "triangle";
    case TemplateName::ConcentricCircles: return "concentric_circles";
    case TemplateName::Polyline: return "polyline";
    case TemplateName::LineArcChain: return "line_arc_chain";
  }
  return "?";
}

std::optional<TemplateName> template_from_string(const std::string& name) {
  for (TemplateName t : all_templates()) {
    if (name == to_string(t)) return t;
  }
  return std::nullopt;
}

std::vector<TemplateName> all_templates() {
  return {TemplateName::Rectangle,         TemplateName::LShape,   TemplateName::Slot,
          TemplateName::Triangle,          TemplateName::ConcentricCircles,
          TemplateName::Polyline,          TemplateName::LineArcChain};
}

GeneratedSketch generate_sketch(TemplateName name, std::mt19937_64& rng) {
  switch (name) {
    case TemplateName::Rectangle: return make_rectangle(rng);
    case TemplateName::LShape: return make_l_shape(rng);
    case TemplateName::Slot: return make_slot(rng);
    case TemplateName::Triangle: return make_triangle(rng);
    case TemplateName::ConcentricCircles: return make_concentric_circles(rng);
    case TemplateName::Polyline: return make_polyline(rng);
    case TemplateName::LineArcChain: return make_line_arc_chain(rng);
  }
  throw std::invalid_argument("unknown template");
}

ConstraintSequence degrade_constraints(const ConstraintSequence& seq, double drop_prob,
                                       std::mt19937_64& rng) {
  ConstraintSequence out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (const auto& item : seq.items) {
    if (u(rng) >= drop_prob) out.items.push_back(item);
  }
  return out;
}

double calibrate_drop_prob(const std::vector<TemplateName>& templates, int sample_count,
                           double target_fc, uint64_t seed, const SolveOptions& opts) {
  auto measure = [&](double p) {
    int fc = 0;
    for (int i = 0; i < sample_count; ++i) {
      std::mt19937_64 rng(seed_mix(seed, 0xCA11, static_cast<uint64_t>(i)));
      GeneratedSketch gen =
          generate_sketch(templates[static_cast<size_t>(i) % templates.size()], rng);
      ConstraintSequence degraded = degrade_constraints(gen.recipe, p, rng);
      SolveReport report = solve(gen.sketch, degraded, opts);
      fc += report.status.category == SketchCategory::FullyConstrained ? 1 : 0;
    }
    return static_cast<double>(fc) / sample_count;
  };
  double lo = 0.005, hi = 0.6;  // FC fraction decreases in drop_prob
  for (int iter = 0; iter < 10; ++iter) {
    double mid = 0.5 * (lo + hi);
    if (measure(mid) > target_fc) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

std::vector<DatasetRecord> dedup(std::vector<DatasetRecord> records) {
  std::vector<DatasetRecord> out;
  std::unordered_set<std::string> seen;
  for (auto& rec : records) {
    if (seen.insert(rec.wl_hash).second) out.push_back(std::move(rec));
  }
  return out;
}

void preprocess(DatasetRecord* record, const SolveOptions& opts) {
  SolveReport report = solve(record->sketch, record->constraints, opts);
  record->category = report.status.category;
  record->oc_flag = report.status.oc_flag;
  record->stable = report.status.stable;
  if (report.solvable()) record->sketch = *report.solved_sketch;
}

void split_records(std::vector<DatasetRecord>* records, double train_ratio, double val_ratio,
                   uint64_t seed) {
  std::vector<size_t> order(records->size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed_mix(seed, 0x5B117));
  std::shuffle(order.begin(), order.end(), rng);
  size_t train_end = static_cast<size_t>(std::llround(train_ratio * order.size()));
  size_t val_end =
      train_end + static_cast<size_t>(std::llround(val_ratio * order.size()));
  for (size_t rank = 0; rank < order.size(); ++rank) {
    auto& rec = (*records)[order[rank]];
    rec.split = rank < train_end ? "train" : rank < val_end ? "val" : "test";
  }
}

std::vector<DatasetRecord> generate_dataset(const DatagenOptions& options) {
  std::vector<TemplateName> templates;
  for (TemplateName t : options.templates) {
    std::mt19937_64 probe(0);
    if (generate_sketch(t, probe).sketch.size() <= options.max_primitives) {
      templates.push_back(t);
    }
  }
  if (templates.empty()) throw std::invalid_argument("no template fits max_primitives");

  double drop_prob = options.drop_prob;
  if (options.target_fc) {
    drop_prob = calibrate_drop_prob(templates, 400, *options.target_fc, options.seed,
                                    options.solve);
  }

  // Oversample: dedup and the primitive cap shrink the pool.
  int attempts = options.count * 3;
  std::vector<DatasetRecord> pool(static_cast<size_t>(attempts));
  parallel_for(attempts, options.threads, [&](int i) {
    std::mt19937_64 rng(seed_mix(options.seed, 0xDA7A, static_cast<uint64_t>(i)));
    TemplateName t = templates[static_cast<size_t>(i) % templates.size()];
    GeneratedSketch gen = generate_sketch(t, rng);
    DatasetRecord rec;
    rec.sketch = std::move(gen.sketch);
    rec.constraints = degrade_constraints(gen.recipe, drop_prob, rng);
    rec.wl_hash = wl_hash(rec.sketch, rec.constraints);
    pool[static_cast<size_t>(i)] = std::move(rec);
  });

  std::vector<DatasetRecord> records = dedup(std::move(pool));
  if (static_cast<int>(records.size()) > options.count) {
    records.resize(static_cast<size_t>(options.count));
  }
  parallel_for(static_cast<int>(records.size()), options.threads,
               [&](int i) { preprocess(&records[static_cast<size_t>(i)], options.solve); });
  split_records(&records, options.train_ratio, options.val_ratio, options.seed);
  return records;
}

nlohmann::ordered_json dataset_stats(const std::vector<DatasetRecord>& records) {
  nlohmann::ordered_json j;
  j["record_count"] = records.size();
  int fc = 0, oc = 0, ns = 0, stable = 0;
  std::vector<int> entities, constraints, dims;
  std::map<std::string, int> type_freq;
  std::map<std::string, int> sketch_freq;
  for (const auto& rec : records) {
    fc += rec.category == SketchCategory::FullyConstrained ? 1 : 0;
    oc += rec.oc_flag ? 1 : 0;
    ns += rec.category == SketchCategory::NotSolvable ? 1 : 0;
    stable += rec.stable ? 1 : 0;
    entities.push_back(rec.sketch.size());
    int d = 0;
    std::set<std::string> kinds_here;
    for (const auto& item : rec.constraints.items) {
      d += is_dimension(item.kind) ? 1 : 0;
      type_freq[to_string(item.kind)] += 1;
      kinds_here.insert(to_string(item.kind));
    }
    constraints.push_back(rec.constraints.size() - d);
    dims.push_back(d);
    for (const auto& k : kinds_here) sketch_freq[k] += 1;
  }
  double n = std::max<size_t>(records.size(), 1);
  j["fc_fraction"] = fc / n;
  j["oc_fraction"] = oc / n;
  j["ns_fraction"] = ns / n;
  j["stable_fraction"] = stable / n;
  auto describe = [](std::vector<int> v) {
    nlohmann::ordered_json d;
    if (v.empty()) return d;
    std::sort(v.begin(), v.end());
    double mean = 0.0;
    for (int x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (int x : v) var += (x - mean) * (x - mean);
    d["mean"] = mean;
    d["std"] = std::sqrt(var / static_cast<double>(v.size()));
    d["min"] = v.front();
    d["median"] = v[v.size() / 2];
    d["max"] = v.back();
    return d;
  };
  j["entity_count"] = describe(entities);
  j["constraint_count"] = describe(constraints);
  j["dimension_count"] = describe(dims);
  int total_items = 0;
  for (const auto& [k, c] : type_freq) total_items += c;
  nlohmann::ordered_json freq = nlohmann::ordered_json::object();
  for (const auto& [k, c] : type_freq) {
    nlohmann::ordered_json entry;
    entry["type_frequency"] = total_items > 0 ? static_cast<double>(c) / total_items : 0.0;
    entry["sketch_frequency"] = sketch_freq[k] / n;
    freq[k] = entry;
  }
  j["kind_frequency"] = freq;
  return j;
}

nlohmann::ordered_json record_to_json(const DatasetRecord& record) {
  nlohmann::ordered_json j = sketch_to_json(record.sketch);
  j["constraints"] = constraints_to_json(record.constraints);
  j["split"] = record.split;
  j["wl_hash"] = record.wl_hash;
  nlohmann::ordered_json verdict;
  verdict["category"] = to_string(record.category);
  verdict["oc_flag"] = record.oc_flag;
  verdict["stable"] = record.stable;
  j["solver"] = verdict;
  return j;
}

DatasetRecord record_from_json(const nlohmann::ordered_json& j) {
  DatasetRecord rec;
  rec.sketch = sketch_from_json(j);
  rec.constraints = constraints_from_json(j.at("constraints"));
  rec.split = j.value("split", "train");
  rec.wl_hash = j.value("wl_hash", "");
  if (j.contains("solver")) {
    const auto& v = j.at("solver");
    std::string cat = v.value("category", "not_solvable");
    for (int c = 0; c < 4; ++c) {
      if (cat == to_string(static_cast<SketchCategory>(c))) {
        rec.category = static_cast<SketchCategory>(c);
      }
    }
    rec.oc_flag = v.value("oc_flag", false);
    rec.stable = v.value("stable", false);
  }
  return rec;
}

void save_dataset(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += record_to_json(rec).dump();
    out += '\n';
  }
  write_file(path, out);
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::vector<DatasetRecord> records;
  for (const auto& line : read_lines(path)) {
    records.push_back(record_from_json(nlohmann::ordered_json::parse(line)));
  }
  return records;
}

}  // namespace sketchalign

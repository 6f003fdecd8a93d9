#include "sketchalign/policy.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

namespace sketchalign {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

ad::Mat ln_rows(const ad::Mat& x, const ad::Mat& g, const ad::Mat& b, double eps = 1e-5) {
  ad::Mat out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    double mu = x.row(i).mean();
    double var = (x.row(i).array() - mu).square().mean();
    double inv = 1.0 / std::sqrt(var + eps);
    out.row(i) = ((x.row(i).array() - mu) * inv * g.row(0).array() + b.row(0).array()).matrix();
  }
  return out;
}

ad::Mat gelu_plain(const ad::Mat& x) {
  const double c = std::sqrt(2.0 / M_PI);
  return x.unaryExpr([c](double v) {
    return 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  });
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
  double mx = logits.maxCoeff();
  Eigen::RowVectorXd e = (logits.array() - mx).exp().matrix();
  for (int j = 0; j < e.size(); ++j) {
    if (logits(j) == kNegInf) e(j) = 0.0;
  }
  return e / e.sum();
}

}  // namespace

int class_of_token(int token) {
  if (token == vocab::kEos) return kEosClass;
  if (vocab::is_type(token)) return token - vocab::kTypeBase;
  if (vocab::is_ref(token)) return kTypeClasses + vocab::ref_of(token);
  throw std::invalid_argument("token has no prediction class");
}

int token_of_class(int cls) {
  if (cls == kEosClass) return vocab::kEos;
  if (cls < kEosClass) return vocab::kTypeBase + cls;
  return vocab::ref_token(cls - kTypeClasses);
}

size_t ParamStore::total_size() const {
  size_t n = 0;
  for (const auto& m : mats) n += static_cast<size_t>(m.size());
  return n;
}

double ParamStore::flat_get(size_t index) const {
  for (const auto& m : mats) {
    size_t sz = static_cast<size_t>(m.size());
    if (index < sz) return m.data()[index];
    index -= sz;
  }
  throw std::out_of_range("flat index");
}

void ParamStore::flat_set(size_t index, double value) {
  for (auto& m : mats) {
    size_t sz = static_cast<size_t>(m.size());
    if (index < sz) {
      m.data()[index] = value;
      return;
    }
    index -= sz;
  }
  throw std::out_of_range("flat index");
}

std::vector<float> ParamStore::flatten_f32() const {
  std::vector<float> flat;
  flat.reserve(total_size());
  for (const auto& m : mats) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      flat.push_back(static_cast<float>(m.data()[i]));
    }
  }
  return flat;
}

void ParamStore::load_f32(const std::vector<float>& flat) {
  if (flat.size() != total_size()) throw std::invalid_argument("parameter count mismatch");
  size_t k = 0;
  for (auto& m : mats) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = static_cast<double>(flat[k++]);
    }
  }
}

void GradStore::init_like(const ParamStore& params) {
  grads.clear();
  grads.reserve(params.mats.size());
  for (const auto& m : params.mats) grads.push_back(ad::Mat::Zero(m.rows(), m.cols()));
}

void GradStore::zero() {
  for (auto& g : grads) g.setZero();
}

void GradStore::add(const GradStore& other) {
  for (size_t i = 0; i < grads.size(); ++i) grads[i] += other.grads[i];
}

void GradStore::scale(double s) {
  for (auto& g : grads) g *= s;
}

bool GradStore::all_finite() const {
  for (const auto& g : grads) {
    if (!g.allFinite()) return false;
  }
  return true;
}

namespace {

struct Registrar {
  ParamStore& store;
  std::mt19937_64 rng;

  int add(const std::string& name, int rows, int cols, double scale) {
    ad::Mat m(rows, cols);
    if (scale == 0.0) {
      m.setZero();
    } else {
      std::uniform_real_distribution<double> dist(-scale, scale);
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
      }
    }
    store.mats.push_back(std::move(m));
    store.names.push_back(name);
    return static_cast<int>(store.mats.size()) - 1;
  }
  int weight(const std::string& name, int in, int out) {
    return add(name, in, out, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  int zeros(const std::string& name, int rows, int cols) { return add(name, rows, cols, 0.0); }
  int ones(const std::string& name, int cols) {
    store.mats.push_back(ad::Mat::Ones(1, cols));
    store.names.push_back(name);
    return static_cast<int>(store.mats.size()) - 1;
  }
  LnIdx ln(const std::string& prefix, int d) {
    return LnIdx{ones(prefix + ".g", d), zeros(prefix + ".b", 1, d)};
  }
  AttnIdx attn(const std::string& prefix, int d) {
    AttnIdx idx;
    idx.wq = weight(prefix + ".wq", d, d);
    idx.bq = zeros(prefix + ".bq", 1, d);
    idx.wk = weight(prefix + ".wk", d, d);
    idx.bk = zeros(prefix + ".bk", 1, d);
    idx.wv = weight(prefix + ".wv", d, d);
    idx.bv = zeros(prefix + ".bv", 1, d);
    idx.wo = weight(prefix + ".wo", d, d);
    idx.bo = zeros(prefix + ".bo", 1, d);
    return idx;
  }
  FfIdx ff(const std::string& prefix, int d, int hidden) {
    FfIdx idx;
    idx.w1 = weight(prefix + ".w1", d, hidden);
    idx.b1 = zeros(prefix + ".b1", 1, hidden);
    idx.w2 = weight(prefix + ".w2", hidden, d);
    idx.b2 = zeros(prefix + ".b2", 1, d);
    return idx;
  }
};

}  // namespace

PolicyModel PolicyModel::init(const PolicyConfig& config) {
  if (config.embed_dim % config.heads != 0) {
    throw std::invalid_argument("embed_dim must be divisible by heads");
  }
  PolicyModel model;
  model.config = config;
  Registrar reg{model.params, std::mt19937_64(config.seed)};
  const int d = config.embed_dim;
  const double embed_scale = 1.0 / std::sqrt(static_cast<double>(d));

  auto& L = model.layout;
  L.kind_embed = reg.add("enc.kind_embed", 4, d, embed_scale);
  L.fixed_embed = reg.add("enc.fixed_embed", 2, d, embed_scale);
  for (int k = 0; k < 2 * kSamplePoints; ++k) {
    L.coord_embed[static_cast<size_t>(k)] =
        reg.add("enc.coord_embed." + std::to_string(k), config.coord_bins, d, embed_scale);
  }
  for (int i = 0; i < config.enc_layers; ++i) {
    std::string p = "enc." + std::to_string(i);
    EncLayerIdx layer;
    layer.ln1 = reg.ln(p + ".ln1", d);
    layer.attn = reg.attn(p + ".attn", d);
    layer.ln2 = reg.ln(p + ".ln2", d);
    layer.ff = reg.ff(p + ".ff", d, config.ff_dim);
    L.enc.push_back(layer);
  }
  L.enc_ln = reg.ln("enc.final_ln", d);

  L.token_embed = reg.add("dec.token_embed", vocab::kSize, d, embed_scale);
  L.ref_marker = reg.add("dec.ref_marker", 1, d, embed_scale);
  L.pos_embed = reg.add("dec.pos_embed", config.max_seq_len, d, embed_scale);
  for (int i = 0; i < config.dec_layers; ++i) {
    std::string p = "dec." + std::to_string(i);
    DecLayerIdx layer;
    layer.ln1 = reg.ln(p + ".ln1", d);
    layer.self_attn = reg.attn(p + ".self_attn", d);
    layer.ln2 = reg.ln(p + ".ln2", d);
    layer.cross_attn = reg.attn(p + ".cross_attn", d);
    layer.ln3 = reg.ln(p + ".ln3", d);
    layer.ff = reg.ff(p + ".ff", d, config.ff_dim);
    L.dec.push_back(layer);
  }
  L.dec_ln = reg.ln("dec.final_ln", d);

  // Zero output heads: uniform type/pointer distributions at initialization.
  L.type_w = reg.zeros("head.type_w", d, kTypeClasses);
  L.type_b = reg.zeros("head.type_b", 1, kTypeClasses);
  L.ptr_q = reg.zeros("head.ptr_q", d, d);
  L.ptr_k = reg.weight("head.ptr_k", d, d);
  return model;
}

namespace {

constexpr uint32_t kCheckpointMagic = 0x4c414b53;  // "SKAL"

nlohmann::ordered_json config_to_json(const PolicyConfig& c) {
  nlohmann::ordered_json j;
  j["embed_dim"] = c.embed_dim;
  j["enc_layers"] = c.enc_layers;
  j["dec_layers"] = c.dec_layers;
  j["heads"] = c.heads;
  j["ff_dim"] = c.ff_dim;
  j["max_seq_len"] = c.max_seq_len;
  j["coord_bins"] = c.coord_bins;
  j["seed"] = c.seed;
  return j;
}

PolicyConfig config_from_json(const nlohmann::ordered_json& j) {
  PolicyConfig c;
  c.embed_dim = j.at("embed_dim").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ff_dim = j.at("ff_dim").get<int>();
  c.max_seq_len = j.at("max_seq_len").get<int>();
  c.coord_bins = j.at("coord_bins").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const PolicyModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  std::string header = config_to_json(model.config).dump();
  uint32_t magic = kCheckpointMagic;
  uint32_t header_len = static_cast<uint32_t>(header.size());
  uint64_t version = model.params.version;
  std::vector<float> flat = model.params.flatten_f32();
  uint64_t count = flat.size();
  out.write(reinterpret_cast<const char*>(&magic), sizeof(magic));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(float)));
}

PolicyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  uint32_t magic = 0, header_len = 0;
  in.read(reinterpret_cast<char*>(&magic), sizeof(magic));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (magic != kCheckpointMagic) throw std::runtime_error("bad checkpoint magic");
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  uint64_t version = 0, count = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  PolicyModel model = PolicyModel::init(config_from_json(nlohmann::ordered_json::parse(header)));
  std::vector<float> flat(count);
  in.read(reinterpret_cast<char*>(flat.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw std::runtime_error("truncated checkpoint");
  model.params.load_f32(flat);
  model.params.version = version;
  return model;
}

ad::Mat encode_primitives(const PolicyModel& model, const GeometryTokens& geo) {
  const auto& P = model.params.mats;
  const auto& L = model.layout;
  const int d = model.config.embed_dim;
  const int n = static_cast<int>(geo.size());

  ad::Mat x(n, d);
  for (int i = 0; i < n; ++i) {
    const auto& tok = geo[static_cast<size_t>(i)];
    Eigen::RowVectorXd row = P[static_cast<size_t>(L.kind_embed)].row(tok.kind) +
                             P[static_cast<size_t>(L.fixed_embed)].row(tok.fixed ? 1 : 0);
    for (int k = 0; k < kSamplePoints; ++k) {
      row += P[static_cast<size_t>(L.coord_embed[static_cast<size_t>(2 * k)])].row(
          tok.coord_bins[static_cast<size_t>(k)][0]);
      row += P[static_cast<size_t>(L.coord_embed[static_cast<size_t>(2 * k + 1)])].row(
          tok.coord_bins[static_cast<size_t>(k)][1]);
    }
    x.row(i) = row;
  }

  const int heads = model.config.heads;
  const int dh = model.config.head_dim();
  auto attn_full = [&](const ad::Mat& q_in, const ad::Mat& kv_in, const AttnIdx& idx) {
    ad::Mat q = (q_in * P[static_cast<size_t>(idx.wq)]).rowwise() +
                P[static_cast<size_t>(idx.bq)].row(0);
    ad::Mat k = (kv_in * P[static_cast<size_t>(idx.wk)]).rowwise() +
                P[static_cast<size_t>(idx.bk)].row(0);
    ad::Mat v = (kv_in * P[static_cast<size_t>(idx.wv)]).rowwise() +
                P[static_cast<size_t>(idx.bv)].row(0);
    ad::Mat ctx(q.rows(), q.cols());
    double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
      ad::Mat scores =
          q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() * scale;
      for (int i = 0; i < scores.rows(); ++i) {
        scores.row(i) = softmax_row(scores.row(i));
      }
      ctx.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    }
    return ad::Mat((ctx * P[static_cast<size_t>(idx.wo)]).rowwise() +
                   P[static_cast<size_t>(idx.bo)].row(0));
  };

  for (const auto& layer : L.enc) {
    ad::Mat a = ln_rows(x, P[static_cast<size_t>(layer.ln1.g)], P[static_cast<size_t>(layer.ln1.b)]);
    x += attn_full(a, a, layer.attn);
    ad::Mat b = ln_rows(x, P[static_cast<size_t>(layer.ln2.g)], P[static_cast<size_t>(layer.ln2.b)]);
    ad::Mat hidden = gelu_plain(((b * P[static_cast<size_t>(layer.ff.w1)]).rowwise() +
                                 P[static_cast<size_t>(layer.ff.b1)].row(0)));
    x += (hidden * P[static_cast<size_t>(layer.ff.w2)]).rowwise() +
         P[static_cast<size_t>(layer.ff.b2)].row(0);
  }
  return ln_rows(x, P[static_cast<size_t>(L.enc_ln.g)], P[static_cast<size_t>(L.enc_ln.b)]);
}

PolicyInference::PolicyInference(const PolicyModel& model, const GeometryTokens& geo,
                                 std::vector<PrimitiveKind> prim_kinds)
    : model_(model), prim_kinds_(std::move(prim_kinds)) {
  enc_out_ = encode_primitives(model, geo);
  const auto& P = model_.params.mats;
  const auto& L = model_.layout;
  ptr_keys_ = enc_out_ * P[static_cast<size_t>(L.ptr_k)];
  caches_.resize(L.dec.size());
  const int d = model_.config.embed_dim;
  for (size_t i = 0; i < L.dec.size(); ++i) {
    const auto& attn = L.dec[i].cross_attn;
    caches_[i].cross_k = (enc_out_ * P[static_cast<size_t>(attn.wk)]).rowwise() +
                         P[static_cast<size_t>(attn.bk)].row(0);
    caches_[i].cross_v = (enc_out_ * P[static_cast<size_t>(attn.wv)]).rowwise() +
                         P[static_cast<size_t>(attn.bv)].row(0);
    caches_[i].self_k = ad::Mat(0, d);
    caches_[i].self_v = ad::Mat(0, d);
  }
  run_token(vocab::kSos);
}

void PolicyInference::run_token(int token) {
  const auto& P = model_.params.mats;
  const auto& L = model_.layout;
  const int d = model_.config.embed_dim;
  const int heads = model_.config.heads;
  const int dh = model_.config.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  int pos = static_cast<int>(caches_[0].self_k.rows());

  Eigen::RowVectorXd y;
  if (vocab::is_ref(token)) {
    y = P[static_cast<size_t>(L.ref_marker)].row(0) + enc_out_.row(vocab::ref_of(token));
  } else {
    y = P[static_cast<size_t>(L.token_embed)].row(token);
  }
  y += P[static_cast<size_t>(L.pos_embed)].row(pos);

  auto attend = [&](const Eigen::RowVectorXd& q, const ad::Mat& keys, const ad::Mat& values) {
    Eigen::RowVectorXd ctx(d);
    for (int h = 0; h < heads; ++h) {
      Eigen::RowVectorXd scores =
          q.middleCols(h * dh, dh) * keys.middleCols(h * dh, dh).transpose() * scale;
      Eigen::RowVectorXd probs = softmax_row(scores);
      ctx.middleCols(h * dh, dh) = probs * values.middleCols(h * dh, dh);
    }
    return ctx;
  };

  for (size_t i = 0; i < L.dec.size(); ++i) {
    const auto& layer = L.dec[i];
    auto& cache = caches_[i];

    Eigen::RowVectorXd a =
        ln_rows(y, P[static_cast<size_t>(layer.ln1.g)], P[static_cast<size_t>(layer.ln1.b)]).row(0);
    Eigen::RowVectorXd q = a * P[static_cast<size_t>(layer.self_attn.wq)] +
                           P[static_cast<size_t>(layer.self_attn.bq)].row(0);
    Eigen::RowVectorXd k = a * P[static_cast<size_t>(layer.self_attn.wk)] +
                           P[static_cast<size_t>(layer.self_attn.bk)].row(0);
    Eigen::RowVectorXd v = a * P[static_cast<size_t>(layer.self_attn.wv)] +
                           P[static_cast<size_t>(layer.self_attn.bv)].row(0);
    cache.self_k.conservativeResize(cache.self_k.rows() + 1, d);
    cache.self_k.row(cache.self_k.rows() - 1) = k;
    cache.self_v.conservativeResize(cache.self_v.rows() + 1, d);
    cache.self_v.row(cache.self_v.rows() - 1) = v;
    Eigen::RowVectorXd ctx = attend(q, cache.self_k, cache.self_v);
    y += ctx * P[static_cast<size_t>(layer.self_attn.wo)] +
         P[static_cast<size_t>(layer.self_attn.bo)].row(0);

    Eigen::RowVectorXd b =
        ln_rows(y, P[static_cast<size_t>(layer.ln2.g)], P[static_cast<size_t>(layer.ln2.b)]).row(0);
    Eigen::RowVectorXd q2 = b * P[static_cast<size_t>(layer.cross_attn.wq)] +
                            P[static_cast<size_t>(layer.cross_attn.bq)].row(0);
    Eigen::RowVectorXd ctx2 = attend(q2, cache.cross_k, cache.cross_v);
    y += ctx2 * P[static_cast<size_t>(layer.cross_attn.wo)] +
         P[static_cast<size_t>(layer.cross_attn.bo)].row(0);

    Eigen::RowVectorXd c =
        ln_rows(y, P[static_cast<size_t>(layer.ln3.g)], P[static_cast<size_t>(layer.ln3.b)]).row(0);
    Eigen::RowVectorXd hidden = gelu_plain(
        (c * P[static_cast<size_t>(layer.ff.w1)] + P[static_cast<size_t>(layer.ff.b1)].row(0))
            .eval());
    y += hidden * P[static_cast<size_t>(layer.ff.w2)] + P[static_cast<size_t>(layer.ff.b2)].row(0);
  }

  last_hidden_ =
      ln_rows(y, P[static_cast<size_t>(L.dec_ln.g)], P[static_cast<size_t>(L.dec_ln.b)]).row(0);
}

Eigen::VectorXd PolicyInference::next_class_logits() const {
  const auto& P = model_.params.mats;
  const auto& L = model_.layout;
  const int n = static_cast<int>(enc_out_.rows());
  Eigen::RowVectorXd type_logits = last_hidden_ * P[static_cast<size_t>(L.type_w)] +
                                   P[static_cast<size_t>(L.type_b)].row(0);
  Eigen::RowVectorXd q = last_hidden_ * P[static_cast<size_t>(L.ptr_q)];
  Eigen::RowVectorXd ptr_logits =
      (q * ptr_keys_.transpose()) / std::sqrt(static_cast<double>(model_.config.embed_dim));
  Eigen::VectorXd out(kTypeClasses + n);
  out.head(kTypeClasses) = type_logits.transpose();
  out.tail(n) = ptr_logits.transpose();
  return out;
}

namespace {

Eigen::VectorXd class_mask_vector(const TokenClassMask& mask, int n) {
  Eigen::VectorXd m = Eigen::VectorXd::Constant(kTypeClasses + n, kNegInf);
  if (mask.types) m.head(kConstraintKindCount).setZero();
  if (mask.eos) m(kEosClass) = 0.0;
  if (mask.refs) m.tail(n).setZero();
  return m;
}

}  // namespace

Eigen::VectorXd PolicyInference::next_token_dist() const {
  const int n = static_cast<int>(enc_out_.rows());
  Eigen::VectorXd logits =
      next_class_logits() + class_mask_vector(grammar_mask(state_, model_.config.max_seq_len), n);
  Eigen::RowVectorXd probs = softmax_row(logits.transpose());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(vocab::kSize);
  for (int cls = 0; cls < probs.size(); ++cls) {
    if (probs(cls) > 0.0) out(token_of_class(cls)) = probs(cls);
  }
  return out;
}

void PolicyInference::feed(int token) {
  state_ = grammar_advance(state_, token, prim_kinds_);
  if (!state_.done) run_token(token);
}

SampleResult sample_sequence(const PolicyModel& model, const GeometryTokens& geo,
                             const std::vector<PrimitiveKind>& prim_kinds, double temperature,
                             double top_p, uint64_t seed) {
  PolicyInference inf(model, geo, prim_kinds);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const int n = static_cast<int>(geo.size());

  SampleResult result;
  result.tokens.push_back(vocab::kSos);
  while (!inf.done()) {
    Eigen::VectorXd logits = inf.next_class_logits();
    Eigen::VectorXd mask =
        class_mask_vector(grammar_mask(inf.grammar_state(), model.config.max_seq_len), n);
    Eigen::VectorXd masked = logits + mask;
    Eigen::RowVectorXd policy_probs = softmax_row(masked.transpose());

    int picked;
    if (temperature <= 0.0) {
      Eigen::Index arg;
      masked.maxCoeff(&arg);
      picked = static_cast<int>(arg);
    } else {
      Eigen::RowVectorXd probs = softmax_row((masked / temperature).transpose());
      std::vector<int> order(static_cast<size_t>(probs.size()));
      for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::stable_sort(order.begin(), order.end(),
                       [&](int a, int b) { return probs(a) > probs(b); });
      // nucleus: smallest prefix with mass >= top_p
      double cum = 0.0;
      size_t keep = order.size();
      for (size_t i = 0; i < order.size(); ++i) {
        cum += probs(order[i]);
        if (cum >= top_p - 1e-12) {
          keep = i + 1;
          break;
        }
      }
      double z = 0.0;
      for (size_t i = 0; i < keep; ++i) z += probs(order[i]);
      double u = uniform(rng) * z;
      double acc = 0.0;
      picked = order[keep - 1];
      for (size_t i = 0; i < keep; ++i) {
        acc += probs(order[i]);
        if (u < acc) {
          picked = order[i];
          break;
        }
      }
    }

    int token = token_of_class(picked);
    result.tokens.push_back(token);
    result.logprobs.push_back(std::log(policy_probs(picked)));
    inf.feed(token);
  }
  return result;
}

std::vector<int> greedy_sequence(const PolicyModel& model, const GeometryTokens& geo,
                                 const std::vector<PrimitiveKind>& prim_kinds) {
  return sample_sequence(model, geo, prim_kinds, 0.0, 1.0, 0).tokens;
}

double sequence_logprob(const PolicyModel& model, const GeometryTokens& geo,
                        const std::vector<PrimitiveKind>& prim_kinds,
                        const std::vector<int>& tokens, std::vector<double>* per_token) {
  if (tokens.empty() || tokens[0] != vocab::kSos) {
    throw std::invalid_argument("structurally invalid token sequence");
  }
  PolicyInference inf(model, geo, prim_kinds);
  const int n = static_cast<int>(geo.size());
  double total = 0.0;
  if (per_token) per_token->clear();
  for (size_t i = 1; i < tokens.size(); ++i) {
    Eigen::VectorXd logits = inf.next_class_logits();
    Eigen::VectorXd mask =
        class_mask_vector(grammar_mask(inf.grammar_state(), model.config.max_seq_len), n);
    Eigen::VectorXd masked = logits + mask;
    double mx = masked.maxCoeff();
    double z = 0.0;
    for (int j = 0; j < masked.size(); ++j) {
      if (masked(j) != kNegInf) z += std::exp(masked(j) - mx);
    }
    int cls;
    try {
      cls = class_of_token(tokens[i]);
    } catch (const std::invalid_argument&) {
      throw std::invalid_argument("structurally invalid token sequence");
    }
    if (cls >= masked.size() || masked(cls) == kNegInf) {
      throw std::invalid_argument("structurally invalid token sequence");
    }
    double lp = masked(cls) - mx - std::log(z);
    total += lp;
    if (per_token) per_token->push_back(lp);
    try {
      inf.feed(tokens[i]);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("structurally invalid token sequence");
    }
  }
  return total;
}

TapeLeaves make_leaves(ad::Tape& tape, const ParamStore& params) {
  TapeLeaves leaves;
  leaves.vars.reserve(params.mats.size());
  for (const auto& m : params.mats) leaves.vars.push_back(tape.leaf(m));
  return leaves;
}

namespace {

using Var = ad::Tape::Var;

Var tape_attention(ad::Tape& t, const TapeLeaves& P, Var q_in, Var kv_in, const AttnIdx& idx,
                   int heads, int dh, const ad::Mat& mask) {
  auto W = [&](int i) { return P.vars[static_cast<size_t>(i)]; };
  Var q = t.add_rowvec(t.matmul(q_in, W(idx.wq)), W(idx.bq));
  Var k = t.add_rowvec(t.matmul(kv_in, W(idx.wk)), W(idx.bk));
  Var v = t.add_rowvec(t.matmul(kv_in, W(idx.wv)), W(idx.bv));
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Var ctx;
  for (int h = 0; h < heads; ++h) {
    Var qh = t.slice_cols(q, h * dh, dh);
    Var kh = t.slice_cols(k, h * dh, dh);
    Var vh = t.slice_cols(v, h * dh, dh);
    Var probs = t.softmax_rows(t.scale(t.matmul_nt(qh, kh), scale), mask);
    Var ctx_h = t.matmul(probs, vh);
    ctx = h == 0 ? ctx_h : t.concat_cols(ctx, ctx_h);
  }
  return t.add_rowvec(t.matmul(ctx, W(idx.wo)), W(idx.bo));
}

Var tape_ff(ad::Tape& t, const TapeLeaves& P, Var x, const FfIdx& idx) {
  auto W = [&](int i) { return P.vars[static_cast<size_t>(i)]; };
  Var hidden = t.gelu(t.add_rowvec(t.matmul(x, W(idx.w1)), W(idx.b1)));
  return t.add_rowvec(t.matmul(hidden, W(idx.w2)), W(idx.b2));
}

Var tape_encoder(ad::Tape& t, const TapeLeaves& P, const PolicyModel& model,
                 const GeometryTokens& geo) {
  const auto& L = model.layout;
  auto W = [&](int i) { return P.vars[static_cast<size_t>(i)]; };
  const int n = static_cast<int>(geo.size());

  std::vector<int> kind_rows(geo.size()), fixed_rows(geo.size());
  std::array<std::vector<int>, 2 * kSamplePoints> coord_rows;
  for (auto& v : coord_rows) v.resize(geo.size());
  for (size_t i = 0; i < geo.size(); ++i) {
    kind_rows[i] = geo[i].kind;
    fixed_rows[i] = geo[i].fixed ? 1 : 0;
    for (int k = 0; k < kSamplePoints; ++k) {
      coord_rows[static_cast<size_t>(2 * k)][i] = geo[i].coord_bins[static_cast<size_t>(k)][0];
      coord_rows[static_cast<size_t>(2 * k + 1)][i] = geo[i].coord_bins[static_cast<size_t>(k)][1];
    }
  }
  Var x = t.add(t.gather_rows(W(L.kind_embed), kind_rows),
                t.gather_rows(W(L.fixed_embed), fixed_rows));
  for (int k = 0; k < 2 * kSamplePoints; ++k) {
    x = t.add(x, t.gather_rows(W(L.coord_embed[static_cast<size_t>(k)]),
                               coord_rows[static_cast<size_t>(k)]));
  }

  ad::Mat no_mask = ad::Mat::Zero(n, n);
  for (const auto& layer : L.enc) {
    Var a = t.layer_norm(x, W(layer.ln1.g), W(layer.ln1.b));
    x = t.add(x, tape_attention(t, P, a, a, layer.attn, model.config.heads,
                                model.config.head_dim(), no_mask));
    Var b = t.layer_norm(x, W(layer.ln2.g), W(layer.ln2.b));
    x = t.add(x, tape_ff(t, P, b, layer.ff));
  }
  return t.layer_norm(x, W(L.enc_ln.g), W(L.enc_ln.b));
}

}  // namespace

ad::Tape::Var sequence_logprob_var(ad::Tape& tape, const TapeLeaves& leaves,
                                   const PolicyModel& model, const GeometryTokens& geo,
                                   const std::vector<PrimitiveKind>& prim_kinds,
                                   const std::vector<int>& tokens) {
  if (tokens.size() < 2 || tokens[0] != vocab::kSos) {
    throw std::invalid_argument("structurally invalid token sequence");
  }
  const auto& L = model.layout;
  auto W = [&](int i) { return leaves.vars[static_cast<size_t>(i)]; };
  const int n = static_cast<int>(geo.size());
  const int rows = static_cast<int>(tokens.size()) - 1;  // decoder input length

  Var enc = tape_encoder(tape, leaves, model, geo);

  // Input embedding: token rows for SOS/type tokens; shared marker plus the
  // referenced primitive's encoding for pointer tokens.
  std::vector<int> table_rows(static_cast<size_t>(rows));
  std::vector<int> enc_rows(static_cast<size_t>(rows));
  std::vector<int> pos_rows(static_cast<size_t>(rows));
  Var token_table = tape.concat_rows(W(L.token_embed), W(L.ref_marker));
  Var enc_ext = tape.concat_rows(enc, tape.constant(ad::Mat::Zero(1, model.config.embed_dim)));
  for (int j = 0; j < rows; ++j) {
    int tok = tokens[static_cast<size_t>(j)];
    if (vocab::is_ref(tok)) {
      table_rows[static_cast<size_t>(j)] = vocab::kSize;  // marker row
      enc_rows[static_cast<size_t>(j)] = vocab::ref_of(tok);
    } else {
      table_rows[static_cast<size_t>(j)] = tok;
      enc_rows[static_cast<size_t>(j)] = n;  // zero row
    }
    pos_rows[static_cast<size_t>(j)] = j;
  }
  Var y = tape.add(tape.add(tape.gather_rows(token_table, table_rows),
                            tape.gather_rows(enc_ext, enc_rows)),
                   tape.gather_rows(W(L.pos_embed), pos_rows));

  ad::Mat causal = ad::Mat::Zero(rows, rows);
  for (int i = 0; i < rows; ++i) {
    for (int j = i + 1; j < rows; ++j) causal(i, j) = kNegInf;
  }
  ad::Mat no_mask = ad::Mat::Zero(rows, n);
  for (const auto& layer : L.dec) {
    Var a = tape.layer_norm(y, W(layer.ln1.g), W(layer.ln1.b));
    y = tape.add(y, tape_attention(tape, leaves, a, a, layer.self_attn, model.config.heads,
                                   model.config.head_dim(), causal));
    Var b = tape.layer_norm(y, W(layer.ln2.g), W(layer.ln2.b));
    y = tape.add(y, tape_attention(tape, leaves, b, enc, layer.cross_attn, model.config.heads,
                                   model.config.head_dim(), no_mask));
    Var c = tape.layer_norm(y, W(layer.ln3.g), W(layer.ln3.b));
    y = tape.add(y, tape_ff(tape, leaves, c, layer.ff));
  }
  Var dec = tape.layer_norm(y, W(L.dec_ln.g), W(L.dec_ln.b));

  Var type_logits = tape.add_rowvec(tape.matmul(dec, W(L.type_w)), W(L.type_b));
  Var ptr_logits = tape.scale(tape.matmul_nt(tape.matmul(dec, W(L.ptr_q)),
                                             tape.matmul(enc, W(L.ptr_k))),
                              1.0 / std::sqrt(static_cast<double>(model.config.embed_dim)));
  Var logits = tape.concat_cols(type_logits, ptr_logits);

  ad::Mat mask(rows, kTypeClasses + n);
  std::vector<int> picks(static_cast<size_t>(rows));
  GrammarState state;
  for (int j = 0; j < rows; ++j) {
    Eigen::VectorXd m = class_mask_vector(grammar_mask(state, model.config.max_seq_len), n);
    mask.row(j) = m.transpose();
    int cls = class_of_token(tokens[static_cast<size_t>(j + 1)]);
    if (m(cls) == kNegInf) throw std::invalid_argument("structurally invalid token sequence");
    picks[static_cast<size_t>(j)] = cls;
    state = grammar_advance(state, tokens[static_cast<size_t>(j + 1)], prim_kinds);
  }
  return tape.masked_log_softmax_pick(logits, mask, picks);
}

void accumulate_grads(const ad::Tape& tape, const TapeLeaves& leaves, GradStore* out) {
  for (size_t i = 0; i < leaves.vars.size(); ++i) {
    out->grads[i] += tape.grad(leaves.vars[i]);
  }
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore* params, const GradStore& grads) {
  if (!grads.all_finite()) throw NonFiniteError();
  if (m_.empty()) {
    for (const auto& g : grads.grads) {
      m_.push_back(ad::Mat::Zero(g.rows(), g.cols()));
      v_.push_back(ad::Mat::Zero(g.rows(), g.cols()));
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, t_);
  double bc2 = 1.0 - std::pow(beta2_, t_);
  for (size_t i = 0; i < grads.grads.size(); ++i) {
    const ad::Mat& g = grads.grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    ad::Mat m_hat = m_[i] / bc1;
    ad::Mat v_hat = v_[i] / bc2;
    params->mats[i] -=
        lr_ * m_hat.cwiseQuotient(v_hat.cwiseSqrt() + ad::Mat::Constant(g.rows(), g.cols(), eps_));
  }
  ++params->version;
}

}  // namespace sketchalign

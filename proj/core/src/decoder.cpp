#include "vtcal/decoder.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "vtcal/errors.hpp"
#include "vtcal/rng.hpp"

namespace vtcal {

namespace {

constexpr char kModelMagic[8] = {'V', 'T', 'C', 'A', 'L', 'M', 'D', 'L'};
constexpr std::uint32_t kModelVersion = 1;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

Matrix gaussian(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = stddev * rng.normal();
  return m;
}

Vec random_unit(Rng& rng, std::size_t dim) {
  Vec v(dim);
  for (double& x : v.values()) x = rng.normal();
  return l2_normalize(v);
}

// Removes the components of `v` along each (unit) vector in `basis`.
Vec orthogonalize(Vec v, std::span<const Vec> basis) {
  for (const Vec& b : basis) {
    const double c = dot(v.values(), b.values());
    for (std::size_t i = 0; i < v.dim(); ++i) v[i] -= c * b[i];
  }
  return v;
}

// Rows of a Gaussian matrix orthonormalized by modified Gram-Schmidt.
Matrix random_orthogonal(Rng& rng, std::size_t n) {
  Matrix q = gaussian(rng, n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto ri = q.row(i);
    for (std::size_t j = 0; j < i; ++j) {
      const auto rj = q.row(j);
      const double c = dot(ri, rj);
      for (std::size_t k = 0; k < n; ++k) ri[k] -= c * rj[k];
    }
    const double norm = l2_norm(ri);
    for (double& x : ri) x /= norm;
  }
  return q;
}

Matrix rms_rows(const Matrix& x) {
  Matrix out = x;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double scale = 1.0 / std::sqrt(rms(row) * rms(row) + 1e-12);
    for (double& v : row) v *= scale;
  }
  return out;
}

void check_layer_index(const DecoderModel& model, int layer) {
  if (layer < 1 || layer > model.config().num_layers) {
    throw Error("layer index " + std::to_string(layer) + " outside [1, " +
                std::to_string(model.config().num_layers) + "]");
  }
}

void check_hooks(const DecoderModel& model, const HookSet& hooks) {
  if (!hooks.empty()) {
    const int top = hooks.max_layer();
    if (top > model.config().num_layers) {
      throw Error("hook registered at layer " + std::to_string(top) + " but model has " +
                  std::to_string(model.config().num_layers) + " layers");
    }
  }
}

// Pushes `x` (rows first..first+n-1) through layers 1..up_to, extending the
// per-layer key/value caches. Returns H^(up_to) for the rows.
Matrix run_layers(const DecoderModel& model, Matrix x, std::size_t first, std::size_t prefix_length,
                  std::size_t step, std::vector<LayerCache>& cache, int up_to,
                  const HookSet& hooks, const AttentionObserver* observer,
                  std::vector<Matrix>* collect) {
  const auto& cfg = model.config();
  const std::size_t d = static_cast<std::size_t>(cfg.hidden_dim);
  const std::size_t heads = static_cast<std::size_t>(cfg.num_heads);
  const std::size_t dh = static_cast<std::size_t>(cfg.head_dim());
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const std::size_t n = x.rows();
  std::vector<double> scores;

  for (int l = 1; l <= up_to; ++l) {
    const LayerWeights& w = model.layer(l);
    LayerCache& lc = cache[static_cast<std::size_t>(l - 1)];
    const Matrix layer_input = x;

    const Matrix normed = rms_rows(x);
    const Matrix q = matmul_transposed(normed, w.wq);
    const Matrix k = matmul_transposed(normed, w.wk);
    const Matrix v = matmul_transposed(normed, w.wv);
    lc.keys.insert(lc.keys.end(), k.values().begin(), k.values().end());
    lc.values.insert(lc.values.end(), v.values().begin(), v.values().end());

    Matrix mixed(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pos = first + i;
      const auto qi = q.row(i);
      for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * dh;
        scores.assign(pos + 1, 0.0);
        for (std::size_t j = 0; j <= pos; ++j) {
          const double* kj = lc.keys.data() + j * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[off + c] * kj[c];
          scores[j] = s * inv_sqrt_dh;
        }
        softmax_inplace(scores);
        if (observer) (*observer)(l, static_cast<int>(h), pos, scores);
        auto out = mixed.row(i);
        for (std::size_t j = 0; j <= pos; ++j) {
          const double p = scores[j];
          const double* vj = lc.values.data() + j * d + off;
          for (std::size_t c = 0; c < dh; ++c) out[off + c] += p * vj[c];
        }
      }
    }
    x = x + matmul_transposed(mixed, w.wo);

    Matrix hidden = matmul_transposed(rms_rows(x), w.w_in);
    for (std::size_t r = 0; r < hidden.rows(); ++r) {
      auto row = hidden.row(r);
      for (std::size_t c = 0; c < row.size(); ++c) row[c] = gelu(row[c] + w.b_in[c]);
    }
    x = x + matmul_transposed(hidden, w.w_out);

    if (!hooks.empty()) {
      LayerView view{l, step, first, prefix_length, layer_input, x};
      hooks.apply(view);
    }
    if (collect) collect->push_back(x);
  }
  return x;
}

Vec logits_from_hidden(const DecoderModel& model, std::span<const double> hidden) {
  Matrix row(1, hidden.size(), std::vector<double>(hidden.begin(), hidden.end()));
  const Matrix logits = matmul_transposed(rms_rows(row), model.unembedding());
  Vec out = Vec::from_span(logits.row(0));
  const double beta = model.config().prior_bias_strength;
  const Vec& bias = model.prior_bias();
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = out[i] + beta * bias[i];
  require_finite(out.values(), "next_token_logits");
  return out;
}

void write_tensor(std::ofstream& out, std::span<const double> values) {
  static_assert(std::endian::native == std::endian::little, "model files assume little-endian hosts");
  out.write(reinterpret_cast<const char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(double)));
}

void read_tensor(std::ifstream& in, std::span<double> values, const std::string& path) {
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(double)));
  if (!in) throw IoError("truncated model file " + path);
  require_finite(values, "DecoderModel::load");
}

}  // namespace

double rms(std::span<const double> row) {
  if (row.empty()) return 0.0;
  return std::sqrt(dot(row, row) / static_cast<double>(row.size()));
}

// ---------------------------------------------------------------------------
// DecoderConfig

void DecoderConfig::validate() const {
  if (num_layers < 2) throw ConfigError("decoder.num_layers must be >= 2");
  if (hidden_dim < 1 || num_heads < 1 || hidden_dim % num_heads != 0) {
    throw ConfigError("decoder.hidden_dim must be a positive multiple of decoder.num_heads");
  }
  if (vocab_size <= token::kObjectBase) {
    throw ConfigError("decoder.vocab_size must exceed " + std::to_string(token::kObjectBase));
  }
  if (max_seq < 1) throw ConfigError("decoder.max_seq must be positive");
  if (ffn_multiplier < 1) throw ConfigError("decoder.ffn_multiplier must be positive");
  if (end_token < 0 || end_token >= vocab_size) throw ConfigError("decoder.end_token out of range");
  if (!(prior_bias_strength >= 0.0) || !std::isfinite(prior_bias_strength)) {
    throw ConfigError("decoder.prior_bias_strength must be finite and >= 0");
  }
}

#define VTCAL_DECODER_INIT_FIELDS(X) \
  X(text_flag)                       \
  X(text_noise)                      \
  X(object_align)                    \
  X(position)                        \
  X(attn_temperature)                \
  X(ground_temperature)              \
  X(ground_out)                      \
  X(attn_noise)                      \
  X(attn_out)                        \
  X(ffn)                             \
  X(detector_gain)                   \
  X(detector_threshold)              \
  X(detector_text_gate)              \
  X(detector_vision_gate)            \
  X(detector_name_gate)              \
  X(readout_detector)                \
  X(readout_text)                    \
  X(readout_vision)                  \
  X(unembed)

void DecoderConfig::write(KeyValueFile& kv, std::string_view prefix) const {
  const std::string p(prefix);
  kv.set(p + "num_layers", num_layers);
  kv.set(p + "hidden_dim", hidden_dim);
  kv.set(p + "num_heads", num_heads);
  kv.set(p + "vocab_size", vocab_size);
  kv.set(p + "max_seq", max_seq);
  kv.set(p + "ffn_multiplier", ffn_multiplier);
  kv.set(p + "end_token", end_token);
  kv.set(p + "prior_bias_strength", prior_bias_strength);
  kv.set(p + "seed", seed);
#define X(name) kv.set(p + "init." #name, init.name);
  VTCAL_DECODER_INIT_FIELDS(X)
#undef X
}

void DecoderConfig::read(const KeyValueFile& kv, std::string_view prefix) {
  const std::string p(prefix);
  kv.read(p + "num_layers", num_layers);
  kv.read(p + "hidden_dim", hidden_dim);
  kv.read(p + "num_heads", num_heads);
  kv.read(p + "vocab_size", vocab_size);
  kv.read(p + "max_seq", max_seq);
  kv.read(p + "ffn_multiplier", ffn_multiplier);
  kv.read(p + "end_token", end_token);
  kv.read(p + "prior_bias_strength", prior_bias_strength);
  kv.read(p + "seed", seed);
#define X(name) kv.read(p + "init." #name, init.name);
  VTCAL_DECODER_INIT_FIELDS(X)
#undef X
}

bool DecoderConfig::is_key(std::string_view key, std::string_view prefix) {
  KeyValueFile probe;
  DecoderConfig{}.write(probe, prefix);
  return probe.contains(key);
}

// ---------------------------------------------------------------------------
// DecoderModel

DecoderModel DecoderModel::build(const DecoderConfig& config, const VisualAlignment& alignment) {
  config.validate();
  const std::size_t d = static_cast<std::size_t>(config.hidden_dim);
  const std::size_t vocab = static_cast<std::size_t>(config.vocab_size);
  const std::size_t ffn_width = d * static_cast<std::size_t>(config.ffn_multiplier);
  const std::size_t num_objects = alignment.object_prototypes.size();
  const InitScales& s = config.init;
  if (token::kObjectBase + num_objects > vocab) {
    throw ConfigError("vocabulary too small for " + std::to_string(num_objects) + " object tokens");
  }
  if (num_objects > ffn_width) throw ConfigError("too many objects for the FFN width");
  for (const Vec& p : alignment.object_prototypes) {
    if (p.dim() != d) throw ShapeError("object prototype dimension differs from hidden_dim");
  }

  const Rng root(config.seed);
  DecoderModel m;
  m.config_ = config;

  // Shared directions: text marker, vision marker (encoder bias when aligned),
  // and the channel the grounding detector writes to.
  Rng dir_rng = root.split(1);
  Vec vision_dir = (alignment.vision_bias.dim() == d && l2_norm(alignment.vision_bias.values()) > kNormEpsilon)
                       ? l2_normalize(alignment.vision_bias)
                       : random_unit(dir_rng, d);
  std::vector<Vec> basis{vision_dir};
  Vec text_dir = l2_normalize(orthogonalize(random_unit(dir_rng, d), basis));
  basis.push_back(text_dir);
  Vec yes_dir = l2_normalize(orthogonalize(random_unit(dir_rng, d), basis));

  std::vector<Vec> object_dirs;
  for (const Vec& p : alignment.object_prototypes) {
    Vec content = alignment.vision_bias.dim() == d ? p - alignment.vision_bias : p;
    object_dirs.push_back(l2_normalize(content));
  }

  // Projector onto the span of the object directions; the last layer scores
  // name/patch matches inside it only.
  Matrix object_projector(d, d);
  {
    std::vector<Vec> span_basis;
    for (const Vec& o : object_dirs) {
      Vec r = orthogonalize(o, span_basis);
      if (l2_norm(r.values()) > 1e-6) span_basis.push_back(l2_normalize(r));
    }
    if (span_basis.empty()) object_projector = Matrix::identity(d);
    for (const Vec& b : span_basis)
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t c = 0; c < d; ++c) object_projector(r, c) += b[r] * b[c];
  }

  // Object names carry their visual direction through a fixed rotation, so a
  // name token alone does not look like the object; the last layer's query
  // map undoes the rotation to find matching patches.
  const Matrix name_rotation = random_orthogonal(dir_rng, d);

  Rng emb_rng = root.split(2);
  m.embedding_ = gaussian(emb_rng, vocab, d, s.text_noise);
  for (std::size_t t = 0; t < vocab; ++t) {
    auto row = m.embedding_.row(t);
    for (std::size_t c = 0; c < d; ++c) row[c] += s.text_flag * text_dir[c];
  }
  for (std::size_t o = 0; o < num_objects; ++o) {
    auto row = m.embedding_.row(token::kObjectBase + o);
    for (std::size_t r = 0; r < d; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += name_rotation(r, c) * object_dirs[o][c];
      row[r] += s.object_align * acc;
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  for (int l = 1; l <= config.num_layers; ++l) {
    Rng lr = root.split(100 + static_cast<std::uint64_t>(l));
    LayerWeights w;
    // Query and key share one orthogonal map, so each head scores content
    // similarity inside its own random subspace; the noise keeps heads distinct.
    const Matrix shared = random_orthogonal(lr, d);
    const bool last = l == config.num_layers;
    const double root_temp = std::sqrt(last ? s.ground_temperature : s.attn_temperature);
    const Matrix key_map = last ? matmul(shared, object_projector) : shared;
    const Matrix query_map = last ? matmul(key_map, transpose(name_rotation)) : shared;
    w.wq = root_temp * query_map + gaussian(lr, d, d, s.attn_noise * inv_sqrt_d);
    w.wk = root_temp * key_map + gaussian(lr, d, d, s.attn_noise * inv_sqrt_d);
    const Matrix value_map = random_orthogonal(lr, d);
    w.wv = value_map;
    w.wo = (last ? s.ground_out : s.attn_out) * transpose(value_map);
    w.w_in = gaussian(lr, ffn_width, d, inv_sqrt_d);
    w.b_in = Vec(ffn_width);
    for (double& b : w.b_in.values()) b = 0.1 * lr.normal();
    w.w_out = gaussian(lr, d, ffn_width, s.ffn / std::sqrt(static_cast<double>(ffn_width)));

    if (last) {
      // Grounding detector: unit o fires when a text position has pulled in
      // object o's visual direction past the threshold.
      for (std::size_t o = 0; o < num_objects; ++o) {
        auto in_row = w.w_in.row(o);
        for (std::size_t c = 0; c < d; ++c) {
          double name = 0.0;
          for (std::size_t k = 0; k < d; ++k) name += name_rotation(c, k) * object_dirs[o][k];
          in_row[c] = s.detector_gain * inv_sqrt_d *
                      (object_dirs[o][c] + s.detector_name_gate * name + s.detector_text_gate * text_dir[c] -
                       s.detector_vision_gate * vision_dir[c]);
        }
        w.b_in[o] = -s.detector_gain * s.detector_threshold;
        for (std::size_t c = 0; c < d; ++c) w.w_out(c, o) = yes_dir[c];
      }
    }
    m.layers_.push_back(std::move(w));
  }

  Rng out_rng = root.split(3);
  m.unembedding_ = gaussian(out_rng, vocab, d, s.unembed * inv_sqrt_d);
  {
    auto yes = m.unembedding_.row(token::kYes);
    auto no = m.unembedding_.row(token::kNo);
    for (std::size_t c = 0; c < d; ++c) {
      yes[c] = s.readout_detector * yes_dir[c] + s.readout_text * text_dir[c];
      no[c] = s.readout_vision * vision_dir[c];
    }
  }

  // Language prior: favours affirmation.
  m.prior_bias_ = Vec(vocab);
  m.prior_bias_[token::kYes] = 0.5;
  m.prior_bias_[token::kNo] = -0.5;
  return m;
}

DecoderModel DecoderModel::with_prior_bias(double beta) const {
  DecoderModel copy = *this;
  copy.config_.prior_bias_strength = beta;
  copy.config_.validate();
  return copy;
}

Vec DecoderModel::embed_token(int id) const {
  if (id < 0 || id >= config_.vocab_size) throw Error("token id " + std::to_string(id) + " out of range");
  return Vec::from_span(embedding_.row(static_cast<std::size_t>(id)));
}

void DecoderModel::add_position(std::span<double> row, std::size_t position) const {
  const std::size_t d = row.size();
  const double amp = config_.init.position;
  if (amp == 0.0) return;
  for (std::size_t i = 0; i + 1 < d; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
    const double angle = static_cast<double>(position) * freq;
    row[i] += amp * std::sin(angle);
    row[i + 1] += amp * std::cos(angle);
  }
}

void DecoderModel::save(const std::filesystem::path& path) const {
  KeyValueFile kv;
  config_.write(kv);
  const std::string header = kv.serialize();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  out.write(kModelMagic, sizeof(kModelMagic));
  const std::uint32_t version = kModelVersion;
  const std::uint64_t header_len = header.size();
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto t : tensors()) write_tensor(out, t);
  if (!out) throw IoError("write failed for " + path.string());
}

DecoderModel DecoderModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  char magic[sizeof(kModelMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kModelMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a vtcal model file");
  }
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || version != kModelVersion || header_len > (1u << 20)) {
    throw IoError("unsupported model header in " + path.string());
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw IoError("truncated model header in " + path.string());

  DecoderModel m;
  m.config_.read(KeyValueFile::parse(header, path.string()));
  m.config_.validate();
  const std::size_t d = static_cast<std::size_t>(m.config_.hidden_dim);
  const std::size_t vocab = static_cast<std::size_t>(m.config_.vocab_size);
  const std::size_t f = d * static_cast<std::size_t>(m.config_.ffn_multiplier);
  m.embedding_ = Matrix(vocab, d);
  m.unembedding_ = Matrix(vocab, d);
  m.prior_bias_ = Vec(vocab);
  m.layers_.resize(static_cast<std::size_t>(m.config_.num_layers));
  for (auto& w : m.layers_) {
    w.wq = Matrix(d, d);
    w.wk = Matrix(d, d);
    w.wv = Matrix(d, d);
    w.wo = Matrix(d, d);
    w.w_in = Matrix(f, d);
    w.b_in = Vec(f);
    w.w_out = Matrix(d, f);
  }
  const std::string p = path.string();
  for (auto t : m.mutable_tensors()) read_tensor(in, t, p);
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in " + p);
  return m;
}

std::vector<std::span<const double>> DecoderModel::tensors() const {
  std::vector<std::span<const double>> out{embedding_.values(), unembedding_.values(),
                                           prior_bias_.values()};
  for (const auto& w : layers_) {
    for (const Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w_in}) out.push_back(m->values());
    out.push_back(w.b_in.values());
    out.push_back(w.w_out.values());
  }
  return out;
}

std::vector<std::span<double>> DecoderModel::mutable_tensors() {
  std::vector<std::span<double>> out{embedding_.values(), unembedding_.values(), prior_bias_.values()};
  for (auto& w : layers_) {
    for (Matrix* m : {&w.wq, &w.wk, &w.wv, &w.wo, &w.w_in}) out.push_back(m->values());
    out.push_back(w.b_in.values());
    out.push_back(w.w_out.values());
  }
  return out;
}

bool operator==(const DecoderModel& a, const DecoderModel& b) {
  KeyValueFile ka, kb;
  a.config_.write(ka);
  b.config_.write(kb);
  if (ka.serialize() != kb.serialize()) return false;
  if (a.embedding_ != b.embedding_ || a.unembedding_ != b.unembedding_ || a.prior_bias_ != b.prior_bias_) {
    return false;
  }
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.wq != y.wq || x.wk != y.wk || x.wv != y.wv || x.wo != y.wo || x.w_in != y.w_in ||
        x.b_in != y.b_in || x.w_out != y.w_out) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// DecodeState

DecodeState::DecodeState(const DecoderModel& model, const VisionTokens& vision,
                         std::span<const int> query)
    : query_(query.begin(), query.end()), max_seq_(model.config().max_seq) {
  const std::size_t d = static_cast<std::size_t>(model.config().hidden_dim);
  if (vision.count() > 0 && vision.dim() != d) {
    throw ShapeError("vision tokens have dimension " + std::to_string(vision.dim()) +
                     ", model expects " + std::to_string(d));
  }
  context_ = vision.count() > 0 ? vision.tokens : Matrix(0, d);
  for (int id : query_) context_.append_row(model.embed_token(id).values());
  if (context_.rows() == 0) throw Error("decode context is empty");
  prefix_length_ = context_.rows();
  vision_count_ = vision.count();
  if (prefix_length_ > static_cast<std::size_t>(max_seq_)) {
    throw Error("context length " + std::to_string(prefix_length_) + " exceeds max_seq");
  }
}

void DecodeState::append(int token_id) {
  if (sequence_length() + 1 > static_cast<std::size_t>(max_seq_)) {
    throw Error("sequence would exceed max_seq " + std::to_string(max_seq_));
  }
  tokens_.push_back(token_id);
}

Matrix DecodeState::input_rows(const DecoderModel& model, std::size_t first, std::size_t count) const {
  const std::size_t d = static_cast<std::size_t>(model.config().hidden_dim);
  Matrix out(count, d);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t pos = first + r;
    auto row = out.row(r);
    if (pos < prefix_length_) {
      const auto src = context_.row(pos);
      std::copy(src.begin(), src.end(), row.begin());
    } else {
      const auto emb = model.embedding().row(static_cast<std::size_t>(tokens_.at(pos - prefix_length_)));
      std::copy(emb.begin(), emb.end(), row.begin());
    }
    model.add_position(row, pos);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward passes

std::vector<Matrix> forward_layers(const DecoderModel& model, const DecodeState& state, int up_to,
                                   const HookSet& hooks, const AttentionObserver* observer) {
  check_layer_index(model, up_to);
  check_hooks(model, hooks);
  std::vector<LayerCache> cache(static_cast<std::size_t>(model.config().num_layers));
  std::vector<Matrix> layers;
  run_layers(model, state.input_rows(model, 0, state.sequence_length()), 0, state.prefix_length(),
             state.step(), cache, up_to, hooks, observer, &layers);
  return layers;
}

Matrix forward_to_layer(const DecoderModel& model, const DecodeState& state, int layer,
                        const HookSet& hooks, const AttentionObserver* observer) {
  check_layer_index(model, layer);
  check_hooks(model, hooks);
  std::vector<LayerCache> cache(static_cast<std::size_t>(model.config().num_layers));
  return run_layers(model, state.input_rows(model, 0, state.sequence_length()), 0,
                    state.prefix_length(), state.step(), cache, layer, hooks, observer, nullptr);
}

Vec next_token_logits_cached(const DecoderModel& model, DecodeState& state, const HookSet& hooks,
                             const AttentionObserver* observer) {
  check_hooks(model, hooks);
  const int depth = model.config().num_layers;
  if (state.cache_.empty()) state.cache_.resize(static_cast<std::size_t>(depth));
  const std::size_t pending = state.sequence_length() - state.cached_rows_;
  if (pending > 0) {
    const Matrix out = run_layers(model, state.input_rows(model, state.cached_rows_, pending),
                                  state.cached_rows_, state.prefix_length_, state.step(), state.cache_,
                                  depth, hooks, observer, nullptr);
    state.cached_rows_ += pending;
    state.last_hidden_ = Vec::from_span(out.row(out.rows() - 1));
  }
  return logits_from_hidden(model, state.last_hidden_.values());
}

Vec next_token_logits(const DecoderModel& model, DecodeState& state, const HookSet& hooks,
                      DecodePath path, const AttentionObserver* observer) {
  if (path == DecodePath::cached) return next_token_logits_cached(model, state, hooks, observer);
  const Matrix h = forward_to_layer(model, state, model.config().num_layers, hooks, observer);
  return logits_from_hidden(model, h.row(h.rows() - 1));
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw Error("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

std::vector<int> greedy_continue(const DecoderModel& model, DecodeState& state, const HookSet& hooks,
                                 int max_new, const GreedyOptions& options) {
  if (max_new < 1) throw Error("greedy_decode: max_new must be >= 1");
  std::vector<int> out;
  for (int i = 0; i < max_new; ++i) {
    const Vec logits = next_token_logits(model, state, hooks, options.path, options.observer);
    const int next = argmax(logits.values());
    out.push_back(next);
    if (options.stop_at_end && next == model.config().end_token) break;
    if (i + 1 < max_new) state.append(next);
  }
  return out;
}

std::vector<int> greedy_decode(const DecoderModel& model, const VisionTokens& vision,
                               std::span<const int> query, const HookSet& hooks, int max_new,
                               const GreedyOptions& options) {
  DecodeState state(model, vision, query);
  return greedy_continue(model, state, hooks, max_new, options);
}

}  // namespace vtcal

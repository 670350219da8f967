#include "vtcal/linear_diagnostic.hpp"

#include <cmath>

#include "vtcal/errors.hpp"
#include "vtcal/rng.hpp"

namespace vtcal {

namespace {

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = stddev * rng.normal();
  return m;
}

Vec matvec(const Matrix& m, std::span<const double> x) {
  Vec out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = dot(m.row(r), x);
  return out;
}

}  // namespace

LinearDiagnosticModel build_linear_diagnostic(const DecoderConfig& config, std::uint64_t seed) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.hidden_dim);
  const double s = 1.0 / std::sqrt(static_cast<double>(d));
  Rng root(seed);
  LinearDiagnosticModel m;
  for (int l = 0; l < config.num_layers; ++l) {
    Rng r = root.split(static_cast<std::uint64_t>(10 + l));
    m.effect_.push_back(gaussian_matrix(r, d, d, s));
    m.query_map_.push_back(gaussian_matrix(r, d, d, s));
    Vec b(d);
    for (std::size_t i = 0; i < d; ++i) b[i] = r.normal();
    m.bias_dir_.push_back(std::move(b));
  }
  Rng er = root.split(1);
  m.embedding_ = gaussian_matrix(er, static_cast<std::size_t>(config.vocab_size), d, 1.0);
  Rng rr = root.split(2);
  m.readout_ = gaussian_matrix(rr, static_cast<std::size_t>(config.vocab_size), d, s);
  m.offset_ = Vec(d);
  m.beta_ = config.prior_bias_strength;
  return m;
}

Vec LinearDiagnosticModel::visual_effect(int layer, const VisionTokens& vision) const {
  const Matrix& a = effect_map(layer);
  if (vision.count() > 0 && vision.dim() != a.cols()) {
    throw ShapeError("linear diagnostic: vision dim " + std::to_string(vision.dim()) + " vs " +
                     std::to_string(a.cols()));
  }
  Vec pooled(a.cols());
  for (std::size_t r = 0; r < vision.count(); ++r) {
    const auto row = vision.tokens.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) pooled[c] += row[c];
  }
  return matvec(a, pooled.values());
}

Vec LinearDiagnosticModel::shared_effect(int layer, std::span<const int> query) const {
  const auto d = static_cast<std::size_t>(dim());
  Vec q(d);
  for (int id : query) {
    if (id < 0 || static_cast<std::size_t>(id) >= embedding_.rows()) throw Error("token id out of vocabulary");
    const auto e = embedding_.row(static_cast<std::size_t>(id));
    for (std::size_t c = 0; c < d; ++c) q[c] += e[c];
  }
  if (!query.empty()) q = (1.0 / static_cast<double>(query.size())) * q;
  Vec out = matvec(query_map(layer), q.values());
  const Vec& b = bias_dir_.at(static_cast<std::size_t>(layer - 1));
  for (std::size_t c = 0; c < d; ++c) out[c] += beta_ * b[c] + offset_[c];
  return out;
}

Vec LinearDiagnosticModel::hidden(int layer, const VisionTokens& vision, std::span<const int> query) const {
  if (layer < 1 || layer > num_layers()) throw Error("linear diagnostic: layer out of range");
  return visual_effect(layer, vision) + shared_effect(layer, query);
}

Vec LinearDiagnosticModel::logits(const VisionTokens& vision, std::span<const int> query) const {
  return matvec(readout_, hidden(num_layers(), vision, query).values());
}

LinearDiagnosticModel LinearDiagnosticModel::with_shared_offset(const Vec& offset) const {
  if (offset.dim() != offset_.dim()) throw ShapeError("shared offset dimension mismatch");
  LinearDiagnosticModel out = *this;
  out.offset_ = offset_ + offset;
  return out;
}

std::vector<Vec> LinearDiagnosticModel::probe_states(const VisionTokens& vision, std::span<const int> query,
                                                     int up_to, DeltaPosition) const {
  std::vector<Vec> out;
  for (int l = 1; l <= up_to; ++l) out.push_back(hidden(l, vision, query));
  return out;
}

}  // namespace vtcal

#include "vtcal/crc.hpp"

#include <future>
#include <fstream>
#include <nlohmann/json.hpp>

#include "vtcal/errors.hpp"
#include "vtcal/vision.hpp"

namespace vtcal {

void ProbeCache::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["fingerprint"] = fingerprint;
  j["num_negatives"] = num_negatives;
  j["num_kept"] = num_kept;
  j["creation_step"] = creation_step;
  j["directions"] = nlohmann::json::array();
  for (const Vec& v : directions) {
    j["directions"].push_back(std::vector<double>(v.values().begin(), v.values().end()));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write probe cache " + path.string());
  out << j.dump() << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

ProbeCache ProbeCache::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open probe cache " + path.string());
  ProbeCache cache;
  try {
    const auto j = nlohmann::json::parse(in);
    cache.fingerprint = j.at("fingerprint").get<std::string>();
    cache.num_negatives = j.at("num_negatives").get<int>();
    cache.num_kept = j.at("num_kept").get<int>();
    cache.creation_step = j.at("creation_step").get<std::size_t>();
    for (const auto& d : j.at("directions")) cache.directions.emplace_back(d.get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad probe cache " + path.string() + ": " + e.what());
  }
  if (cache.creation_step != 0) throw IoError(path.string() + ": probe cache must be created at step 0");
  return cache;
}

std::vector<VisionTokens> make_negatives(const VisionTokens& v, int k, std::size_t n_h, const Rng& rng) {
  if (k < 1) throw ConfigError("make_negatives: k must be >= 1");
  if (n_h < 1 || n_h >= v.count()) {
    throw ConfigError("make_negatives: n_h=" + std::to_string(n_h) + " must lie in [1, " +
                      std::to_string(v.count()) + ")");
  }
  std::vector<VisionTokens> out;
  for (int i = 0; i < k; ++i) {
    Rng sub = rng.split(static_cast<std::uint64_t>(i));
    out.push_back(prune_tokens(v, n_h, sub));
  }
  return out;
}

std::vector<Vec> DecoderProbe::probe_states(const VisionTokens& vision, std::span<const int> query, int up_to,
                                            DeltaPosition position) const {
  const DecodeState state(model_, vision, query);
  const auto layers = forward_layers(model_, state, up_to);
  std::vector<Vec> out;
  for (const Matrix& h : layers) {
    if (position == DeltaPosition::last) {
      out.push_back(Vec::from_span(h.row(h.rows() - 1)));
      continue;
    }
    std::vector<Vec> rows;
    for (std::size_t r = state.vision_count(); r < state.prefix_length(); ++r) rows.push_back(Vec::from_span(h.row(r)));
    if (rows.empty()) throw Error("query_mean probe position needs a nonempty query");
    out.push_back(mean_rows(rows));
  }
  return out;
}

ProbeCache probe_directions(const ProbeTarget& target, const VisionTokens& v, std::span<const int> query,
                            std::span<const VisionTokens> negatives, int l_c, const ProbeOptions& options) {
  if (negatives.empty()) throw ConfigError("probe_directions: need at least one negative");
  if (l_c < 1 || l_c > target.num_layers()) {
    throw ConfigError("probe_directions: L_c=" + std::to_string(l_c) + " outside model depth");
  }
  auto run = [&](const VisionTokens& vt) { return target.probe_states(vt, query, l_c, options.position); };

  std::vector<std::vector<Vec>> neg_states(negatives.size());
  std::vector<Vec> org_states;
  if (options.parallel && negatives.size() > 1) {
    std::vector<std::future<std::vector<Vec>>> jobs;
    for (const auto& n : negatives) jobs.push_back(std::async(std::launch::async, run, std::cref(n)));
    org_states = run(v);
    for (std::size_t k = 0; k < jobs.size(); ++k) neg_states[k] = jobs[k].get();
  } else {
    org_states = run(v);
    for (std::size_t k = 0; k < negatives.size(); ++k) neg_states[k] = run(negatives[k]);
  }

  ProbeCache cache;
  cache.num_negatives = static_cast<int>(negatives.size());
  cache.num_kept = static_cast<int>(negatives.front().count());
  for (int l = 0; l < l_c; ++l) {
    const auto li = static_cast<std::size_t>(l);
    std::vector<Vec> deltas;
    for (const auto& ns : neg_states) deltas.push_back(org_states.at(li) - ns.at(li));
    cache.directions.push_back(mean_rows(deltas));
    require_finite(cache.directions.back().values(), "probe direction");
  }
  return cache;
}

ProbeCache probe_directions(const DecoderModel& model, const VisionTokens& v, std::span<const int> query,
                            std::span<const VisionTokens> negatives, int l_c, const ProbeOptions& options) {
  return probe_directions(DecoderProbe(model), v, query, negatives, l_c, options);
}

void calibrate_in_place(std::span<double> h, std::span<const double> v_unit, double lambda_c,
                        CalibrationStats* stats) {
  if (h.size() != v_unit.size()) throw ShapeError("calibrate_state: state and direction dims differ");
  const double nh = l2_norm(h);
  if (nh <= kNormEpsilon) throw DegenerateVectorError("calibrate_state: hidden state has near-zero norm");
  std::vector<double> c(h.size());
  for (std::size_t i = 0; i < h.size(); ++i) c[i] = h[i] / nh + lambda_c * v_unit[i];
  const double nc = l2_norm(c);
  if (nc < kNormEpsilon) {
    if (stats) ++stats->degenerate;
    return;
  }
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = c[i] / nc * nh;
  if (stats) ++stats->applied;
}

Vec calibrate_state(const Vec& h_org, const Vec& v_crc, double lambda_c, CalibrationStats* stats) {
  if (h_org.dim() != v_crc.dim()) throw ShapeError("calibrate_state: state and direction dims differ");
  if (l2_norm(h_org.values()) <= kNormEpsilon) {
    throw DegenerateVectorError("calibrate_state: hidden state has near-zero norm");
  }
  if (lambda_c == 0.0) return h_org;
  if (l2_norm(v_crc.values()) <= kNormEpsilon) {
    if (stats) ++stats->skipped_zero_direction;
    return h_org;
  }
  Vec out = h_org;
  calibrate_in_place(out.values(), l2_normalize(v_crc).values(), lambda_c, stats);
  return out;
}

HookSet crc_hooks(const ProbeCache& cache, const CalibConfig& config, std::shared_ptr<CalibrationStats> stats) {
  if (cache.layers() != config.intervention_layer) {
    throw ConfigError("probe cache has " + std::to_string(cache.layers()) + " layers, config expects L_c=" +
                      std::to_string(config.intervention_layer));
  }
  if (cache.creation_step != 0) throw ConfigError("probe cache was not created at step 0");
  HookSet hooks;
  const double lambda = config.lambda_c;
  for (int l = 1; l <= cache.layers(); ++l) {
    const Vec& v = cache.at(l);
    const bool usable = lambda != 0.0 && l2_norm(v.values()) > kNormEpsilon;
    Vec unit = usable ? config.crc_sign * l2_normalize(v) : Vec(v.dim());
    hooks.add(l, "crc@" + std::to_string(l), [unit = std::move(unit), usable, lambda, stats](LayerView& view) {
      for (std::size_t r = 0; r < view.hidden.rows(); ++r) {
        if (view.row_step(r) == 0) continue;
        if (!usable) {
          if (stats && lambda != 0.0) ++stats->skipped_zero_direction;
          continue;
        }
        calibrate_in_place(view.hidden.row(r), unit.values(), lambda, stats.get());
      }
    });
  }
  return hooks;
}

}  // namespace vtcal

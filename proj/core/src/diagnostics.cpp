#include "vtcal/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "vtcal/errors.hpp"

namespace vtcal {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double percentile(std::vector<double>& sorted, double q) {
  // Linear interpolation between order statistics.
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

Matrix query_rows(const Matrix& h, std::size_t first, std::size_t last) {
  Matrix out(last - first, h.cols());
  for (std::size_t r = first; r < last; ++r) std::copy(h.row(r).begin(), h.row(r).end(), out.row(r - first).begin());
  return out;
}

// 1/0 per question for vanilla answers on tokens transformed per scene.
template <class Transform>
std::vector<double> vanilla_correctness(const World& world, const ProbeTask& task, Transform transform) {
  std::vector<std::vector<std::size_t>> by_scene(task.scenes.size());
  for (std::size_t i = 0; i < task.questions.size(); ++i) by_scene.at(task.questions[i].scene).push_back(i);
  std::vector<double> correct(task.questions.size(), 0.0);
  const Pipeline none;
  for (std::size_t s = 0; s < task.scenes.size(); ++s) {
    if (by_scene[s].empty()) continue;
    const VisionTokens tokens = transform(s, encode_patches(task.scenes[s], world.encoder));
    std::vector<int> objects;
    for (std::size_t qi : by_scene[s]) objects.push_back(task.questions[qi].object);
    const auto answers = answer_questions(world, none, tokens, objects);
    for (std::size_t k = 0; k < by_scene[s].size(); ++k) {
      const Question& q = task.questions[by_scene[s][k]];
      correct[by_scene[s][k]] = answers[k].yes == q.expect_yes ? 1.0 : 0.0;
    }
  }
  return correct;
}

}  // namespace

AttentionTrace trace_visual_attention(const DecoderModel& model, const VisionTokens& vision,
                                      std::span<const int> query, int max_new, int layer) {
  if (layer < 1 || layer > model.config().num_layers) throw ConfigError("trace layer out of range");
  if (max_new < 1) throw ConfigError("trace needs max_new >= 1");
  const std::size_t first = vision.count() + query.size() - 1;
  const std::size_t nv = vision.count();
  const double heads = static_cast<double>(model.config().num_heads);
  std::vector<double> mass(static_cast<std::size_t>(max_new), 0.0);
  const AttentionObserver observer = [&](int l, int, std::size_t pos, std::span<const double> probs) {
    if (l != layer || pos < first || pos - first >= mass.size()) return;
    double m = 0.0;
    for (std::size_t j = 0; j < nv && j < probs.size(); ++j) m += probs[j];
    mass[pos - first] += m / heads;
  };
  GreedyOptions opt;
  opt.stop_at_end = false;
  opt.observer = &observer;
  AttentionTrace trace;
  trace.layer = layer;
  trace.tokens = greedy_decode(model, vision, query, HookSet{}, max_new, opt);
  for (double& m : mass) m = std::clamp(m, 0.0, 1.0);
  trace.mass = std::move(mass);
  return trace;
}

double kendall_tau(std::span<const double> y) {
  // tau-b against x = 0..n-1 (x has no ties).
  const std::size_t n = y.size();
  double concordant = 0.0, discordant = 0.0, ties_y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (y[j] > y[i]) {
        concordant += 1.0;
      } else if (y[j] < y[i]) {
        discordant += 1.0;
      } else {
        ties_y += 1.0;
      }
    }
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - (n > 0 ? 1 : 0)) / 2.0;
  const double denom = std::sqrt(pairs * (pairs - ties_y));
  return denom > 0.0 ? (concordant - discordant) / denom : 0.0;
}

double complementarity_overlap(const VisionTokens& v, const VisionTokens& v_aug, const Matrix& h_query) {
  if (v.dim() != v_aug.dim() || v.dim() != h_query.cols()) {
    throw ShapeError("complementarity_overlap: dims " + v.tokens.shape_string() + ", " +
                     v_aug.tokens.shape_string() + ", query " + h_query.shape_string());
  }
  if (v.count() != v_aug.count()) throw ShapeError("complementarity_overlap: token counts differ");
  if (h_query.rows() == 0) throw ShapeError("complementarity_overlap: empty query");
  const Matrix a = bank_attention(h_query, v.tokens);
  const Matrix b = bank_attention(h_query, v_aug.tokens);
  double total = 0.0;
  for (std::size_t r = 0; r < h_query.rows(); ++r) {
    const double na = l2_norm(a.row(r));
    const double nb = l2_norm(b.row(r));
    total += std::clamp(dot(a.row(r), b.row(r)) / (na * nb), 0.0, 1.0);
  }
  return total / static_cast<double>(h_query.rows());
}

std::string_view to_string(NegativeKind k) { return k == NegativeKind::pruned ? "pruned" : "masked_image"; }

double DistanceReport::mean(NegativeKind kind, int layer) const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& e : entries) {
    if (e.kind != kind || e.layer != layer) continue;
    s += e.distance;
    ++n;
  }
  if (n == 0) throw Error("distance report has no entries for this layer");
  return s / static_cast<double>(n);
}

DistanceReport distance_report(const World& world, const SyntheticScene& scene, std::span<const int> query,
                               const CalibConfig& config, const Rng& rng) {
  const VisionTokens v = encode_patches(scene, world.encoder);
  config.validate(world.model.config().num_layers, v.count());
  const int l_c = config.intervention_layer;
  const DecoderProbe probe(world.model);
  const auto origin = probe.probe_states(v, query, l_c, DeltaPosition::last);

  DistanceReport report;
  auto add = [&](NegativeKind kind, int sample, const VisionTokens& neg) {
    const auto states = probe.probe_states(neg, query, l_c, DeltaPosition::last);
    for (int l = 1; l <= l_c; ++l) {
      const auto i = static_cast<std::size_t>(l - 1);
      report.entries.push_back({l, kind, sample, l2_norm((origin[i] - states[i]).values())});
    }
  };
  const auto negatives =
      make_negatives(v, config.num_negatives, static_cast<std::size_t>(config.num_kept), rng.split(2));
  for (std::size_t k = 0; k < negatives.size(); ++k) add(NegativeKind::pruned, static_cast<int>(k), negatives[k]);
  const double fraction = config.effective_mask_fraction(v.count());
  for (int k = 0; k < config.num_negatives; ++k) {
    Rng mask_rng = rng.split(3).split(static_cast<std::uint64_t>(k));
    const SyntheticScene masked = mask_image(scene, fraction, mask_rng, world.encoder.patch());
    add(NegativeKind::masked_image, k, encode_patches(masked, world.encoder));
  }
  return report;
}

OverheadReport measure_overhead(const RunConfig& config, const World& world, const SyntheticScene& scene,
                                std::size_t scene_index, int max_new, int repeats) {
  if (max_new < 1 || repeats < 1) throw ConfigError("measure_overhead: max_new and repeats must be >= 1");
  RunConfig c = config;
  c.mode = Mode::unified;
  const VisionTokens tokens = encode_patches(scene, world.encoder);
  const auto prefix = question_prefix();
  GreedyOptions opt;
  opt.stop_at_end = false;

  auto time_vanilla = [&] {
    const auto t0 = Clock::now();
    greedy_decode(world.model, tokens, prefix, HookSet{}, max_new, opt);
    return seconds_since(t0);
  };
  auto time_pipeline = [&](double& probe) {
    const Pipeline p = assemble_pipeline(c, world, scene, tokens, scene_index);
    probe = p.probe_seconds;
    const auto t0 = Clock::now();
    greedy_decode(world.model, tokens, prefix, p.hooks, max_new, opt);
    return seconds_since(t0);
  };

  double probe = 0.0;
  time_vanilla();
  time_pipeline(probe);
  std::vector<double> vanilla, pipeline, probes;
  for (int r = 0; r < repeats; ++r) {
    vanilla.push_back(time_vanilla());
    pipeline.push_back(time_pipeline(probe));
    probes.push_back(probe);
  }
  OverheadReport out;
  out.max_new = max_new;
  out.vanilla_per_token = median(vanilla) / max_new;
  out.pipeline_per_token = median(pipeline) / max_new;
  out.probe_seconds = median(probes);
  out.ratio = out.pipeline_per_token / out.vanilla_per_token;
  out.amortized_probe_per_token = out.probe_seconds / max_new;
  return out;
}

Interval bootstrap_mean(std::span<const double> values, int resamples, const Rng& rng, double level) {
  if (values.empty()) throw Error("bootstrap of an empty sample");
  if (resamples < 1) throw ConfigError("bootstrap needs resamples >= 1");
  Rng r = rng;
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[r.uniform_int(values.size())];
    means.push_back(s / static_cast<double>(values.size()));
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  return {mean_of(values), percentile(means, tail), percentile(means, 1.0 - tail)};
}

std::vector<SweepPoint> pruning_sweep(const RunConfig& config, const World& world, const ProbeTask& task,
                                      std::span<const std::size_t> grid, int resamples) {
  if (grid.empty()) throw ConfigError("pruning sweep needs a grid");
  std::vector<std::size_t> keep(grid.begin(), grid.end());
  std::sort(keep.begin(), keep.end(), std::greater<>());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  const std::size_t n_v = config.world.num_vision_tokens();
  for (std::size_t n : keep) {
    if (n < 1 || n > n_v) throw ConfigError("n_keep " + std::to_string(n) + " outside [1, " + std::to_string(n_v) + "]");
  }

  std::vector<std::future<std::vector<double>>> jobs;
  for (std::size_t n : keep) {
    jobs.push_back(std::async(std::launch::async, [&, n] {
      return vanilla_correctness(world, task, [&](std::size_t s, const VisionTokens& v) {
        Rng r = Rng(config.seed).split(s).split(4);
        return prune_tokens(v, n, r);
      });
    }));
  }
  std::vector<std::vector<double>> correct;
  for (auto& j : jobs) correct.push_back(j.get());

  const Rng boot = Rng(config.seed).split(5);
  std::vector<SweepPoint> out;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    SweepPoint p;
    p.n_keep = keep[i];
    p.accuracy = bootstrap_mean(correct[i], resamples, boot.split(2 * i));
    if (i > 0) {
      std::vector<double> diff(correct[i].size());
      for (std::size_t q = 0; q < diff.size(); ++q) diff[q] = correct[i][q] - correct[i - 1][q];
      p.delta = bootstrap_mean(diff, resamples, boot.split(2 * i + 1));
    }
    out.push_back(p);
  }
  return out;
}

bool sweep_nonincreasing(std::span<const SweepPoint> sweep) {
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    if (sweep[i].delta.lo > 0.0) return false;
  }
  return true;
}

DiagnosticsBundle run_diagnostics(const RunConfig& config, const ProbeTask& task, const DiagnoseOptions& options) {
  config.validate();
  check_task(config, task);
  const World world = build_world(config.decoder, config.world);
  const CalibConfig& calib = config.calib;
  const int l_c = calib.intervention_layer;
  const auto prefix = question_prefix();

  DiagnosticsBundle b;
  b.fingerprint = config.fingerprint();
  b.seed = config.seed;
  b.trace_layer = l_c;
  const std::size_t n = std::min(options.scenes, task.scenes.size());
  for (std::size_t s = 0; s < n; ++s) {
    const SyntheticScene& scene = task.scenes[s];
    const VisionTokens v = encode_patches(scene, world.encoder);
    const Rng scene_rng = Rng(config.seed).split(s);

    b.traces.push_back(trace_visual_attention(world.model, v, prefix, options.trace_steps, l_c));
    b.taus.push_back(kendall_tau(b.traces.back().mass));

    Rng aug_rng = scene_rng.split(1);
    const VisionTokens v_aug = encode_patches(augment(scene, aug_rng, config.augment), world.encoder);
    const DecodeState state(world.model, v, prefix);
    const Matrix h = forward_to_layer(world.model, state, l_c - 1);
    b.overlaps.push_back(complementarity_overlap(v, v_aug, query_rows(h, v.count(), state.prefix_length())));

    b.distances.push_back(distance_report(world, scene, prefix, calib, scene_rng));
    if (calib.num_negatives > 0) {
      const auto& d = b.distances.back();
      b.distance_gaps.push_back(d.mean(NegativeKind::masked_image, l_c) - d.mean(NegativeKind::pruned, l_c));
    }
  }

  std::vector<std::size_t> grid = options.sweep_grid;
  if (grid.empty()) {
    const std::size_t n_v = config.world.num_vision_tokens();
    for (std::size_t k = n_v; k >= 1; k /= 2) grid.push_back(k);
    if (grid.back() != 1) grid.push_back(1);
  }
  b.sweep = pruning_sweep(config, world, task, grid, options.resamples);
  return b;
}

std::string diagnostics_csv(const DiagnosticsBundle& b) {
  std::string out = "metric,scene,layer,index,value\n";
  auto row = [&](std::string_view metric, std::string scene, std::string layer, std::string index, double value) {
    out += std::string(metric) + "," + scene + "," + layer + "," + index + "," + format_double(value) + "\n";
  };
  const std::string lt = std::to_string(b.trace_layer);
  for (std::size_t s = 0; s < b.traces.size(); ++s) {
    const std::string sc = std::to_string(s);
    for (std::size_t t = 0; t < b.traces[s].mass.size(); ++t) row("attention_mass", sc, lt, std::to_string(t + 1), b.traces[s].mass[t]);
    row("kendall_tau", sc, lt, "", b.taus[s]);
    row("overlap", sc, std::to_string(b.trace_layer - 1), "", b.overlaps[s]);
    for (const auto& e : b.distances[s].entries) {
      row(e.kind == NegativeKind::pruned ? "distance_pruned" : "distance_masked", sc, std::to_string(e.layer),
          std::to_string(e.sample), e.distance);
    }
  }
  for (const auto& p : b.sweep) {
    const std::string k = std::to_string(p.n_keep);
    row("sweep_accuracy", "", "", k, p.accuracy.mean);
    row("sweep_accuracy_lo", "", "", k, p.accuracy.lo);
    row("sweep_accuracy_hi", "", "", k, p.accuracy.hi);
    row("sweep_delta", "", "", k, p.delta.mean);
  }
  return out;
}

std::string diagnostics_json(const DiagnosticsBundle& b) {
  nlohmann::json j;
  j["fingerprint"] = b.fingerprint;
  j["seed"] = b.seed;
  j["scenes"] = b.traces.size();
  std::size_t nonpositive = 0;
  for (double t : b.taus) nonpositive += t <= 0.0 ? 1 : 0;
  j["attention_decay"] = {{"layer", b.trace_layer},
                          {"mean_tau", mean_of(b.taus)},
                          {"fraction_nonpositive", b.taus.empty() ? 0.0 : static_cast<double>(nonpositive) / static_cast<double>(b.taus.size())}};
  j["complementarity"] = {{"mean_overlap", mean_of(b.overlaps)}};
  if (!b.distance_gaps.empty()) {
    const Interval gap = bootstrap_mean(b.distance_gaps, 1000, Rng(b.seed).split(6));
    double pruned = 0.0, masked = 0.0;
    for (const auto& d : b.distances) {
      pruned += d.mean(NegativeKind::pruned, b.trace_layer);
      masked += d.mean(NegativeKind::masked_image, b.trace_layer);
    }
    const double n = static_cast<double>(b.distances.size());
    j["distance"] = {{"layer", b.trace_layer},
                     {"mean_pruned", pruned / n},
                     {"mean_masked", masked / n},
                     {"gap", {{"mean", gap.mean}, {"lo", gap.lo}, {"hi", gap.hi}}}};
  }
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& p : b.sweep) {
    sweep.push_back({{"n_keep", p.n_keep},
                     {"accuracy", p.accuracy.mean},
                     {"lo", p.accuracy.lo},
                     {"hi", p.accuracy.hi},
                     {"delta", {{"mean", p.delta.mean}, {"lo", p.delta.lo}, {"hi", p.delta.hi}}}});
  }
  j["pruning_sweep"] = {{"points", sweep}, {"nonincreasing", sweep_nonincreasing(b.sweep)}};
  return j.dump(2) + "\n";
}

void write_diagnostics(const DiagnosticsBundle& bundle, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "diagnostics.csv", diagnostics_csv(bundle));
  write_text_file(dir / "diagnostics.json", diagnostics_json(bundle));
}

}  // namespace vtcal

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vtcal/experiment.hpp"

namespace vtcal {

/// Head-averaged attention mass on the vision columns at one layer, for the
/// query position that produces generated token t = 1..T.
struct AttentionTrace {
  int layer = 0;
  std::vector<double> mass;
  std::vector<int> tokens;
};

// Vanilla greedy decode of exactly `max_new` tokens (END does not stop it).
AttentionTrace trace_visual_attention(const DecoderModel& model, const VisionTokens& vision,
                                      std::span<const int> query, int max_new, int layer);

// Kendall tau-b of `y` against its index; 0 when either side is constant.
double kendall_tau(std::span<const double> y);

/// Cosine between softmax(h V^T / sqrt d) and softmax(h V_aug^T / sqrt d),
/// averaged over the rows of `h_query`. Both are probability vectors, so the
/// result lies in [0, 1].
double complementarity_overlap(const VisionTokens& v, const VisionTokens& v_aug, const Matrix& h_query);

enum class NegativeKind { pruned, masked_image };
std::string_view to_string(NegativeKind k);

struct DistanceEntry {
  int layer = 0;
  NegativeKind kind = NegativeKind::pruned;
  int sample = 0;
  double distance = 0.0;  // L2 between last-position states at t = 0
};

struct DistanceReport {
  std::vector<DistanceEntry> entries;  // 2 * K * L_c

  double mean(NegativeKind kind, int layer) const;
};

/// K pruned-token negatives (N_h kept) against K masked-image variants
/// covering effective_mask_fraction of the image. Negatives come from
/// rng.split(2) and masks from rng.split(3).split(k), matching the run pipeline.
DistanceReport distance_report(const World& world, const SyntheticScene& scene, std::span<const int> query,
                               const CalibConfig& config, const Rng& rng);

struct OverheadReport {
  int max_new = 0;
  double vanilla_per_token = 0.0;   // seconds
  double pipeline_per_token = 0.0;  // decode with hooks, probe excluded
  double probe_seconds = 0.0;       // one-time cache construction
  double ratio = 0.0;               // pipeline / vanilla
  double amortized_probe_per_token = 0.0;
};

/// Medians over `repeats` timed runs after one warm-up of each path. The
/// pipeline is SVC + CRC (config.mode is ignored); `scene_index` picks the
/// random streams as in a task run.
OverheadReport measure_overhead(const RunConfig& config, const World& world, const SyntheticScene& scene,
                                std::size_t scene_index, int max_new, int repeats = 5);

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap of the mean.
Interval bootstrap_mean(std::span<const double> values, int resamples, const Rng& rng, double level = 0.95);

struct SweepPoint {
  std::size_t n_keep = 0;
  Interval accuracy;
  // Paired bootstrap of acc(this) - acc(previous, larger n_keep); zero for the first point.
  Interval delta;
};

/// Vanilla accuracy when each scene keeps only `n_keep` tokens (sampled from
/// Rng(config.seed).split(scene).split(4)). Grid values are visited from the
/// largest down and must lie in [1, N_v].
std::vector<SweepPoint> pruning_sweep(const RunConfig& config, const World& world, const ProbeTask& task,
                                      std::span<const std::size_t> grid, int resamples = 1000);

// True when no step towards fewer tokens raises accuracy beyond bootstrap noise.
bool sweep_nonincreasing(std::span<const SweepPoint> sweep);

/// Everything `vtcal diagnose` emits, for the first `scenes` scenes of a task.
struct DiagnosticsBundle {
  std::string fingerprint;
  std::uint64_t seed = 0;
  int trace_layer = 0;
  std::vector<AttentionTrace> traces;
  std::vector<double> taus;
  std::vector<double> overlaps;
  std::vector<DistanceReport> distances;
  std::vector<double> distance_gaps;  // per scene: mean masked - mean pruned at L_c
  std::vector<SweepPoint> sweep;
};

struct DiagnoseOptions {
  std::size_t scenes = 50;
  int trace_steps = 32;
  std::vector<std::size_t> sweep_grid;  // empty: N_v, N_v/2, N_v/4, ..., 1
  int resamples = 1000;
};

DiagnosticsBundle run_diagnostics(const RunConfig& config, const ProbeTask& task, const DiagnoseOptions& options = {});

/// diagnostics.csv (metric,scene,layer,index,value) and diagnostics.json; both
/// byte-stable for a fixed config.
void write_diagnostics(const DiagnosticsBundle& bundle, const std::filesystem::path& dir);
std::string diagnostics_csv(const DiagnosticsBundle& bundle);
std::string diagnostics_json(const DiagnosticsBundle& bundle);

}  // namespace vtcal

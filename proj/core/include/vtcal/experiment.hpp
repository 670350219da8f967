#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vtcal/calib_config.hpp"
#include "vtcal/crc.hpp"
#include "vtcal/decoder.hpp"
#include "vtcal/svc.hpp"
#include "vtcal/task.hpp"
#include "vtcal/vision.hpp"

namespace vtcal {

enum class Mode { vanilla, svc, crc, unified, naive_combo };
inline constexpr std::array<Mode, 5> kModes{Mode::vanilla, Mode::svc, Mode::crc, Mode::unified, Mode::naive_combo};
std::string_view to_string(Mode m);
Mode mode_from_string(std::string_view s);

// Decoder defaults for the bias task: the toy shape plus the prior-bias
// strength picked by the oracle sweep.
DecoderConfig bias_task_decoder();

/// Everything a run depends on. Keys under `io.` (paths) are excluded from the
/// fingerprint; everything else is hashed in canonical key order.
struct RunConfig {
  DecoderConfig decoder = bias_task_decoder();
  WorldSpec world;
  TaskSpec task;
  CalibConfig calib;
  AugmentConfig augment;
  Mode mode = Mode::unified;
  std::uint64_t seed = 1;
  std::string task_path;
  std::string output_dir;

  void validate() const;
  KeyValueFile to_kv() const;
  static RunConfig from_kv(const KeyValueFile& kv);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
  std::string fingerprint() const;
};

/// The frozen model side shared by every scene of a run.
struct World {
  ObjectCatalog catalog;
  PatchEncoder encoder;
  DecoderModel model;
};

World build_world(const DecoderConfig& decoder, const WorldSpec& world);

// Prefill query [BOS, ASK]; the object token is teacher-forced at step 1.
std::vector<int> question_prefix();

/// Per-scene hooks and artifacts for one mode.
struct Pipeline {
  HookSet hooks;
  std::optional<ProbeCache> cache;
  std::shared_ptr<const SynergyBank> bank;
  std::optional<VisionTokens> contrast;  // negative stream for the naive combination
  double contrast_weight = 0.0;
  std::shared_ptr<CalibrationStats> stats = std::make_shared<CalibrationStats>();
  double probe_seconds = 0.0;

  bool touches_logits() const { return contrast.has_value(); }
};

// Random streams are derived from (run seed, scene index) only, so every mode
// sees the same augmentation, negatives and mask. Stages with zero strength
// (lambda_s == 0, lambda_c == 0 or K == 0) are left out.
Pipeline assemble_pipeline(const RunConfig& config, const World& world, const SyntheticScene& scene,
                           const VisionTokens& tokens, std::size_t scene_index);

struct Answer {
  bool yes = false;
  double margin = 0.0;  // logit(yes) - logit(no)
};

/// Answers every object in `objects` for one scene; the step-0 prefill is
/// shared and each question branches off it.
std::vector<Answer> answer_questions(const World& world, const Pipeline& pipeline, const VisionTokens& tokens,
                                     std::span<const int> objects);

struct SplitMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double proxy_rate = 0.0;  // "yes" share on absent objects
  std::size_t n = 0;
};

SplitMetrics score(std::span<const Question> questions, std::span<const Answer> answers);

struct RunResult {
  Mode mode = Mode::vanilla;
  std::uint64_t seed = 0;
  std::string fingerprint;
  SplitMetrics overall;
  std::array<SplitMetrics, 3> splits{};
  double seconds = 0.0;
  double probe_seconds = 0.0;
  std::size_t calibrated_states = 0;
  std::size_t degenerate_states = 0;
};

// Throws ConfigError unless `task` was generated from config.world/config.task.
void check_task(const RunConfig& config, const ProbeTask& task);

/// Runs the configured mode on `task` (which must match config.world/task).
RunResult run_experiment(const RunConfig& config, const ProbeTask& task);
RunResult run_experiment(const RunConfig& config, const World& world, const ProbeTask& task);
// Loads config.task_path and checks its fingerprint against the config.
RunResult run_experiment(const RunConfig& config);

// Runs configurations concurrently; results come back sorted by fingerprint.
std::vector<RunResult> run_grid(std::span<const RunConfig> configs, const ProbeTask& task, unsigned workers = 0);

void sort_results(std::vector<RunResult>& results);

inline constexpr const char* kCsvHeader =
    "mode,seed,fingerprint,n_questions,accuracy,f1,proxy_rate,"
    "random_accuracy,random_f1,popular_accuracy,popular_f1,adversarial_accuracy,adversarial_f1";

/// Writes results.csv and summary.json (byte-stable) plus timing.json (wall clock) into `dir`.
void emit_report(std::span<const RunResult> results, const std::filesystem::path& dir);
std::string results_csv(std::span<const RunResult> results);
std::string results_json(std::span<const RunResult> results);
// Inverse of results_csv for the columns it carries; throws IoError on a bad header or row.
std::vector<RunResult> parse_results_csv(std::string_view text);

struct BiasSweepPoint {
  double beta = 0.0;
  double proxy_rate = 0.0;
  double accuracy = 0.0;
};

/// Vanilla proxy rate over a beta grid; `chosen` is the smallest beta reaching `target`.
struct BiasSweep {
  std::vector<BiasSweepPoint> points;
  std::optional<double> chosen;
};
BiasSweep sweep_prior_bias(const RunConfig& config, const ProbeTask& task, std::span<const double> grid,
                           double target);

}  // namespace vtcal

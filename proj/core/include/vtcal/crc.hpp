#pragma once

#include <atomic>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vtcal/calib_config.hpp"
#include "vtcal/decoder.hpp"
#include "vtcal/hooks.hpp"
#include "vtcal/probe_target.hpp"
#include "vtcal/rng.hpp"

namespace vtcal {

/// Per-layer directions v^(l) = mean_k (h_org^(l) - h_neg_k^(l)), l = 1..L_c,
/// computed once at step 0.
struct ProbeCache {
  std::vector<Vec> directions;
  int num_negatives = 0;
  int num_kept = 0;
  std::size_t creation_step = 0;
  std::string fingerprint;

  int layers() const { return static_cast<int>(directions.size()); }
  const Vec& at(int layer) const { return directions.at(static_cast<std::size_t>(layer - 1)); }

  // JSON; doubles are written in shortest round-trip form.
  void save(const std::filesystem::path& path) const;
  static ProbeCache load(const std::filesystem::path& path);
  friend bool operator==(const ProbeCache&, const ProbeCache&) = default;
};

// k pruned copies of v, sample i drawn from rng.split(i).
std::vector<VisionTokens> make_negatives(const VisionTokens& v, int k, std::size_t n_h, const Rng& rng);

class DecoderProbe final : public ProbeTarget {
 public:
  explicit DecoderProbe(const DecoderModel& model) : model_(model) {}
  int num_layers() const override { return model_.config().num_layers; }
  std::vector<Vec> probe_states(const VisionTokens& vision, std::span<const int> query, int up_to,
                                DeltaPosition position) const override;

 private:
  const DecoderModel& model_;
};

struct ProbeOptions {
  DeltaPosition position = DeltaPosition::last;
  bool parallel = true;
};

/// Hook-free probe passes over the original and each negative; differences are
/// averaged in sample order whatever order the passes finish in.
ProbeCache probe_directions(const ProbeTarget& target, const VisionTokens& v, std::span<const int> query,
                            std::span<const VisionTokens> negatives, int l_c, const ProbeOptions& options = {});
ProbeCache probe_directions(const DecoderModel& model, const VisionTokens& v, std::span<const int> query,
                            std::span<const VisionTokens> negatives, int l_c, const ProbeOptions& options = {});

struct CalibrationStats {
  std::atomic<std::size_t> applied{0};
  std::atomic<std::size_t> skipped_zero_direction{0};
  std::atomic<std::size_t> degenerate{0};  // |h_crc| < eps, left unchanged
};

/// Norm-preserving shift of h toward v:
/// out = normalize(h/|h| + lambda v/|v|) * |h|.
/// lambda == 0 or v == 0 returns h unchanged. Throws DegenerateVectorError when
/// |h| <= eps.
Vec calibrate_state(const Vec& h_org, const Vec& v_crc, double lambda_c, CalibrationStats* stats = nullptr);
void calibrate_in_place(std::span<double> h, std::span<const double> v_unit, double lambda_c,
                        CalibrationStats* stats = nullptr);

/// Hooks at layers 1..L_c calibrating every row that entered at step t > 0.
HookSet crc_hooks(const ProbeCache& cache, const CalibConfig& config,
                  std::shared_ptr<CalibrationStats> stats = nullptr);

}  // namespace vtcal

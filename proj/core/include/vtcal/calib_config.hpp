#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

#include "vtcal/kv_file.hpp"

namespace vtcal {

// Where the SVC blend lands. post_layer: query H^(L_c-1), blend into H^(L_c)
// after layer L_c runs. pre_layer: blend into H^(L_c-1) (its own query) so
// layer L_c attends over the blended states.
enum class SvcPlacement { post_layer, pre_layer };

// Which hidden vector a probe pass reports: the final prefix position, or the
// mean over the text-query positions.
enum class DeltaPosition { last, query_mean };

struct CalibConfig {
  int intervention_layer = 4;  // L_c
  double lambda_s = 0.06;
  double lambda_c = 0.1;
  int num_negatives = 3;  // K
  int num_kept = 1;       // N_h; ceil(5 * 36 / 576)
  std::uint64_t seed = 17;
  bool svc_prefill = true;  // also blend prefix rows at step 0
  SvcPlacement svc_placement = SvcPlacement::post_layer;
  DeltaPosition delta_position = DeltaPosition::last;
  double crc_sign = 1.0;  // +1 adds v_norm, -1 subtracts it
  bool parallel_probes = true;
  double naive_contrast_weight = 1.0;
  // Fraction of image area masked for the masked-image comparison; <= 0 means 1 - N_h/N_v.
  double mask_fraction = 0.0;

  // Throws ConfigError. `num_layers`/`num_vision` of 0 skip the range checks
  // that need the model.
  void validate(int num_layers = 0, std::size_t num_vision = 0) const;
  double effective_mask_fraction(std::size_t num_vision) const;

  void write(KeyValueFile& kv, std::string_view prefix = "calib.") const;
  void read(const KeyValueFile& kv, std::string_view prefix = "calib.");
  static bool is_key(std::string_view key, std::string_view prefix = "calib.");
};

// ceil(5 * N_v / 576), at least 1.
int scaled_num_kept(std::size_t num_vision);

}  // namespace vtcal

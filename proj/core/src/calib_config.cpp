#include "vtcal/calib_config.hpp"

#include <cmath>
#include <string>

#include "vtcal/errors.hpp"

namespace vtcal {

int scaled_num_kept(std::size_t num_vision) {
  const std::size_t n = (5 * num_vision + 575) / 576;
  return static_cast<int>(n < 1 ? 1 : n);
}

void CalibConfig::validate(int num_layers, std::size_t num_vision) const {
  if (intervention_layer < 1) throw ConfigError("calib.intervention_layer must be >= 1");
  if (num_layers > 0 && intervention_layer > num_layers) {
    throw ConfigError("calib.intervention_layer " + std::to_string(intervention_layer) + " exceeds model depth " +
                      std::to_string(num_layers));
  }
  if (svc_placement == SvcPlacement::pre_layer && intervention_layer < 2) {
    throw ConfigError("pre-layer SVC placement needs calib.intervention_layer >= 2");
  }
  if (!(lambda_s >= 0.0 && lambda_s <= 1.0)) throw ConfigError("calib.lambda_s must lie in [0, 1]");
  if (!(lambda_c >= 0.0) || !std::isfinite(lambda_c)) throw ConfigError("calib.lambda_c must be finite and >= 0");
  if (num_negatives < 0) throw ConfigError("calib.num_negatives must be >= 0");
  if (num_kept < 1) throw ConfigError("calib.num_kept must be >= 1");
  if (num_vision > 0 && static_cast<std::size_t>(num_kept) >= num_vision) {
    throw ConfigError("calib.num_kept must be below the vision token count " + std::to_string(num_vision));
  }
  if (crc_sign != 1.0 && crc_sign != -1.0) throw ConfigError("calib.crc_sign must be 1 or -1");
  if (!std::isfinite(naive_contrast_weight) || naive_contrast_weight < 0.0) {
    throw ConfigError("calib.naive_contrast_weight must be finite and >= 0");
  }
  if (!(mask_fraction <= 1.0)) throw ConfigError("calib.mask_fraction must be <= 1");
}

double CalibConfig::effective_mask_fraction(std::size_t num_vision) const {
  if (mask_fraction > 0.0) return mask_fraction;
  return 1.0 - static_cast<double>(num_kept) / static_cast<double>(num_vision);
}

void CalibConfig::write(KeyValueFile& kv, std::string_view prefix) const {
  const std::string p(prefix);
  kv.set(p + "intervention_layer", intervention_layer);
  kv.set(p + "lambda_s", lambda_s);
  kv.set(p + "lambda_c", lambda_c);
  kv.set(p + "num_negatives", num_negatives);
  kv.set(p + "num_kept", num_kept);
  kv.set(p + "seed", seed);
  kv.set(p + "svc_prefill", svc_prefill);
  kv.set(p + "svc_placement", std::string(svc_placement == SvcPlacement::post_layer ? "post" : "pre"));
  kv.set(p + "delta_position", std::string(delta_position == DeltaPosition::last ? "last" : "query_mean"));
  kv.set(p + "crc_sign", crc_sign);
  kv.set(p + "parallel_probes", parallel_probes);
  kv.set(p + "naive_contrast_weight", naive_contrast_weight);
  kv.set(p + "mask_fraction", mask_fraction);
}

void CalibConfig::read(const KeyValueFile& kv, std::string_view prefix) {
  const std::string p(prefix);
  kv.read(p + "intervention_layer", intervention_layer);
  kv.read(p + "lambda_s", lambda_s);
  kv.read(p + "lambda_c", lambda_c);
  kv.read(p + "num_negatives", num_negatives);
  kv.read(p + "num_kept", num_kept);
  kv.read(p + "seed", seed);
  kv.read(p + "svc_prefill", svc_prefill);
  if (auto v = kv.find(p + "svc_placement")) {
    if (*v == "post") svc_placement = SvcPlacement::post_layer;
    else if (*v == "pre") svc_placement = SvcPlacement::pre_layer;
    else throw ConfigError(p + "svc_placement: expected post or pre, got '" + *v + "'");
  }
  if (auto v = kv.find(p + "delta_position")) {
    if (*v == "last") delta_position = DeltaPosition::last;
    else if (*v == "query_mean") delta_position = DeltaPosition::query_mean;
    else throw ConfigError(p + "delta_position: expected last or query_mean, got '" + *v + "'");
  }
  kv.read(p + "crc_sign", crc_sign);
  kv.read(p + "parallel_probes", parallel_probes);
  kv.read(p + "naive_contrast_weight", naive_contrast_weight);
  kv.read(p + "mask_fraction", mask_fraction);
}

bool CalibConfig::is_key(std::string_view key, std::string_view prefix) {
  KeyValueFile probe;
  CalibConfig{}.write(probe, prefix);
  return probe.contains(key);
}

}  // namespace vtcal

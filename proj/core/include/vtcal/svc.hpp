#pragma once

#include <memory>

#include "vtcal/calib_config.hpp"
#include "vtcal/hooks.hpp"
#include "vtcal/numeric.hpp"
#include "vtcal/vision_tokens.hpp"

namespace vtcal {

/// [V; V_aug]: the original tokens followed by the augmented view.
struct SynergyBank {
  Matrix tokens;
  std::size_t original_rows = 0;
  std::size_t augmented_rows = 0;

  std::size_t rows() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

SynergyBank build_bank(const VisionTokens& v, const VisionTokens& v_aug);

// softmax(Q B^T / sqrt(d)), one row per query row.
Matrix bank_attention(const Matrix& queries, const Matrix& bank_tokens);

// C = softmax(H_prev V_syn^T / sqrt(d)) V_syn.
Matrix visual_context(const Matrix& h_prev, const SynergyBank& bank);
Matrix visual_context(const Matrix& h_prev, const Matrix& bank_tokens);

// (1 - lambda) H + lambda C.
Matrix blend(const Matrix& h, const Matrix& c, double lambda_s);

/// SVC as a post-layer hook. Post-layer placement sits at L_c and queries with
/// the layer's input H^(L_c-1); pre-layer placement sits at L_c-1 and queries
/// with its own output. Rows from the step-0 prefix are blended only when
/// config.svc_prefill is set.
LayerHook svc_hook(const CalibConfig& config, std::shared_ptr<const SynergyBank> bank);

}  // namespace vtcal

#include "vtcal/svc.hpp"

#include <cmath>

#include "vtcal/errors.hpp"

namespace vtcal {

SynergyBank build_bank(const VisionTokens& v, const VisionTokens& v_aug) {
  if (v.provenance != TokenProvenance::original || v_aug.provenance != TokenProvenance::augmented) {
    throw Error(std::string("synergy bank expects original + augmented tokens, got ") +
                std::string(to_string(v.provenance)) + " + " + std::string(to_string(v_aug.provenance)));
  }
  if (v.dim() != v_aug.dim()) {
    throw ShapeError("synergy bank: token dims differ (" + v.tokens.shape_string() + " vs " +
                     v_aug.tokens.shape_string() + ")");
  }
  SynergyBank bank;
  bank.tokens = vstack(v.tokens, v_aug.tokens);
  bank.original_rows = v.count();
  bank.augmented_rows = v_aug.count();
  return bank;
}

Matrix bank_attention(const Matrix& queries, const Matrix& bank_tokens) {
  if (queries.cols() != bank_tokens.cols()) {
    throw ShapeError("bank attention: query " + queries.shape_string() + " vs bank " + bank_tokens.shape_string());
  }
  Matrix scores = matmul_transposed(queries, bank_tokens);
  const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  for (double& s : scores.values()) s *= scale;
  return softmax_rows(scores);
}

Matrix visual_context(const Matrix& h_prev, const Matrix& bank_tokens) {
  return matmul(bank_attention(h_prev, bank_tokens), bank_tokens);
}

Matrix visual_context(const Matrix& h_prev, const SynergyBank& bank) { return visual_context(h_prev, bank.tokens); }

Matrix blend(const Matrix& h, const Matrix& c, double lambda_s) {
  if (h.rows() != c.rows() || h.cols() != c.cols()) {
    throw ShapeError("blend: " + h.shape_string() + " vs " + c.shape_string());
  }
  if (!(lambda_s >= 0.0 && lambda_s <= 1.0)) throw ConfigError("blend: lambda_s must lie in [0, 1]");
  Matrix out(h.rows(), h.cols());
  const auto hv = h.values();
  const auto cv = c.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = (1.0 - lambda_s) * hv[i] + lambda_s * cv[i];
  return out;
}

LayerHook svc_hook(const CalibConfig& config, std::shared_ptr<const SynergyBank> bank) {
  if (!bank || bank->rows() == 0) throw Error("svc hook: empty synergy bank");
  const bool pre = config.svc_placement == SvcPlacement::pre_layer;
  const int layer = pre ? config.intervention_layer - 1 : config.intervention_layer;
  if (layer < 1) throw ConfigError("svc hook: no layer below L_c for pre-layer placement");
  const double lambda = config.lambda_s;
  const bool prefill = config.svc_prefill;
  LayerHook hook;
  hook.layer = layer;
  hook.name = "svc@" + std::to_string(layer);
  hook.fn = [bank, lambda, prefill, pre, name = hook.name](LayerView& view) {
    const Matrix& query_src = pre ? view.hidden : view.input;
    if (query_src.rows() != view.hidden.rows() || query_src.cols() != bank->dim()) {
      throw ShapeError(name + ": missing or mismatched layer L_c-1 capture " + query_src.shape_string());
    }
    std::size_t first = 0;
    if (!prefill) {
      while (first < view.hidden.rows() && view.row_step(first) == 0) ++first;
    }
    if (first == view.hidden.rows()) return;
    Matrix rows(0, view.hidden.cols());
    Matrix queries(0, view.hidden.cols());
    for (std::size_t r = first; r < view.hidden.rows(); ++r) {
      rows.append_row(view.hidden.row(r));
      queries.append_row(query_src.row(r));
    }
    const Matrix blended = blend(rows, visual_context(queries, *bank), lambda);
    for (std::size_t r = first; r < view.hidden.rows(); ++r) {
      const auto src = blended.row(r - first);
      std::copy(src.begin(), src.end(), view.hidden.row(r).begin());
    }
  };
  return hook;
}

}  // namespace vtcal

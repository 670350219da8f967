#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vtcal/decoder.hpp"
#include "vtcal/probe_target.hpp"

namespace vtcal {

/// Linear stand-in whose probe-position state at layer l is
///   h^(l) = A_l sum_i V_i + S_l mean(embed(Q)) + beta b_l + offset,
/// a visual term linear in the token multiset plus a shared query/bias term.
/// Differences between two vision prefixes therefore depend on A_l only.
class LinearDiagnosticModel final : public ProbeTarget {
 public:
  int num_layers() const override { return static_cast<int>(effect_.size()); }
  int dim() const { return static_cast<int>(readout_.cols()); }

  const Matrix& effect_map(int layer) const { return effect_.at(static_cast<std::size_t>(layer - 1)); }
  const Matrix& query_map(int layer) const { return query_map_.at(static_cast<std::size_t>(layer - 1)); }
  const Matrix& readout() const { return readout_; }

  Vec visual_effect(int layer, const VisionTokens& vision) const;
  Vec shared_effect(int layer, std::span<const int> query) const;
  Vec hidden(int layer, const VisionTokens& vision, std::span<const int> query) const;
  Vec logits(const VisionTokens& vision, std::span<const int> query) const;

  // Same model with `offset` added to every layer's shared term.
  LinearDiagnosticModel with_shared_offset(const Vec& offset) const;

  // The probe position is ignored: the model has a single probe state.
  std::vector<Vec> probe_states(const VisionTokens& vision, std::span<const int> query, int up_to,
                                DeltaPosition position) const override;

  friend LinearDiagnosticModel build_linear_diagnostic(const DecoderConfig& config, std::uint64_t seed);

 private:
  std::vector<Matrix> effect_;
  std::vector<Matrix> query_map_;
  std::vector<Vec> bias_dir_;
  Matrix embedding_;
  Matrix readout_;
  Vec offset_;
  double beta_ = 0.0;
};

LinearDiagnosticModel build_linear_diagnostic(const DecoderConfig& config, std::uint64_t seed);

}  // namespace vtcal

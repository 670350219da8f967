#pragma once

#include <string_view>

#include "vtcal/numeric.hpp"

namespace vtcal {

enum class TokenProvenance { original, augmented, pruned, masked_image };

std::string_view to_string(TokenProvenance p);

/// Encoded image patches, one row per patch (N_v x d).
struct VisionTokens {
  Matrix tokens;
  TokenProvenance provenance = TokenProvenance::original;

  std::size_t count() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

}  // namespace vtcal

#pragma once

#include <span>
#include <vector>

#include "vtcal/calib_config.hpp"
#include "vtcal/numeric.hpp"
#include "vtcal/vision_tokens.hpp"

namespace vtcal {

/// Anything that can report step-0 hidden vectors for layers 1..up_to given a
/// vision prefix and a query. Implementations must be safe to call
/// concurrently.
class ProbeTarget {
 public:
  virtual ~ProbeTarget() = default;
  virtual int num_layers() const = 0;
  virtual std::vector<Vec> probe_states(const VisionTokens& vision, std::span<const int> query, int up_to,
                                        DeltaPosition position) const = 0;
};

}  // namespace vtcal

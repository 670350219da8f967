#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vtcal/numeric.hpp"

namespace vtcal {

/// What a post-layer hook sees: the rows computed in this forward call.
///
/// Under cached decoding a call covers the whole prefix at step 0 and a single
/// new row afterwards; under full recomputation it covers every position.
/// `row_step(i)` recovers the generation step at which row i entered the
/// sequence, so hooks behave the same on both paths.
struct LayerView {
  int layer = 0;
  std::size_t step = 0;
  std::size_t first_position = 0;
  std::size_t prefix_length = 0;
  const Matrix& input;  // H^(layer-1) for the same rows
  Matrix& hidden;       // H^(layer), may be modified in place

  std::size_t position(std::size_t row) const { return first_position + row; }
  std::size_t row_step(std::size_t row) const {
    const std::size_t pos = position(row);
    return pos < prefix_length ? 0 : pos - prefix_length + 1;
  }
};

using HookFn = std::function<void(LayerView&)>;

struct LayerHook {
  int layer = 0;
  std::string name;
  HookFn fn;
};

/// Post-layer callbacks keyed by layer index (1-based). Hooks registered on
/// the same layer run in registration order.
class HookSet {
 public:
  void add(int layer, std::string name, HookFn fn);
  void add(LayerHook hook) { add(hook.layer, std::move(hook.name), std::move(hook.fn)); }

  bool empty() const { return entries_.empty(); }
  std::size_t size() const { return entries_.size(); }
  int max_layer() const;
  bool has_layer(int layer) const;
  std::vector<std::string> names() const;

  // Runs the hooks for view.layer. Throws ShapeError naming the hook if it
  // changes the row/column count, NumericError if it leaves non-finite values.
  void apply(LayerView& view) const;

  // Appends every hook of `other` after this set's hooks.
  void merge(const HookSet& other);

 private:
  struct Entry {
    int layer;
    std::string name;
    HookFn fn;
  };
  std::vector<Entry> entries_;
};

// Returns the hidden rows unchanged; used for hook-neutrality checks.
HookFn identity_hook();

/// Attention probabilities for one (layer, head, query position). `probs`
/// spans positions 0..position inclusive.
using AttentionObserver =
    std::function<void(int layer, int head, std::size_t position, std::span<const double> probs)>;

}  // namespace vtcal

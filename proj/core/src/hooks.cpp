#include "vtcal/hooks.hpp"

#include <algorithm>

#include "vtcal/errors.hpp"
#include "vtcal/vision_tokens.hpp"

namespace vtcal {

std::string_view to_string(TokenProvenance p) {
  switch (p) {
    case TokenProvenance::original: return "original";
    case TokenProvenance::augmented: return "augmented";
    case TokenProvenance::pruned: return "pruned";
    case TokenProvenance::masked_image: return "masked-image";
  }
  return "unknown";
}

void HookSet::add(int layer, std::string name, HookFn fn) {
  if (layer < 1) throw Error("hook '" + name + "': layer index must be >= 1");
  if (!fn) throw Error("hook '" + name + "': empty callback");
  entries_.push_back({layer, std::move(name), std::move(fn)});
}

int HookSet::max_layer() const {
  int top = 0;
  for (const auto& e : entries_) top = std::max(top, e.layer);
  return top;
}

bool HookSet::has_layer(int layer) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.layer == layer; });
}

std::vector<std::string> HookSet::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void HookSet::apply(LayerView& view) const {
  for (const auto& e : entries_) {
    if (e.layer != view.layer) continue;
    const std::size_t rows = view.hidden.rows();
    const std::size_t cols = view.hidden.cols();
    e.fn(view);
    if (view.hidden.rows() != rows || view.hidden.cols() != cols) {
      throw ShapeError("hook '" + e.name + "' at layer " + std::to_string(e.layer) +
                       " changed hidden shape to " + view.hidden.shape_string());
    }
    require_finite(view.hidden.values(), ("hook '" + e.name + "'").c_str());
  }
}

void HookSet::merge(const HookSet& other) {
  entries_.insert(entries_.end(), other.entries_.begin(), other.entries_.end());
}

HookFn identity_hook() {
  return [](LayerView&) {};
}

}  // namespace vtcal

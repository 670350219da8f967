#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vtcal/decoder.hpp"
#include "vtcal/numeric.hpp"
#include "vtcal/rng.hpp"
#include "vtcal/vision_tokens.hpp"

namespace vtcal {

/// H x W x C image with values in [0, 1], stored row-major with interleaved channels.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }

  friend bool operator==(const Image&, const Image&) = default;
};

enum class ShapeKind { rectangle, disk, diamond };

struct ObjectAppearance {
  int id = 0;
  int group = 0;
  ShapeKind shape = ShapeKind::rectangle;
  std::array<double, 3> color{};
  std::vector<double> pattern;  // additive patch x patch x 3 texture, tiled on the absolute pixel grid
};

/// Fixed object vocabulary. Objects come in co-occurrence groups whose members
/// share a base colour, which makes same-group distractors the hard ones.
class ObjectCatalog {
 public:
  static ObjectCatalog build(int num_objects, int patch, std::uint64_t seed, int group_size = 4);

  int size() const { return static_cast<int>(objects_.size()); }
  int patch() const { return patch_; }
  int group_size() const { return group_size_; }
  int num_groups() const { return (size() + group_size_ - 1) / group_size_; }
  const ObjectAppearance& at(int id) const { return objects_.at(static_cast<std::size_t>(id)); }
  std::vector<int> group_members(int group) const;

 private:
  int patch_ = 8;
  int group_size_ = 4;
  std::vector<ObjectAppearance> objects_;
};

struct SceneObject {
  int id = 0;
  int top = 0;  // pixel bounding box
  int left = 0;
  int height = 0;
  int width = 0;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

enum class SceneKind { original, augmented, masked };

struct SyntheticScene {
  Image image;
  std::vector<SceneObject> objects;
  std::uint64_t seed = 0;
  SceneKind kind = SceneKind::original;

  std::vector<int> object_ids() const;
  bool contains(int id) const;
};

struct SceneSpec {
  int num_objects = 3;
  int height = 48;
  int width = 48;
  int max_box_patches = 2;  // objects span 1..max_box_patches patches per side
  std::uint64_t seed = 0;
};

/// Deterministic scene: background texture plus `num_objects` distinct objects
/// placed on the patch grid without overlap. Object choice favours one
/// co-occurrence group and, within it, low-index ("popular") members.
SyntheticScene generate_scene(const SceneSpec& spec, const ObjectCatalog& catalog);

struct AugmentConfig {
  double flip_probability = 0.5;
  double blur_sigma = 5.0;     // "radius 5" read as sigma
  double blur_truncate = 3.0;  // kernel half-width = ceil(truncate * sigma)
  double noise_intensity = 0.2;
  double salt_fraction = 0.5;  // share of corrupted pixels set to 1
};

/// Horizontal flip (probability p), Gaussian blur, then salt-and-pepper noise.
SyntheticScene augment(const SyntheticScene& scene, Rng& rng, const AugmentConfig& config = {});

Image flip_horizontal(const Image& image);
std::vector<double> gaussian_kernel(double sigma, double truncate);
// Separable blur with edge replication.
Image gaussian_blur(const Image& image, double sigma, double truncate);
Image salt_and_pepper(const Image& image, double intensity, double salt_fraction, Rng& rng);

/// Fixed seeded affine map from flattened patch pixels (centred at 0.5) to
/// d-dimensional tokens. The bias is shared by every token.
class PatchEncoder {
 public:
  static PatchEncoder build(int patch, int channels, int dim, std::uint64_t seed,
                            double content_scale = 2.5, double bias_norm = 1.0);

  int patch() const { return patch_; }
  int channels() const { return channels_; }
  int dim() const { return static_cast<int>(weight_.rows()); }
  const Matrix& weight() const { return weight_; }
  const Vec& bias() const { return bias_; }

  Vec encode_patch(std::span<const double> flat_patch) const;
  // Token of a patch fully covered by the object.
  Vec prototype(const ObjectAppearance& object) const;

 private:
  int patch_ = 8;
  int channels_ = 3;
  Matrix weight_;
  Vec bias_;
};

VisionTokens encode_patches(const SyntheticScene& scene, const PatchEncoder& encoder);

VisualAlignment alignment_for(const PatchEncoder& encoder, const ObjectCatalog& catalog);

/// Uniform sample of `n_keep` rows without replacement, order preserved.
VisionTokens prune_tokens(const VisionTokens& v, std::size_t n_keep, Rng& rng);

/// Replaces max(1, round(fraction * blocks)) randomly chosen patch-sized
/// blocks with uniform noise.
SyntheticScene mask_image(const SyntheticScene& scene, double fraction, Rng& rng, int block = 8);

// Binary PPM (8-bit) plus JSON sidecar `<stem>.json`; the sidecar round-trips exactly.
void save_scene(const SyntheticScene& scene, const std::filesystem::path& stem);
SyntheticScene load_scene(const std::filesystem::path& stem);

}  // namespace vtcal

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "vtcal/kv_file.hpp"
#include "vtcal/vision.hpp"

namespace vtcal {

/// The fixed "world": object vocabulary, scene geometry and vision encoder.
struct WorldSpec {
  int num_objects = 16;
  int group_size = 4;
  int image_size = 48;
  int patch = 8;
  std::uint64_t catalog_seed = 11;
  std::uint64_t encoder_seed = 12;
  double content_scale = 2.5;
  double bias_norm = 1.0;

  std::size_t num_vision_tokens() const {
    const auto g = static_cast<std::size_t>(image_size / patch);
    return g * g;
  }
  void validate() const;
  void write(KeyValueFile& kv, std::string_view prefix = "world.") const;
  void read(const KeyValueFile& kv, std::string_view prefix = "world.");
  static bool is_key(std::string_view key, std::string_view prefix = "world.");
};

struct TaskSpec {
  int num_scenes = 50;
  int objects_per_scene = 3;
  int pairs_per_split = 3;  // yes/no question pairs per scene and split
  int max_box_patches = 2;
  std::uint64_t seed = 2024;

  void validate(const WorldSpec& world) const;
  void write(KeyValueFile& kv, std::string_view prefix = "task.") const;
  void read(const KeyValueFile& kv, std::string_view prefix = "task.");
  static bool is_key(std::string_view key, std::string_view prefix = "task.");
};

enum class Split { random, popular, adversarial };
inline constexpr std::array<Split, 3> kSplits{Split::random, Split::popular, Split::adversarial};
std::string_view to_string(Split s);
Split split_from_string(std::string_view s);

struct Question {
  int scene = 0;
  int object = 0;
  bool expect_yes = false;
  Split split = Split::random;

  friend bool operator==(const Question&, const Question&) = default;
};

/// Balanced yes/no object-presence questions over seeded scenes. "No"
/// distractors come from uniform absent ids (random), the most frequent absent
/// ids over the task (popular), or the absent ids co-occurring most with the
/// scene's objects (adversarial).
struct ProbeTask {
  WorldSpec world;
  TaskSpec spec;
  std::vector<SyntheticScene> scenes;
  std::vector<Question> questions;

  std::string fingerprint() const;  // of world + task spec
  void save(const std::filesystem::path& path) const;
  // Regenerates the scenes from their seeds and checks them against the stored object lists.
  static ProbeTask load(const std::filesystem::path& path);
};

ObjectCatalog build_catalog(const WorldSpec& world);
PatchEncoder build_encoder(const WorldSpec& world, int hidden_dim);

ProbeTask build_task(const WorldSpec& world, const TaskSpec& spec);

}  // namespace vtcal

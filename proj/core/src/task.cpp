#include "vtcal/task.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "vtcal/errors.hpp"

namespace vtcal {

void WorldSpec::validate() const {
  if (num_objects < 1 || group_size < 1) throw ConfigError("world.num_objects and world.group_size must be positive");
  if (patch < 1 || image_size < patch || image_size % patch != 0) {
    throw ConfigError("world.image_size must be a positive multiple of world.patch");
  }
}

void WorldSpec::write(KeyValueFile& kv, std::string_view prefix) const {
  const std::string p(prefix);
  kv.set(p + "num_objects", num_objects);
  kv.set(p + "group_size", group_size);
  kv.set(p + "image_size", image_size);
  kv.set(p + "patch", patch);
  kv.set(p + "catalog_seed", catalog_seed);
  kv.set(p + "encoder_seed", encoder_seed);
  kv.set(p + "content_scale", content_scale);
  kv.set(p + "bias_norm", bias_norm);
}

void WorldSpec::read(const KeyValueFile& kv, std::string_view prefix) {
  const std::string p(prefix);
  kv.read(p + "num_objects", num_objects);
  kv.read(p + "group_size", group_size);
  kv.read(p + "image_size", image_size);
  kv.read(p + "patch", patch);
  kv.read(p + "catalog_seed", catalog_seed);
  kv.read(p + "encoder_seed", encoder_seed);
  kv.read(p + "content_scale", content_scale);
  kv.read(p + "bias_norm", bias_norm);
}

bool WorldSpec::is_key(std::string_view key, std::string_view prefix) {
  KeyValueFile probe;
  WorldSpec{}.write(probe, prefix);
  return probe.contains(key);
}

void TaskSpec::validate(const WorldSpec& world) const {
  if (num_scenes < 1) throw ConfigError("task.num_scenes must be >= 1");
  if (objects_per_scene < 1) throw ConfigError("task.objects_per_scene must be >= 1");
  if (pairs_per_split < 1 || pairs_per_split > objects_per_scene) {
    throw ConfigError("task.pairs_per_split must lie in [1, task.objects_per_scene]");
  }
  if (world.num_objects - objects_per_scene < pairs_per_split) {
    throw ConfigError("vocabulary of " + std::to_string(world.num_objects) + " objects is too small for " +
                      std::to_string(pairs_per_split) + " distractors next to " +
                      std::to_string(objects_per_scene) + " present objects");
  }
}

void TaskSpec::write(KeyValueFile& kv, std::string_view prefix) const {
  const std::string p(prefix);
  kv.set(p + "num_scenes", num_scenes);
  kv.set(p + "objects_per_scene", objects_per_scene);
  kv.set(p + "pairs_per_split", pairs_per_split);
  kv.set(p + "max_box_patches", max_box_patches);
  kv.set(p + "seed", seed);
}

void TaskSpec::read(const KeyValueFile& kv, std::string_view prefix) {
  const std::string p(prefix);
  kv.read(p + "num_scenes", num_scenes);
  kv.read(p + "objects_per_scene", objects_per_scene);
  kv.read(p + "pairs_per_split", pairs_per_split);
  kv.read(p + "max_box_patches", max_box_patches);
  kv.read(p + "seed", seed);
}

bool TaskSpec::is_key(std::string_view key, std::string_view prefix) {
  KeyValueFile probe;
  TaskSpec{}.write(probe, prefix);
  return probe.contains(key);
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::random: return "random";
    case Split::popular: return "popular";
    case Split::adversarial: return "adversarial";
  }
  return "random";
}

Split split_from_string(std::string_view s) {
  for (Split x : kSplits)
    if (to_string(x) == s) return x;
  throw ConfigError("unknown split '" + std::string(s) + "'");
}

ObjectCatalog build_catalog(const WorldSpec& world) {
  world.validate();
  return ObjectCatalog::build(world.num_objects, world.patch, world.catalog_seed, world.group_size);
}

PatchEncoder build_encoder(const WorldSpec& world, int hidden_dim) {
  world.validate();
  return PatchEncoder::build(world.patch, 3, hidden_dim, world.encoder_seed, world.content_scale, world.bias_norm);
}

namespace {

// Absent ids ranked by descending score, ties to the lowest id.
std::vector<int> top_absent(const std::vector<double>& score, const SyntheticScene& scene, int count) {
  std::vector<int> ids;
  for (int id = 0; id < static_cast<int>(score.size()); ++id)
    if (!scene.contains(id)) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return score[a] > score[b]; });
  ids.resize(static_cast<std::size_t>(count));
  return ids;
}

KeyValueFile spec_kv(const WorldSpec& world, const TaskSpec& spec) {
  KeyValueFile kv;
  world.write(kv);
  spec.write(kv);
  return kv;
}

}  // namespace

std::string ProbeTask::fingerprint() const { return fingerprint_of(spec_kv(world, spec).serialize()); }

ProbeTask build_task(const WorldSpec& world, const TaskSpec& spec) {
  world.validate();
  spec.validate(world);
  const ObjectCatalog catalog = build_catalog(world);
  ProbeTask task;
  task.world = world;
  task.spec = spec;

  const Rng root(spec.seed);
  for (int i = 0; i < spec.num_scenes; ++i) {
    Rng r = root.split(static_cast<std::uint64_t>(i));
    SceneSpec ss;
    ss.num_objects = spec.objects_per_scene;
    ss.height = ss.width = world.image_size;
    ss.max_box_patches = spec.max_box_patches;
    ss.seed = r.next_u64();
    task.scenes.push_back(generate_scene(ss, catalog));
  }

  const auto n = static_cast<std::size_t>(world.num_objects);
  std::vector<double> frequency(n, 0.0);
  std::vector<std::vector<double>> cooccur(n, std::vector<double>(n, 0.0));
  for (const auto& s : task.scenes) {
    const auto ids = s.object_ids();
    for (int a : ids) {
      frequency[static_cast<std::size_t>(a)] += 1.0;
      for (int b : ids)
        if (a != b) cooccur[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] += 1.0;
    }
  }

  Rng qrng = root.split(1ULL << 32);
  for (int i = 0; i < spec.num_scenes; ++i) {
    const auto& scene = task.scenes[static_cast<std::size_t>(i)];
    const auto present = scene.object_ids();
    std::vector<int> yes;
    for (std::size_t idx : qrng.sample_without_replacement(present.size(), static_cast<std::size_t>(spec.pairs_per_split)))
      yes.push_back(present[idx]);

    std::vector<int> absent;
    for (int id = 0; id < world.num_objects; ++id)
      if (!scene.contains(id)) absent.push_back(id);
    std::vector<double> adjacency(n, 0.0);
    for (int id = 0; id < world.num_objects; ++id)
      for (int p : present) adjacency[static_cast<std::size_t>(id)] += cooccur[static_cast<std::size_t>(p)][static_cast<std::size_t>(id)];

    for (Split split : kSplits) {
      std::vector<int> no;
      switch (split) {
        case Split::random:
          for (std::size_t idx : qrng.sample_without_replacement(absent.size(), static_cast<std::size_t>(spec.pairs_per_split)))
            no.push_back(absent[idx]);
          break;
        case Split::popular: no = top_absent(frequency, scene, spec.pairs_per_split); break;
        case Split::adversarial: no = top_absent(adjacency, scene, spec.pairs_per_split); break;
      }
      for (std::size_t q = 0; q < yes.size(); ++q) {
        task.questions.push_back({i, yes[q], true, split});
        task.questions.push_back({i, no[q], false, split});
      }
    }
  }
  return task;
}

void ProbeTask::save(const std::filesystem::path& path) const {
  nlohmann::json j;
  j["fingerprint"] = fingerprint();
  j["config"] = spec_kv(world, spec).serialize();
  j["scenes"] = nlohmann::json::array();
  for (const auto& s : scenes) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : s.objects) objs.push_back({o.id, o.top, o.left, o.height, o.width});
    j["scenes"].push_back({{"seed", s.seed}, {"objects", objs}});
  }
  j["questions"] = nlohmann::json::array();
  for (const auto& q : questions) {
    j["questions"].push_back({{"scene", q.scene}, {"object", q.object}, {"yes", q.expect_yes}, {"split", to_string(q.split)}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write task file " + path.string());
  out << j.dump(1) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

ProbeTask ProbeTask::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad task file " + path.string() + ": " + e.what());
  }
  WorldSpec world;
  TaskSpec spec;
  try {
    const auto kv = KeyValueFile::parse(j.at("config").get<std::string>(), path.string());
    world.read(kv);
    spec.read(kv);
    ProbeTask task = build_task(world, spec);
    if (task.fingerprint() != j.at("fingerprint").get<std::string>()) {
      throw IoError(path.string() + ": fingerprint does not match its configuration");
    }
    const auto& scenes = j.at("scenes");
    const auto& questions = j.at("questions");
    bool same = scenes.size() == task.scenes.size() && questions.size() == task.questions.size();
    for (std::size_t i = 0; same && i < scenes.size(); ++i) {
      const auto& s = task.scenes[i];
      same = scenes[i].at("seed").get<std::uint64_t>() == s.seed && scenes[i].at("objects").size() == s.objects.size();
      for (std::size_t k = 0; same && k < s.objects.size(); ++k) {
        const auto o = scenes[i].at("objects")[k].get<std::array<int, 5>>();
        same = SceneObject{o[0], o[1], o[2], o[3], o[4]} == s.objects[k];
      }
    }
    for (std::size_t i = 0; same && i < questions.size(); ++i) {
      const auto& q = questions[i];
      same = Question{q.at("scene").get<int>(), q.at("object").get<int>(), q.at("yes").get<bool>(),
                      split_from_string(q.at("split").get<std::string>())} == task.questions[i];
    }
    if (!same) throw IoError(path.string() + ": stored scenes/questions differ from regenerated task");
    return task;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad task file " + path.string() + ": " + e.what());
  }
}

}  // namespace vtcal

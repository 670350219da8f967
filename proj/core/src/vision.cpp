#include "vtcal/vision.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>

#include "vtcal/errors.hpp"

namespace vtcal {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Zipf-like popularity: lower ids appear more often.
double popularity(int id) { return 1.0 / std::pow(1.0 + id, 0.8); }

int weighted_pick(const std::vector<int>& candidates, Rng& rng) {
  double total = 0.0;
  for (int id : candidates) total += popularity(id);
  double u = rng.uniform() * total;
  for (int id : candidates) {
    u -= popularity(id);
    if (u < 0.0) return id;
  }
  return candidates.back();
}

bool inside_shape(ShapeKind shape, const SceneObject& box, int y, int x) {
  const double u = 2.0 * (y + 0.5 - box.top) / box.height - 1.0;
  const double v = 2.0 * (x + 0.5 - box.left) / box.width - 1.0;
  switch (shape) {
    case ShapeKind::rectangle: return true;
    case ShapeKind::disk: return u * u + v * v <= 1.0;
    case ShapeKind::diamond: return std::abs(u) + std::abs(v) <= 1.0;
  }
  return true;
}

double object_pixel(const ObjectAppearance& obj, int patch, int y, int x, int c) {
  const auto i = static_cast<std::size_t>(((y % patch) * patch + x % patch) * 3 + c);
  return clamp01(obj.color[static_cast<std::size_t>(c)] + obj.pattern[i]);
}

std::string_view kind_name(SceneKind k) {
  switch (k) {
    case SceneKind::original: return "original";
    case SceneKind::augmented: return "augmented";
    case SceneKind::masked: return "masked";
  }
  return "original";
}

SceneKind kind_from(const std::string& s) {
  if (s == "original") return SceneKind::original;
  if (s == "augmented") return SceneKind::augmented;
  if (s == "masked") return SceneKind::masked;
  throw IoError("unknown scene kind '" + s + "'");
}

}  // namespace

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c),
      pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(c), fill) {}

ObjectCatalog ObjectCatalog::build(int num_objects, int patch, std::uint64_t seed, int group_size) {
  if (num_objects < 1 || patch < 1 || group_size < 1) throw ConfigError("object catalog: sizes must be positive");
  ObjectCatalog cat;
  cat.patch_ = patch;
  cat.group_size_ = group_size;
  Rng rng(seed);
  std::array<double, 3> base{};
  for (int id = 0; id < num_objects; ++id) {
    if (id % group_size == 0) {
      for (double& b : base) b = rng.uniform(0.25, 0.75);
    }
    ObjectAppearance obj;
    obj.id = id;
    obj.group = id / group_size;
    obj.shape = static_cast<ShapeKind>(id % 3);
    for (std::size_t c = 0; c < 3; ++c) obj.color[c] = clamp01(base[c] + rng.uniform(-0.1, 0.1));
    obj.pattern.resize(static_cast<std::size_t>(patch * patch * 3));
    for (double& t : obj.pattern) t = rng.uniform(-0.4, 0.4);
    cat.objects_.push_back(std::move(obj));
  }
  return cat;
}

std::vector<int> ObjectCatalog::group_members(int group) const {
  std::vector<int> out;
  for (const auto& o : objects_)
    if (o.group == group) out.push_back(o.id);
  return out;
}

std::vector<int> SyntheticScene::object_ids() const {
  std::vector<int> ids;
  for (const auto& o : objects) ids.push_back(o.id);
  return ids;
}

bool SyntheticScene::contains(int id) const {
  return std::any_of(objects.begin(), objects.end(), [&](const SceneObject& o) { return o.id == id; });
}

SyntheticScene generate_scene(const SceneSpec& spec, const ObjectCatalog& catalog) {
  const int p = catalog.patch();
  if (spec.height <= 0 || spec.width <= 0 || spec.height % p != 0 || spec.width % p != 0) {
    throw ConfigError("scene " + std::to_string(spec.height) + "x" + std::to_string(spec.width) +
                      " is not a multiple of patch size " + std::to_string(p));
  }
  if (spec.num_objects < 0 || spec.num_objects > catalog.size()) {
    throw ConfigError("scene asks for " + std::to_string(spec.num_objects) + " objects, vocabulary has " +
                      std::to_string(catalog.size()));
  }
  if (spec.max_box_patches < 1) throw ConfigError("max_box_patches must be >= 1");

  Rng root(spec.seed);
  Rng pick = root.split(1);
  Rng place = root.split(2);
  Rng texture = root.split(3);

  SyntheticScene scene;
  scene.seed = spec.seed;
  scene.image = Image(spec.height, spec.width, 3);
  const double gray = texture.uniform(0.42, 0.58);
  for (double& px : scene.image.pixels) px = clamp01(gray + texture.uniform(-0.05, 0.05));

  // Object choice: anchor by popularity, then mostly from the anchor's group.
  std::vector<int> chosen;
  for (int i = 0; i < spec.num_objects; ++i) {
    std::vector<int> pool;
    if (!chosen.empty() && pick.bernoulli(0.6)) {
      for (int id : catalog.group_members(catalog.at(chosen.front()).group))
        if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) pool.push_back(id);
    }
    if (pool.empty()) {
      for (int id = 0; id < catalog.size(); ++id)
        if (std::find(chosen.begin(), chosen.end(), id) == chosen.end()) pool.push_back(id);
    }
    chosen.push_back(weighted_pick(pool, pick));
  }

  const int gh = spec.height / p;
  const int gw = spec.width / p;
  std::vector<char> occupied(static_cast<std::size_t>(gh * gw), 0);
  constexpr int kMaxTries = 200;
  for (int id : chosen) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
      const int bh = 1 + static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(std::min(spec.max_box_patches, gh))));
      const int bw = 1 + static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(std::min(spec.max_box_patches, gw))));
      const int r0 = static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(gh - bh + 1)));
      const int c0 = static_cast<int>(place.uniform_int(static_cast<std::uint64_t>(gw - bw + 1)));
      bool free = true;
      for (int r = r0; r < r0 + bh && free; ++r)
        for (int c = c0; c < c0 + bw && free; ++c) free = !occupied[static_cast<std::size_t>(r * gw + c)];
      if (!free) continue;
      for (int r = r0; r < r0 + bh; ++r)
        for (int c = c0; c < c0 + bw; ++c) occupied[static_cast<std::size_t>(r * gw + c)] = 1;
      SceneObject box{id, r0 * p, c0 * p, bh * p, bw * p};
      const auto& obj = catalog.at(id);
      for (int y = box.top; y < box.top + box.height; ++y)
        for (int x = box.left; x < box.left + box.width; ++x) {
          if (!inside_shape(obj.shape, box, y, x)) continue;
          for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = object_pixel(obj, p, y, x, c);
        }
      scene.objects.push_back(box);
      placed = true;
    }
    if (!placed) {
      throw ConfigError("could not place object " + std::to_string(id) + " after " + std::to_string(kMaxTries) +
                        " tries");
    }
  }
  return scene;
}

Image flip_horizontal(const Image& image) {
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) out.at(y, image.width - 1 - x, c) = image.at(y, x, c);
  return out;
}

std::vector<double> gaussian_kernel(double sigma, double truncate) {
  if (!(sigma > 0.0) || !(truncate > 0.0)) throw ConfigError("gaussian_kernel: sigma and truncate must be positive");
  const int radius = static_cast<int>(std::ceil(truncate * sigma));
  std::vector<double> w(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    w[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (double& v : w) v /= total;
  return w;
}

Image gaussian_blur(const Image& image, double sigma, double truncate) {
  const auto w = gaussian_kernel(sigma, truncate);
  const int radius = static_cast<int>(w.size() / 2);
  Image tmp = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::clamp(x + k, 0, image.width - 1);
          acc += w[static_cast<std::size_t>(k + radius)] * image.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::clamp(y + k, 0, image.height - 1);
          acc += w[static_cast<std::size_t>(k + radius)] * tmp.at(yy, x, c);
        }
        out.at(y, x, c) = clamp01(acc);
      }
  return out;
}

Image salt_and_pepper(const Image& image, double intensity, double salt_fraction, Rng& rng) {
  if (intensity < 0.0 || intensity > 1.0 || salt_fraction < 0.0 || salt_fraction > 1.0) {
    throw ConfigError("salt_and_pepper: intensity and salt_fraction must lie in [0, 1]");
  }
  const double pepper = intensity * (1.0 - salt_fraction);
  Image out = image;
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const double u = rng.uniform();
      if (u >= intensity) continue;
      const double v = u < pepper ? 0.0 : 1.0;
      for (int c = 0; c < image.channels; ++c) out.at(y, x, c) = v;
    }
  return out;
}

SyntheticScene augment(const SyntheticScene& scene, Rng& rng, const AugmentConfig& config) {
  SyntheticScene out = scene;
  out.kind = SceneKind::augmented;
  if (rng.bernoulli(config.flip_probability)) {
    out.image = flip_horizontal(out.image);
    for (auto& o : out.objects) o.left = scene.image.width - o.left - o.width;
  }
  if (config.blur_sigma > 0.0) out.image = gaussian_blur(out.image, config.blur_sigma, config.blur_truncate);
  if (config.noise_intensity > 0.0) {
    out.image = salt_and_pepper(out.image, config.noise_intensity, config.salt_fraction, rng);
  }
  return out;
}

PatchEncoder PatchEncoder::build(int patch, int channels, int dim, std::uint64_t seed, double content_scale,
                                 double bias_norm) {
  if (patch < 1 || channels < 1 || dim < 1) throw ConfigError("patch encoder: sizes must be positive");
  PatchEncoder enc;
  enc.patch_ = patch;
  enc.channels_ = channels;
  const std::size_t in = static_cast<std::size_t>(patch * patch * channels);
  Rng wr = Rng(seed).split(1);
  Rng br = Rng(seed).split(2);
  enc.weight_ = Matrix(static_cast<std::size_t>(dim), in);
  const double scale = content_scale / std::sqrt(static_cast<double>(in));
  for (double& w : enc.weight_.values()) w = scale * wr.normal();
  Vec b(static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < b.dim(); ++i) b[i] = br.normal();
  enc.bias_ = bias_norm * l2_normalize(b);
  return enc;
}

Vec PatchEncoder::encode_patch(std::span<const double> flat_patch) const {
  if (flat_patch.size() != weight_.cols()) {
    throw ShapeError("patch has " + std::to_string(flat_patch.size()) + " values, encoder expects " +
                     std::to_string(weight_.cols()));
  }
  Vec out = bias_;
  for (std::size_t r = 0; r < weight_.rows(); ++r) {
    const auto w = weight_.row(r);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * (flat_patch[i] - 0.5);
    out[r] += acc;
  }
  return out;
}

Vec PatchEncoder::prototype(const ObjectAppearance& object) const {
  std::vector<double> flat;
  flat.reserve(weight_.cols());
  for (int y = 0; y < patch_; ++y)
    for (int x = 0; x < patch_; ++x)
      for (int c = 0; c < channels_; ++c) flat.push_back(object_pixel(object, patch_, y, x, c));
  return encode_patch(flat);
}

VisionTokens encode_patches(const SyntheticScene& scene, const PatchEncoder& encoder) {
  const Image& img = scene.image;
  const int p = encoder.patch();
  if (img.channels != encoder.channels() || img.height % p != 0 || img.width % p != 0) {
    throw ShapeError("image " + std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                     std::to_string(img.channels) + " does not tile into " + std::to_string(p) + "x" +
                     std::to_string(p) + "x" + std::to_string(encoder.channels()) + " patches");
  }
  VisionTokens out;
  switch (scene.kind) {
    case SceneKind::original: out.provenance = TokenProvenance::original; break;
    case SceneKind::augmented: out.provenance = TokenProvenance::augmented; break;
    case SceneKind::masked: out.provenance = TokenProvenance::masked_image; break;
  }
  out.tokens = Matrix(0, static_cast<std::size_t>(encoder.dim()));
  std::vector<double> flat(static_cast<std::size_t>(p * p * img.channels));
  for (int pr = 0; pr < img.height / p; ++pr)
    for (int pc = 0; pc < img.width / p; ++pc) {
      std::size_t i = 0;
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < img.channels; ++c) flat[i++] = img.at(pr * p + y, pc * p + x, c);
      out.tokens.append_row(encoder.encode_patch(flat).values());
    }
  return out;
}

VisualAlignment alignment_for(const PatchEncoder& encoder, const ObjectCatalog& catalog) {
  VisualAlignment a;
  a.vision_bias = encoder.bias();
  for (int id = 0; id < catalog.size(); ++id) a.object_prototypes.push_back(encoder.prototype(catalog.at(id)));
  return a;
}

VisionTokens prune_tokens(const VisionTokens& v, std::size_t n_keep, Rng& rng) {
  if (n_keep < 1 || n_keep > v.count()) {
    throw ConfigError("prune_tokens: n_keep=" + std::to_string(n_keep) + " outside [1, " +
                      std::to_string(v.count()) + "]");
  }
  VisionTokens out;
  out.provenance = TokenProvenance::pruned;
  out.tokens = Matrix(0, v.dim());
  for (std::size_t idx : rng.sample_without_replacement(v.count(), n_keep)) out.tokens.append_row(v.tokens.row(idx));
  return out;
}

SyntheticScene mask_image(const SyntheticScene& scene, double fraction, Rng& rng, int block) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("mask_image: fraction must lie in (0, 1]");
  const Image& img = scene.image;
  if (block < 1 || img.height % block != 0 || img.width % block != 0) {
    throw ConfigError("mask_image: block size must tile the image");
  }
  const int bh = img.height / block;
  const int bw = img.width / block;
  const std::size_t blocks = static_cast<std::size_t>(bh * bw);
  const std::size_t count =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(blocks))), 1, blocks);
  SyntheticScene out = scene;
  out.kind = SceneKind::masked;
  for (std::size_t b : rng.sample_without_replacement(blocks, count)) {
    const int r0 = static_cast<int>(b) / bw * block;
    const int c0 = static_cast<int>(b) % bw * block;
    for (int y = r0; y < r0 + block; ++y)
      for (int x = c0; x < c0 + block; ++x)
        for (int c = 0; c < img.channels; ++c) out.image.at(y, x, c) = rng.uniform();
  }
  return out;
}

void save_scene(const SyntheticScene& scene, const std::filesystem::path& stem) {
  const Image& img = scene.image;
  if (img.channels != 3) throw IoError("PPM export needs 3 channels");
  std::filesystem::path ppm = stem;
  ppm += ".ppm";
  std::ofstream out(ppm, std::ios::binary);
  if (!out) throw IoError("cannot write " + ppm.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamp01(v) * 255.0))));
  if (!out) throw IoError("write failed for " + ppm.string());

  nlohmann::json j;
  j["height"] = img.height;
  j["width"] = img.width;
  j["channels"] = img.channels;
  j["seed"] = scene.seed;
  j["kind"] = kind_name(scene.kind);
  j["objects"] = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    j["objects"].push_back({{"id", o.id}, {"top", o.top}, {"left", o.left}, {"height", o.height}, {"width", o.width}});
  }
  std::filesystem::path side = stem;
  side += ".json";
  std::ofstream js(side);
  if (!js) throw IoError("cannot write " + side.string());
  js << j.dump(2) << "\n";
  if (!js) throw IoError("write failed for " + side.string());
}

SyntheticScene load_scene(const std::filesystem::path& stem) {
  std::filesystem::path side = stem;
  side += ".json";
  std::ifstream js(side);
  if (!js) throw IoError("cannot open " + side.string());
  SyntheticScene scene;
  try {
    const auto j = nlohmann::json::parse(js);
    scene.seed = j.at("seed").get<std::uint64_t>();
    scene.kind = kind_from(j.at("kind").get<std::string>());
    for (const auto& o : j.at("objects")) {
      scene.objects.push_back({o.at("id").get<int>(), o.at("top").get<int>(), o.at("left").get<int>(),
                               o.at("height").get<int>(), o.at("width").get<int>()});
    }
    scene.image = Image(j.at("height").get<int>(), j.at("width").get<int>(), j.at("channels").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad scene sidecar " + side.string() + ": " + e.what());
  }

  std::filesystem::path ppm = stem;
  ppm += ".ppm";
  std::ifstream in(ppm, std::ios::binary);
  if (!in) throw IoError("cannot open " + ppm.string());
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  if (magic != "P6" || maxval != 255 || w != scene.image.width || h != scene.image.height) {
    throw IoError(ppm.string() + ": header disagrees with sidecar");
  }
  for (double& v : scene.image.pixels) {
    const int c = in.get();
    if (c == EOF) throw IoError(ppm.string() + ": truncated pixel data");
    v = static_cast<double>(c) / 255.0;
  }
  return scene;
}

}  // namespace vtcal

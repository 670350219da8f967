#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/task.hpp"
#include "vtcal/vision.hpp"

using namespace vtcal;

namespace {

const WorldSpec kWorld{};

const ObjectCatalog& catalog() {
  static const ObjectCatalog c = build_catalog(kWorld);
  return c;
}

const PatchEncoder& encoder() {
  static const PatchEncoder e = build_encoder(kWorld, 64);
  return e;
}

SyntheticScene scene(std::uint64_t seed, int objects = 3) {
  SceneSpec s;
  s.seed = seed;
  s.num_objects = objects;
  return generate_scene(s, catalog());
}

bool boxes_overlap(const SceneObject& a, const SceneObject& b) {
  return a.top < b.top + b.height && b.top < a.top + a.height && a.left < b.left + b.width &&
         b.left < a.left + a.width;
}

}  // namespace

TEST(Scene, SameSeedSameScene) {
  const auto a = scene(5), b = scene(5);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.objects, b.objects);
  EXPECT_NE(scene(6).image, a.image);
}

TEST(Scene, ZeroObjectsIsBackgroundOnly) {
  const auto s = scene(3, 0);
  EXPECT_TRUE(s.objects.empty());
  EXPECT_EQ(s.image.height, 48);
}

TEST(Scene, ThreeDistinctNonOverlappingObjects) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const auto s = scene(seed);
    ASSERT_EQ(s.objects.size(), 3u);
    const auto ids = s.object_ids();
    EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), 3u);
    for (std::size_t i = 0; i < s.objects.size(); ++i) {
      const auto& o = s.objects[i];
      EXPECT_EQ(o.top % 8, 0);
      EXPECT_EQ(o.left % 8, 0);
      EXPECT_LE(o.top + o.height, 48);
      EXPECT_LE(o.left + o.width, 48);
      for (std::size_t j = i + 1; j < s.objects.size(); ++j) EXPECT_FALSE(boxes_overlap(o, s.objects[j]));
    }
  }
}

TEST(Scene, PixelsStayInUnitRange) {
  const auto s = scene(9);
  for (double v : s.image.pixels) {
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
  }
}

TEST(Scene, BadGeometryIsAConfigError) {
  SceneSpec s;
  s.height = 50;
  EXPECT_THROW(generate_scene(s, catalog()), ConfigError);
  s = {};
  s.num_objects = 17;
  EXPECT_THROW(generate_scene(s, catalog()), ConfigError);
}

TEST(Augment, FlipIsAnInvolution) {
  const auto s = scene(11);
  EXPECT_EQ(flip_horizontal(flip_horizontal(s.image)), s.image);
  EXPECT_EQ(flip_horizontal(s.image).at(0, 0, 1), s.image.at(0, 47, 1));
}

TEST(Augment, BlurOfAConstantImageIsConstant) {
  const Image flat(48, 48, 3, 0.37);
  const Image b = gaussian_blur(flat, 5.0, 3.0);
  for (double v : b.pixels) EXPECT_NEAR(v, 0.37, 1e-12);
}

TEST(Augment, KernelIsNormalisedAndSymmetric) {
  const auto k = gaussian_kernel(5.0, 3.0);
  ASSERT_EQ(k.size(), 31u);
  double total = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    total += k[i];
    EXPECT_DOUBLE_EQ(k[i], k[k.size() - 1 - i]);
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_THROW(gaussian_kernel(0.0, 3.0), ConfigError);
}

TEST(Augment, SaltAndPepperCorruptsTheRequestedShare) {
  // Mid-grey input so every corrupted pixel is visible.
  const Image grey(240, 240, 3, 0.5);
  Rng rng(21);
  const Image out = salt_and_pepper(grey, 0.20, 0.5, rng);
  int corrupted = 0, salt = 0;
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 240; ++x) {
      if (out.at(y, x, 0) != 0.5) {
        ++corrupted;
        salt += out.at(y, x, 0) == 1.0;
        EXPECT_EQ(out.at(y, x, 1), out.at(y, x, 0));
      }
    }
  const double share = corrupted / (240.0 * 240.0);
  EXPECT_NEAR(share, 0.20, 0.02);
  EXPECT_NEAR(static_cast<double>(salt) / corrupted, 0.5, 0.05);
}

TEST(Augment, IsDeterministicInTheRng) {
  const auto s = scene(12);
  Rng a(3), b(3);
  EXPECT_EQ(augment(s, a).image, augment(s, b).image);
  Rng c(3);
  const auto aug = augment(s, c);
  EXPECT_EQ(aug.kind, SceneKind::augmented);
  EXPECT_EQ(aug.object_ids(), s.object_ids());
}

TEST(Augment, FlipMirrorsObjectBoxes) {
  const auto s = scene(13);
  AugmentConfig cfg;
  cfg.flip_probability = 1.0;
  cfg.blur_sigma = 0.0;
  cfg.noise_intensity = 0.0;
  Rng rng(1);
  const auto f = augment(s, rng, cfg);
  EXPECT_EQ(f.image, flip_horizontal(s.image));
  for (std::size_t i = 0; i < s.objects.size(); ++i) {
    EXPECT_EQ(f.objects[i].left, 48 - s.objects[i].left - s.objects[i].width);
  }
}

TEST(Encoder, TokenCountAndShape) {
  const auto v = encode_patches(scene(1), encoder());
  EXPECT_EQ(v.count(), 36u);
  EXPECT_EQ(v.dim(), 64u);
  EXPECT_EQ(v.provenance, TokenProvenance::original);
}

TEST(Encoder, ChangingOnePatchChangesOneToken) {
  auto s = scene(2);
  const auto before = encode_patches(s, encoder());
  // Patch (row 2, col 3).
  for (int y = 16; y < 24; ++y)
    for (int x = 24; x < 32; ++x)
      for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = 1.0 - s.image.at(y, x, c);
  const auto after = encode_patches(s, encoder());
  for (std::size_t r = 0; r < 36; ++r) {
    const double d = max_abs_diff(before.tokens.row(r), after.tokens.row(r));
    if (r == 2 * 6 + 3)
      EXPECT_GT(d, 0.0);
    else
      EXPECT_EQ(d, 0.0) << r;
  }
}

TEST(Encoder, IsAffineInThePatch) {
  Rng rng(4);
  std::vector<double> a(192), b(192), mid(192);
  for (std::size_t i = 0; i < 192; ++i) {
    a[i] = rng.uniform();
    b[i] = rng.uniform();
    mid[i] = 0.5 * (a[i] + b[i]);
  }
  const Vec ea = encoder().encode_patch(a), eb = encoder().encode_patch(b), em = encoder().encode_patch(mid);
  EXPECT_LE(max_abs_diff(em.values(), (0.5 * (ea + eb)).values()), 1e-12);
}

TEST(Encoder, GoldenTokens) {
  const auto v = encode_patches(scene(7), encoder());
  vtcal::testing::expect_golden("encoder_tokens_scene7_rows0_2", v.tokens.values().subspan(0, 3 * 64), 1e-12);
}

TEST(Prune, KeepingEverythingIsTheIdentity) {
  const auto v = encode_patches(scene(3), encoder());
  Rng rng(1);
  const auto p = prune_tokens(v, 36, rng);
  EXPECT_EQ(p.tokens, v.tokens);
  EXPECT_EQ(p.provenance, TokenProvenance::pruned);
}

TEST(Prune, KeepsOrderAndSize) {
  const auto v = encode_patches(scene(3), encoder());
  Rng rng(2);
  const auto p = prune_tokens(v, 5, rng);
  ASSERT_EQ(p.count(), 5u);
  std::size_t last = 0;
  for (std::size_t r = 0; r < 5; ++r) {
    std::size_t found = 36;
    for (std::size_t i = 0; i < 36; ++i) {
      if (max_abs_diff(v.tokens.row(i), p.tokens.row(r)) == 0.0) found = i;
    }
    ASSERT_LT(found, 36u);
    if (r > 0) {
      EXPECT_GT(found, last);
    }
    last = found;
  }
  EXPECT_THROW(prune_tokens(v, 0, rng), ConfigError);
  EXPECT_THROW(prune_tokens(v, 37, rng), ConfigError);
}

TEST(Prune, InclusionFrequencyIsUniform) {
  // Each index is kept with probability n_keep / N.
  VisionTokens v;
  v.tokens = Matrix(36, 1);
  for (std::size_t i = 0; i < 36; ++i) v.tokens(i, 0) = static_cast<double>(i);
  Rng rng(3);
  std::vector<int> hits(36, 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    const VisionTokens kept = prune_tokens(v, 5, rng);
    for (double x : kept.tokens.values()) ++hits[static_cast<std::size_t>(x)];
  }
  const double p = 5.0 / 36.0;
  const double sd = std::sqrt(trials * p * (1 - p));
  for (int h : hits) EXPECT_NEAR(h, trials * p, 5 * sd);
}

TEST(Mask, FullFractionMasksEveryBlock) {
  const auto s = scene(4);
  Rng rng(5);
  const auto m = mask_image(s, 1.0, rng);
  EXPECT_EQ(m.kind, SceneKind::masked);
  std::size_t same = 0;
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) same += m.image.pixels[i] == s.image.pixels[i];
  EXPECT_LT(same, 10u);
}

TEST(Mask, TinyFractionMasksOneBlock) {
  const auto s = scene(4);
  Rng rng(6);
  const auto m = mask_image(s, 1e-6, rng);
  const auto a = encode_patches(s, encoder()), b = encode_patches(m, encoder());
  int changed = 0;
  for (std::size_t r = 0; r < 36; ++r) changed += max_abs_diff(a.tokens.row(r), b.tokens.row(r)) > 0.0;
  EXPECT_EQ(changed, 1);
  EXPECT_EQ(b.provenance, TokenProvenance::masked_image);
}

TEST(Mask, BlockCountFollowsTheFraction) {
  const auto s = scene(4);
  Rng rng(7);
  const auto m = mask_image(s, 0.5, rng);
  const auto a = encode_patches(s, encoder()), b = encode_patches(m, encoder());
  int changed = 0;
  for (std::size_t r = 0; r < 36; ++r) changed += max_abs_diff(a.tokens.row(r), b.tokens.row(r)) > 0.0;
  EXPECT_EQ(changed, 18);
  EXPECT_THROW(mask_image(s, 0.0, rng), ConfigError);
  EXPECT_THROW(mask_image(s, 1.5, rng), ConfigError);
  EXPECT_THROW(mask_image(s, 0.5, rng, 7), ConfigError);
}

TEST(SceneIo, PpmRoundTripQuantisesToEightBits) {
  const auto s = scene(8);
  const auto dir = vtcal::testing::temp_dir("scene_io");
  save_scene(s, dir / "s");
  const auto back = load_scene(dir / "s");
  EXPECT_EQ(back.objects, s.objects);
  EXPECT_EQ(back.seed, s.seed);
  ASSERT_EQ(back.image.pixels.size(), s.image.pixels.size());
  for (std::size_t i = 0; i < s.image.pixels.size(); ++i) {
    ASSERT_NEAR(back.image.pixels[i], s.image.pixels[i], 0.5 / 255.0 + 1e-12);
  }
  save_scene(back, dir / "t");
  EXPECT_EQ(vtcal::testing::read_text(dir / "s.ppm"), vtcal::testing::read_text(dir / "t.ppm"));
  EXPECT_THROW(load_scene(dir / "missing"), IoError);
}

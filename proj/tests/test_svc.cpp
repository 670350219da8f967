#include <cmath>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/experiment.hpp"
#include "vtcal/svc.hpp"

using namespace vtcal;
using vtcal::testing::random_matrix;

namespace {

VisionTokens tokens(Matrix m, TokenProvenance p) { return VisionTokens{std::move(m), p}; }

std::shared_ptr<const SynergyBank> random_bank(Rng& rng, std::size_t n = 6, std::size_t d = 8) {
  return std::make_shared<const SynergyBank>(build_bank(tokens(random_matrix(rng, n, d), TokenProvenance::original),
                                                        tokens(random_matrix(rng, n, d), TokenProvenance::augmented)));
}

}  // namespace

TEST(SynergyBank, StacksOriginalOverAugmented) {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 36, 64), b = random_matrix(rng, 36, 64);
  const SynergyBank bank = build_bank(tokens(a, TokenProvenance::original), tokens(b, TokenProvenance::augmented));
  EXPECT_EQ(bank.rows(), 72u);
  EXPECT_EQ(bank.original_rows, 36u);
  for (std::size_t c = 0; c < 64; ++c) {
    EXPECT_EQ(bank.tokens(0, c), a(0, c));
    EXPECT_EQ(bank.tokens(36, c), b(0, c));
  }
}

TEST(SynergyBank, RejectsWrongProvenanceAndShape) {
  Rng rng(2);
  const Matrix a = random_matrix(rng, 4, 8);
  EXPECT_THROW(build_bank(tokens(a, TokenProvenance::original), tokens(a, TokenProvenance::pruned)), Error);
  EXPECT_THROW(build_bank(tokens(a, TokenProvenance::original),
                          tokens(random_matrix(rng, 4, 6), TokenProvenance::augmented)),
               ShapeError);
}

TEST(SynergyBank, DuplicatedBankGivesTheSameContext) {
  // Duplicating every key leaves softmax-weighted averages unchanged.
  Rng rng(3);
  const Matrix v = random_matrix(rng, 5, 8), h = random_matrix(rng, 3, 8);
  const Matrix c1 = visual_context(h, v);
  const Matrix c2 = visual_context(h, vstack(v, v));
  EXPECT_LE(max_abs_diff(c1.values(), c2.values()), 1e-12);
}

TEST(SynergyBank, GoldenBankFromTheDefaultWorld) {
  const RunConfig config;
  const World world = build_world(config.decoder, config.world);
  const ProbeTask task = build_task(config.world, vtcal::testing::small_config(1).task);
  const Pipeline p = assemble_pipeline(config, world, task.scenes[0], encode_patches(task.scenes[0], world.encoder), 0);
  ASSERT_TRUE(p.bank);
  EXPECT_EQ(p.bank->rows(), 72u);
  vtcal::testing::expect_golden("svc_bank_row36", p.bank->tokens.row(36), 1e-12);
}

TEST(VisualContext, HandEvaluatedTwoTokenAttention) {
  const Matrix bank{{1.0, 0.0}, {0.0, 1.0}};
  const Matrix q{{std::sqrt(2.0), 0.0}};  // scores (1, 0) after the 1/sqrt(2) scale
  const Matrix a = bank_attention(q, bank);
  EXPECT_NEAR(a(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(a(0, 1), 0.2689414213699951, 1e-12);
  const Matrix c = visual_context(q, bank);
  EXPECT_NEAR(c(0, 0), 0.7310585786300049, 1e-12);
  EXPECT_NEAR(c(0, 1), 0.2689414213699951, 1e-12);
}

TEST(VisualContext, RowsLieInTheConvexHull) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix bank = random_matrix(rng, 7, 8), h = random_matrix(rng, 4, 8, 3.0);
    const Matrix a = bank_attention(h, bank);
    const Matrix c = visual_context(h, bank);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double sum = 0.0;
      for (double w : a.row(r)) {
        EXPECT_GE(w, 0.0);
        sum += w;
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
      for (std::size_t col = 0; col < 8; ++col) {
        double lo = INFINITY, hi = -INFINITY;
        for (std::size_t b = 0; b < 7; ++b) {
          lo = std::min(lo, bank(b, col));
          hi = std::max(hi, bank(b, col));
        }
        EXPECT_GE(c(r, col), lo - 1e-12);
        EXPECT_LE(c(r, col), hi + 1e-12);
      }
    }
  }
}

TEST(Blend, EndpointsAndLinearity) {
  Rng rng(5);
  const Matrix h = random_matrix(rng, 3, 4), c = random_matrix(rng, 3, 4);
  EXPECT_EQ(blend(h, c, 0.0), h);
  EXPECT_EQ(blend(h, c, 1.0), c);
  const Matrix m = blend(h, c, 0.3);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_NEAR(m.values()[i] - h.values()[i], 0.3 * (c.values()[i] - h.values()[i]), 1e-12);
  }
  EXPECT_THROW(blend(h, c, 1.5), ConfigError);
  EXPECT_THROW(blend(h, Matrix(2, 4), 0.5), ShapeError);
}

TEST(SvcHook, PostLayerShiftIsLambdaTimesContextMinusState) {
  Rng rng(6);
  auto bank = random_bank(rng);
  CalibConfig cfg;
  cfg.lambda_s = 0.2;
  cfg.intervention_layer = 3;
  const LayerHook hook = svc_hook(cfg, bank);
  EXPECT_EQ(hook.layer, 3);
  const Matrix input = random_matrix(rng, 4, 8);
  const Matrix h = random_matrix(rng, 4, 8);
  Matrix hidden = h;
  LayerView view{3, 0, 0, 4, input, hidden};
  hook.fn(view);
  const Matrix c = visual_context(input, *bank);
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_NEAR(hidden.values()[i] - h.values()[i], 0.2 * (c.values()[i] - h.values()[i]), 1e-12);
  }
}

TEST(SvcHook, PrefillRowsAreLeftAloneWhenDisabled) {
  Rng rng(7);
  auto bank = random_bank(rng);
  CalibConfig cfg;
  cfg.svc_prefill = false;
  const LayerHook hook = svc_hook(cfg, bank);
  const Matrix input = random_matrix(rng, 5, 8);
  Matrix hidden = random_matrix(rng, 5, 8);
  const Matrix before = hidden;
  // Rows 0..2 belong to the prefix, rows 3..4 entered at steps 1 and 2.
  LayerView view{4, 2, 0, 3, input, hidden};
  hook.fn(view);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(max_abs_diff(hidden.row(r), before.row(r)), 0.0);
  for (std::size_t r = 3; r < 5; ++r) EXPECT_GT(max_abs_diff(hidden.row(r), before.row(r)), 0.0);
}

TEST(SvcHook, ZeroLambdaIsBitNeutral) {
  Rng rng(8);
  auto bank = random_bank(rng);
  CalibConfig cfg;
  cfg.lambda_s = 0.0;
  const LayerHook hook = svc_hook(cfg, bank);
  const Matrix input = random_matrix(rng, 3, 8);
  Matrix hidden = random_matrix(rng, 3, 8);
  const Matrix before = hidden;
  LayerView view{4, 0, 0, 3, input, hidden};
  hook.fn(view);
  EXPECT_EQ(hidden, before);
}

TEST(SvcHook, PreLayerPlacementSitsOneLayerLower) {
  Rng rng(9);
  CalibConfig cfg;
  cfg.svc_placement = SvcPlacement::pre_layer;
  EXPECT_EQ(svc_hook(cfg, random_bank(rng)).layer, cfg.intervention_layer - 1);
  cfg.intervention_layer = 1;
  EXPECT_THROW(svc_hook(cfg, random_bank(rng)), ConfigError);
}

TEST(SvcHook, MismatchedCaptureIsAShapeError) {
  Rng rng(10);
  const LayerHook hook = svc_hook(CalibConfig{}, random_bank(rng));
  const Matrix input = random_matrix(rng, 2, 8);
  Matrix hidden = random_matrix(rng, 3, 8);
  LayerView view{4, 0, 0, 3, input, hidden};
  EXPECT_THROW(hook.fn(view), ShapeError);
  EXPECT_THROW(svc_hook(CalibConfig{}, nullptr), Error);
}

TEST(SvcHook, OnlyLayerLcChangesInTheDecoder) {
  const RunConfig config;
  const World world = build_world(config.decoder, config.world);
  const ProbeTask task = build_task(config.world, vtcal::testing::small_config(1).task);
  const VisionTokens v = encode_patches(task.scenes[0], world.encoder);
  Rng rng(11);
  auto bank = std::make_shared<const SynergyBank>(
      build_bank(v, VisionTokens{random_matrix(rng, 36, 64), TokenProvenance::augmented}));
  HookSet hooks;
  hooks.add(svc_hook(config.calib, bank));
  const DecodeState s(world.model, v, question_prefix());
  const auto plain = forward_layers(world.model, s, 8);
  const auto hooked = forward_layers(world.model, s, 8, hooks);
  const int lc = config.calib.intervention_layer;
  for (int l = 1; l < lc; ++l) EXPECT_EQ(plain[l - 1], hooked[l - 1]) << l;
  EXPECT_NE(plain[lc - 1], hooked[lc - 1]);
}

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vtcal/decoder.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/experiment.hpp"
#include "vtcal/linear_diagnostic.hpp"

using namespace vtcal;

namespace {

struct DecoderFixture : ::testing::Test {
  RunConfig config;
  World world = build_world(config.decoder, config.world);
  VisionTokens tokens;

  void SetUp() override {
    SceneSpec spec;
    spec.seed = 99;
    tokens = encode_patches(generate_scene(spec, world.catalog), world.encoder);
  }

  std::vector<int> query() const { return {token::kBos, token::kAsk, token::object(3), token::object(7)}; }
};

}  // namespace

TEST_F(DecoderFixture, SequenceLengthTracksSteps) {
  DecodeState s(world.model, tokens, query());
  EXPECT_EQ(s.prefix_length(), tokens.count() + 4);
  s.append(token::kYes);
  s.append(token::kNo);
  EXPECT_EQ(s.sequence_length(), tokens.count() + 4 + 2);
  EXPECT_EQ(forward_to_layer(world.model, s, 1).rows(), s.sequence_length());
}

TEST_F(DecoderFixture, CausalityUnderTextPerturbation) {
  auto q2 = query();
  q2[3] = token::object(12);  // last query position
  const DecodeState a(world.model, tokens, query());
  const DecodeState b(world.model, tokens, q2);
  const std::size_t j = tokens.count() + 3;
  for (int l = 1; l <= world.model.config().num_layers; ++l) {
    const Matrix ha = forward_to_layer(world.model, a, l), hb = forward_to_layer(world.model, b, l);
    for (std::size_t r = 0; r < j; ++r) {
      for (std::size_t c = 0; c < ha.cols(); ++c) ASSERT_EQ(ha(r, c), hb(r, c)) << "layer " << l << " row " << r;
    }
    EXPECT_GT(max_abs_diff(ha.row(j), hb.row(j)), 0.0);
  }
}

TEST_F(DecoderFixture, CachedAndRecomputedLogitsAgree) {
  DecodeState cached(world.model, tokens, query());
  DecodeState full(world.model, tokens, query());
  for (int step = 0; step < 6; ++step) {
    const Vec a = next_token_logits(world.model, cached, {}, DecodePath::cached);
    const Vec b = next_token_logits(world.model, full, {}, DecodePath::recompute);
    ASSERT_LE(max_abs_diff(a.values(), b.values()), 1e-9) << "step " << step;
    const int next = argmax(a.values());
    cached.append(next);
    full.append(next);
  }
}

TEST_F(DecoderFixture, CachedAndRecomputedGreedyDecodesMatch) {
  GreedyOptions rec;
  rec.path = DecodePath::recompute;
  rec.stop_at_end = false;
  GreedyOptions cac;
  cac.stop_at_end = false;
  EXPECT_EQ(greedy_decode(world.model, tokens, query(), {}, 12, cac),
            greedy_decode(world.model, tokens, query(), {}, 12, rec));
}

TEST_F(DecoderFixture, IdentityHooksAreBitNeutral) {
  HookSet id;
  for (int l = 1; l <= world.model.config().num_layers; ++l) id.add(l, "id", identity_hook());
  GreedyOptions opt;
  opt.stop_at_end = false;
  EXPECT_EQ(greedy_decode(world.model, tokens, query(), {}, 10, opt),
            greedy_decode(world.model, tokens, query(), id, 10, opt));
  DecodeState s(world.model, tokens, query());
  const Matrix a = forward_to_layer(world.model, s, 8), b = forward_to_layer(world.model, s, 8, id);
  EXPECT_EQ(a, b);
}

TEST_F(DecoderFixture, ZeroingHookPreservesShape) {
  HookSet zero;
  zero.add(1, "zero", [](LayerView& v) {
    for (double& x : v.hidden.values()) x = 0.0;
  });
  const DecodeState s(world.model, tokens, query());
  const Matrix h1 = forward_to_layer(world.model, s, 1, zero);
  EXPECT_EQ(h1, Matrix(s.sequence_length(), 64));
  const Matrix h3 = forward_to_layer(world.model, s, 3, zero);
  EXPECT_EQ(h3.rows(), s.sequence_length());
}

TEST_F(DecoderFixture, ShapeChangingHookIsRejectedByName) {
  HookSet bad;
  bad.add(2, "grow", [](LayerView& v) { v.hidden.append_row(v.hidden.row(0)); });
  const DecodeState s(world.model, tokens, query());
  try {
    forward_to_layer(world.model, s, 3, bad);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("grow"), std::string::npos);
  }
}

TEST_F(DecoderFixture, LayerOutOfRange) {
  const DecodeState s(world.model, tokens, query());
  EXPECT_THROW(forward_to_layer(world.model, s, 0), Error);
  EXPECT_THROW(forward_to_layer(world.model, s, 9), Error);
}

TEST_F(DecoderFixture, PriorBiasIsAdditive) {
  const DecoderModel unbiased = world.model.with_prior_bias(0.0);
  for (double beta : {0.25, 1.0, 3.5}) {
    const DecoderModel biased = world.model.with_prior_bias(beta);
    DecodeState a(unbiased, tokens, query()), b(biased, tokens, query());
    const Vec l0 = next_token_logits(unbiased, a);
    const Vec lb = next_token_logits(biased, b);
    const Vec& bias = unbiased.prior_bias();
    for (std::size_t i = 0; i < l0.dim(); ++i) ASSERT_EQ(lb[i], l0[i] + beta * bias[i]) << i;
  }
}

TEST_F(DecoderFixture, MaxNewOneIsStepZeroArgmax) {
  DecodeState s(world.model, tokens, query());
  const Vec l = next_token_logits(world.model, s);
  EXPECT_EQ(greedy_decode(world.model, tokens, query(), {}, 1), std::vector<int>{argmax(l.values())});
}

TEST_F(DecoderFixture, SoftmaxKeepsTheArgmax) {
  DecodeState s(world.model, tokens, query());
  const Vec l = next_token_logits(world.model, s);
  Matrix m(1, l.dim());
  std::copy(l.values().begin(), l.values().end(), m.row(0).begin());
  EXPECT_EQ(argmax(softmax_rows(m).row(0)), argmax(l.values()));
}

TEST(Decoder, ArgmaxBreaksTiesTowardsLowestId) {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
  EXPECT_EQ(argmax(v), 1);
}

TEST_F(DecoderFixture, GreedyDecodeIsDeterministic) {
  EXPECT_EQ(greedy_decode(world.model, tokens, query(), {}, 16), greedy_decode(world.model, tokens, query(), {}, 16));
}

TEST_F(DecoderFixture, GoldenStepZeroLogits) {
  DecodeState s(world.model, tokens, question_prefix());
  const Vec l = next_token_logits(world.model, s);
  vtcal::testing::expect_golden("decoder_logits", l.values(), 1e-9);
}

TEST_F(DecoderFixture, GoldenActivationsAtLayerFour) {
  const DecodeState s(world.model, tokens, question_prefix());
  const Matrix h = forward_to_layer(world.model, s, 4);
  vtcal::testing::expect_golden("decoder_layer4_last_row", h.row(h.rows() - 1), 1e-9);
}

TEST_F(DecoderFixture, SaveLoadRoundTripIsBitExact) {
  const auto dir = vtcal::testing::temp_dir("model");
  world.model.save(dir / "m.bin");
  const DecoderModel back = DecoderModel::load(dir / "m.bin");
  EXPECT_TRUE(back == world.model);
  DecodeState a(world.model, tokens, query()), b(back, tokens, query());
  EXPECT_EQ(next_token_logits(world.model, a), next_token_logits(back, b));
}

TEST(Decoder, LoadRejectsForeignFiles) {
  const auto dir = vtcal::testing::temp_dir("model_bad");
  write_text_file(dir / "junk.bin", "not a model");
  EXPECT_THROW(DecoderModel::load(dir / "junk.bin"), IoError);
  EXPECT_THROW(DecoderModel::load(dir / "missing.bin"), IoError);
}

TEST(Decoder, ConfigValidation) {
  DecoderConfig c;
  c.num_heads = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.num_layers = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.prior_bias_strength = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Decoder, ConfigRoundTripsThroughKeyValueFile) {
  DecoderConfig c;
  c.prior_bias_strength = 0.3;
  c.init.detector_gain = 17.5;
  KeyValueFile kv;
  c.write(kv);
  DecoderConfig back;
  back.read(KeyValueFile::parse(kv.serialize()));
  KeyValueFile kv2;
  back.write(kv2);
  EXPECT_EQ(kv.serialize(), kv2.serialize());
}

TEST(LinearDiagnostic, DifferenceIsTheVisualEffectDifference) {
  const LinearDiagnosticModel m = build_linear_diagnostic(DecoderConfig{}, 5);
  Rng rng(11);
  VisionTokens v{vtcal::testing::random_matrix(rng, 36, 64)};
  VisionTokens neg = prune_tokens(v, 5, rng);
  const std::vector<int> q{token::kBos, token::kAsk};
  for (int l = 1; l <= m.num_layers(); ++l) {
    const Vec d = m.hidden(l, v, q) - m.hidden(l, neg, q);
    const Vec e = m.visual_effect(l, v) - m.visual_effect(l, neg);
    EXPECT_LE(max_abs_diff(d.values(), e.values()), 1e-12);
    EXPECT_EQ(m.hidden(l, v, q) - m.hidden(l, v, q), Vec(64));
  }
}

TEST(LinearDiagnostic, HiddenIsVisualPlusShared) {
  const LinearDiagnosticModel m = build_linear_diagnostic(DecoderConfig{}, 6);
  Rng rng(12);
  VisionTokens v{vtcal::testing::random_matrix(rng, 10, 64)};
  const std::vector<int> q{token::kBos, token::kAsk, token::object(2)};
  for (int l = 1; l <= m.num_layers(); ++l) {
    const Vec sum = m.visual_effect(l, v) + m.shared_effect(l, q);
    EXPECT_LE(max_abs_diff(m.hidden(l, v, q).values(), sum.values()), 1e-12);
  }
}

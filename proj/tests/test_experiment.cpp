#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/experiment.hpp"

using namespace vtcal;
using vtcal::testing::small_config;

namespace {

struct ExperimentFixture : ::testing::Test {
  static inline const RunConfig base = small_config(6);
  static const ProbeTask& task() {
    static const ProbeTask t = build_task(base.world, base.task);
    return t;
  }
  static const World& world() {
    static const World w = build_world(base.decoder, base.world);
    return w;
  }
  static RunResult run(Mode m, double lambda_s, double lambda_c) {
    RunConfig c = base;
    c.mode = m;
    c.calib.lambda_s = lambda_s;
    c.calib.lambda_c = lambda_c;
    return run_experiment(c, world(), task());
  }
};

void expect_same_answers(const RunResult& a, const RunResult& b) {
  EXPECT_EQ(a.overall.accuracy, b.overall.accuracy);
  EXPECT_EQ(a.overall.f1, b.overall.f1);
  EXPECT_EQ(a.overall.proxy_rate, b.overall.proxy_rate);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.splits[s].accuracy, b.splits[s].accuracy);
}

}  // namespace

TEST_F(ExperimentFixture, UnifiedWithoutSvcIsCrc) {
  expect_same_answers(run(Mode::unified, 0.0, 0.1), run(Mode::crc, 0.06, 0.1));
}

TEST_F(ExperimentFixture, UnifiedWithoutCrcIsSvc) {
  expect_same_answers(run(Mode::unified, 0.06, 0.0), run(Mode::svc, 0.06, 0.1));
}

TEST_F(ExperimentFixture, UnifiedWithBothOffIsVanilla) {
  expect_same_answers(run(Mode::unified, 0.0, 0.0), run(Mode::vanilla, 0.06, 0.1));
}

TEST_F(ExperimentFixture, RunsAreDeterministic) {
  const RunResult a = run(Mode::unified, 0.06, 0.1), b = run(Mode::unified, 0.06, 0.1);
  expect_same_answers(a, b);
  EXPECT_EQ(a.calibrated_states, b.calibrated_states);
  EXPECT_GT(a.calibrated_states, 0u);
}

TEST_F(ExperimentFixture, OnlyTheNaiveCombinationTouchesLogits) {
  const SyntheticScene& s = task().scenes[0];
  const VisionTokens v = encode_patches(s, world().encoder);
  for (Mode m : kModes) {
    RunConfig c = base;
    c.mode = m;
    const Pipeline p = assemble_pipeline(c, world(), s, v, 0);
    EXPECT_EQ(p.touches_logits(), m == Mode::naive_combo) << to_string(m);
    EXPECT_EQ(p.hooks.empty(), m == Mode::vanilla) << to_string(m);
  }
}

TEST_F(ExperimentFixture, ZeroStrengthStagesAreLeftOut) {
  const SyntheticScene& s = task().scenes[0];
  const VisionTokens v = encode_patches(s, world().encoder);
  RunConfig c = base;
  c.calib.lambda_s = 0.0;
  c.calib.lambda_c = 0.0;
  EXPECT_TRUE(assemble_pipeline(c, world(), s, v, 0).hooks.empty());
  c = base;
  c.calib.num_negatives = 0;
  const Pipeline p = assemble_pipeline(c, world(), s, v, 0);
  EXPECT_FALSE(p.cache.has_value());
  EXPECT_EQ(p.hooks.size(), 1u);
}

TEST_F(ExperimentFixture, NaiveCombinationFollowsTheContrastFormula) {
  const SyntheticScene& s = task().scenes[1];
  const VisionTokens v = encode_patches(s, world().encoder);
  RunConfig c = base;
  c.mode = Mode::naive_combo;
  const Pipeline p = assemble_pipeline(c, world(), s, v, 1);
  const std::vector<int> objs{0, 5};
  const auto answers = answer_questions(world(), p, v, objs);
  for (std::size_t i = 0; i < objs.size(); ++i) {
    auto margin = [&](const VisionTokens& vt, const HookSet& hooks) {
      DecodeState st(world().model, vt, question_prefix());
      next_token_logits(world().model, st, hooks);
      st.append(token::object(objs[i]));
      const Vec l = next_token_logits(world().model, st, hooks);
      return l[token::kYes] - l[token::kNo];
    };
    const double a = p.contrast_weight;
    const double oracle = (1.0 + a) * margin(v, p.hooks) - a * margin(*p.contrast, HookSet{});
    EXPECT_NEAR(answers[i].margin, oracle, 1e-9);
  }
}

TEST(Score, HandCountedConfusionMatrix) {
  const std::vector<Question> q{{0, 1, true}, {0, 2, true}, {0, 3, false}, {0, 4, false}, {0, 5, false}};
  const std::vector<Answer> a{{true}, {false}, {true}, {false}, {false}};
  const SplitMetrics m = score(q, a);
  EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(m.precision, 0.5);
  EXPECT_DOUBLE_EQ(m.recall, 0.5);
  EXPECT_DOUBLE_EQ(m.f1, 0.5);
  EXPECT_DOUBLE_EQ(m.proxy_rate, 1.0 / 3.0);
  EXPECT_THROW(score(q, std::vector<Answer>{}), Error);
}

TEST(RunConfigTest, FingerprintIgnoresPaths) {
  RunConfig a, b;
  b.task_path = "/somewhere/task.json";
  b.output_dir = "elsewhere";
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.seed = 2;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b = a;
  b.calib.lambda_c = 0.2;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
}

TEST(RunConfigTest, KeyValueRoundTrip) {
  RunConfig a;
  a.mode = Mode::naive_combo;
  a.calib.lambda_s = 0.11;
  a.task_path = "t.json";
  const RunConfig b = RunConfig::from_kv(KeyValueFile::parse(a.to_kv().serialize()));
  EXPECT_EQ(b.to_kv().serialize(), a.to_kv().serialize());
  EXPECT_EQ(b.fingerprint(), a.fingerprint());
}

TEST(RunConfigTest, ValidationErrors) {
  KeyValueFile kv = RunConfig{}.to_kv();
  kv.set("calib.nonsense", 1.0);
  EXPECT_THROW(RunConfig::from_kv(kv), ConfigError);
  RunConfig c;
  c.calib.lambda_s = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(mode_from_string("turbo"), ConfigError);
  for (Mode m : kModes) EXPECT_EQ(mode_from_string(to_string(m)), m);
}

TEST(RunConfigTest, MismatchedTaskIsRejected) {
  RunConfig c = small_config(3);
  const ProbeTask t = build_task(c.world, c.task);
  EXPECT_NO_THROW(check_task(c, t));
  c.task.seed = 99;
  EXPECT_THROW(check_task(c, t), ConfigError);
  EXPECT_THROW(run_experiment(c, t), ConfigError);
}

TEST(RunConfigTest, DefaultPriorBiasIsPositive) {
  EXPECT_GT(bias_task_decoder().prior_bias_strength, 0.0);
}

namespace {

std::vector<RunResult> sample_results() {
  RunResult a;
  a.mode = Mode::crc;
  a.seed = 3;
  a.fingerprint = "bbbb";
  a.overall = {0.625, 0.5, 0.75, 0.6, 0.125, 16};
  a.splits = {a.overall, a.overall, a.overall};
  RunResult b = a;
  b.mode = Mode::vanilla;
  b.fingerprint = "aaaa";
  b.overall.accuracy = 1.0 / 3.0;
  return {a, b};
}

}  // namespace

TEST(Report, CsvHeaderAndRoundTrip) {
  auto results = sample_results();
  const std::string csv = results_csv(results);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), kCsvHeader);
  const auto back = parse_results_csv(csv);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(results_csv(back), csv);
  EXPECT_THROW(parse_results_csv("mode,seed\n"), IoError);
  EXPECT_THROW(parse_results_csv(std::string(kCsvHeader) + "\nunified,1,x\n"), IoError);
}

TEST(Report, SortedByFingerprintAndByteStable) {
  auto results = sample_results();
  sort_results(results);
  EXPECT_EQ(results[0].fingerprint, "aaaa");
  const auto d1 = vtcal::testing::temp_dir("report1"), d2 = vtcal::testing::temp_dir("report2");
  emit_report(results, d1);
  results[0].seconds = 123.0;  // wall clock only reaches timing.json
  emit_report(results, d2);
  for (const char* f : {"results.csv", "summary.json"}) {
    EXPECT_EQ(vtcal::testing::read_text(d1 / f), vtcal::testing::read_text(d2 / f)) << f;
  }
  EXPECT_TRUE(std::filesystem::exists(d1 / "timing.json"));
}

TEST_F(ExperimentFixture, PriorBiasSweepPicksTheSmallestBetaReachingTheTarget) {
  RunConfig c = base;
  const std::vector<double> grid{0.0, 1.0, 2.0};
  const BiasSweep probe = sweep_prior_bias(c, task(), grid, 2.0);
  ASSERT_EQ(probe.points.size(), 3u);
  EXPECT_FALSE(probe.chosen.has_value());
  // A positive prior bias towards "yes" can only add false positives.
  EXPECT_GE(probe.points[2].proxy_rate, probe.points[0].proxy_rate);
  const double target = probe.points[1].proxy_rate;
  const BiasSweep s = sweep_prior_bias(c, task(), grid, target);
  double expected = 1.0;
  if (probe.points[0].proxy_rate >= target) expected = 0.0;
  ASSERT_TRUE(s.chosen.has_value());
  EXPECT_EQ(*s.chosen, expected);
}

TEST_F(ExperimentFixture, RunGridMatchesSequentialRuns) {
  std::vector<RunConfig> configs;
  for (Mode m : {Mode::vanilla, Mode::crc}) {
    RunConfig c = base;
    c.mode = m;
    configs.push_back(c);
  }
  const auto grid = run_grid(configs, task(), 2);
  ASSERT_EQ(grid.size(), 2u);
  for (const RunResult& r : grid) {
    const RunResult seq = run(r.mode, base.calib.lambda_s, base.calib.lambda_c);
    expect_same_answers(r, seq);
  }
}

TEST(BiasTask, SomeCrcStrengthReachesVanillaAccuracy) {
  const RunConfig base;
  const ProbeTask task = build_task(base.world, base.task);
  const World world = build_world(base.decoder, base.world);
  RunConfig v = base;
  v.mode = Mode::vanilla;
  const double vanilla = run_experiment(v, world, task).overall.accuracy;
  double best = 0.0;
  for (double lambda : {0.05, 0.1, 0.2}) {
    RunConfig c = base;
    c.mode = Mode::crc;
    c.calib.lambda_c = lambda;
    best = std::max(best, run_experiment(c, world, task).overall.accuracy);
  }
  EXPECT_GE(best, vanilla);
}

#include <map>

#include <gtest/gtest.h>

#include "test_util.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/task.hpp"

using namespace vtcal;

namespace {

const ProbeTask& default_task() {
  static const ProbeTask t = build_task(WorldSpec{}, TaskSpec{});
  return t;
}

}  // namespace

TEST(Task, DefaultSizes) {
  const ProbeTask& t = default_task();
  EXPECT_EQ(t.scenes.size(), 50u);
  EXPECT_EQ(t.questions.size(), 900u);
}

TEST(Task, EverySplitIsBalancedPerScene) {
  std::map<std::pair<int, Split>, std::pair<int, int>> counts;
  for (const Question& q : default_task().questions) {
    auto& c = counts[{q.scene, q.split}];
    (q.expect_yes ? c.first : c.second)++;
  }
  EXPECT_EQ(counts.size(), 150u);
  for (const auto& [key, c] : counts) {
    EXPECT_EQ(c.first, 3);
    EXPECT_EQ(c.second, 3);
  }
}

TEST(Task, AnswersAgreeWithTheScenes) {
  const ProbeTask& t = default_task();
  for (const Question& q : t.questions) {
    EXPECT_EQ(t.scenes[static_cast<std::size_t>(q.scene)].contains(q.object), q.expect_yes);
  }
}

TEST(Task, AdversarialDistractorsShareAGroupMoreOftenThanRandomOnes) {
  const ProbeTask& t = default_task();
  const int g = t.world.group_size;
  std::map<Split, std::pair<int, int>> same;  // (same-group, total) over "no" questions
  for (const Question& q : t.questions) {
    if (q.expect_yes) continue;
    bool shares = false;
    for (int id : t.scenes[static_cast<std::size_t>(q.scene)].object_ids()) shares |= id / g == q.object / g;
    same[q.split].first += shares;
    same[q.split].second += 1;
  }
  const auto rate = [&](Split s) { return static_cast<double>(same[s].first) / same[s].second; };
  EXPECT_GT(rate(Split::adversarial), rate(Split::random));
}

TEST(Task, IsDeterministic) {
  const ProbeTask a = build_task(WorldSpec{}, TaskSpec{});
  EXPECT_EQ(a.questions, default_task().questions);
  EXPECT_EQ(a.fingerprint(), default_task().fingerprint());
  TaskSpec other;
  other.seed = 7;
  EXPECT_NE(build_task(WorldSpec{}, other).fingerprint(), a.fingerprint());
}

TEST(Task, VocabularyTooSmallIsAConfigError) {
  WorldSpec w;
  w.num_objects = 4;
  TaskSpec s;
  s.pairs_per_split = 2;
  EXPECT_THROW(build_task(w, s), ConfigError);
  s = {};
  s.num_scenes = 0;
  EXPECT_THROW(build_task(WorldSpec{}, s), ConfigError);
}

TEST(Task, SaveLoadRoundTrip) {
  const auto dir = vtcal::testing::temp_dir("task_io");
  const ProbeTask small = build_task(WorldSpec{}, vtcal::testing::small_config(4).task);
  small.save(dir / "task.json");
  const ProbeTask back = ProbeTask::load(dir / "task.json");
  EXPECT_EQ(back.questions, small.questions);
  EXPECT_EQ(back.fingerprint(), small.fingerprint());
  ASSERT_EQ(back.scenes.size(), small.scenes.size());
  for (std::size_t i = 0; i < small.scenes.size(); ++i) EXPECT_EQ(back.scenes[i].image, small.scenes[i].image);
  EXPECT_THROW(ProbeTask::load(dir / "missing.json"), IoError);
}

TEST(Task, SplitNames) {
  for (Split s : kSplits) EXPECT_EQ(split_from_string(to_string(s)), s);
  EXPECT_THROW(split_from_string("hard"), ConfigError);
}

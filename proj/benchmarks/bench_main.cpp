#include <benchmark/benchmark.h>

#include "vtcal/crc.hpp"
#include "vtcal/experiment.hpp"
#include "vtcal/svc.hpp"

using namespace vtcal;

namespace {

struct Setup {
  RunConfig config;
  World world = build_world(config.decoder, config.world);
  ProbeTask task = build_task(config.world, [] {
    TaskSpec t;
    t.num_scenes = 4;
    return t;
  }());
  VisionTokens tokens = encode_patches(task.scenes[0], world.encoder);
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_DecodeStepCached(benchmark::State& state) {
  const Setup& s = setup();
  const int steps = static_cast<int>(state.range(0));
  GreedyOptions opt;
  opt.stop_at_end = false;
  for (auto _ : state) {
    benchmark::DoNotOptimize(greedy_decode(s.world.model, s.tokens, question_prefix(), {}, steps, opt));
  }
  state.SetItemsProcessed(state.iterations() * steps);
}
BENCHMARK(BM_DecodeStepCached)->Arg(16)->Arg(64);

void BM_DecodeStepRecompute(benchmark::State& state) {
  const Setup& s = setup();
  GreedyOptions opt;
  opt.stop_at_end = false;
  opt.path = DecodePath::recompute;
  for (auto _ : state) {
    benchmark::DoNotOptimize(greedy_decode(s.world.model, s.tokens, question_prefix(), {}, 16, opt));
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_DecodeStepRecompute);

void BM_ProbeDirections(benchmark::State& state) {
  const Setup& s = setup();
  const CalibConfig& c = s.config.calib;
  const auto negs = make_negatives(s.tokens, c.num_negatives, static_cast<std::size_t>(c.num_kept), Rng(1));
  ProbeOptions opt;
  opt.parallel = state.range(0) != 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        probe_directions(s.world.model, s.tokens, question_prefix(), negs, c.intervention_layer, opt));
  }
}
BENCHMARK(BM_ProbeDirections)->Arg(0)->Arg(1);

void BM_CalibrateState(benchmark::State& state) {
  Rng rng(2);
  Vec h(64), v(64);
  for (std::size_t i = 0; i < 64; ++i) {
    h[i] = rng.normal();
    v[i] = rng.normal();
  }
  const Vec unit = l2_normalize(v);
  for (auto _ : state) {
    Vec x = h;
    calibrate_in_place(x.values(), unit.values(), 0.1);
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(BM_CalibrateState);

void BM_SvcHookRow(benchmark::State& state) {
  const Setup& s = setup();
  RunConfig c = s.config;
  c.mode = Mode::svc;
  const Pipeline p = assemble_pipeline(c, s.world, s.task.scenes[0], s.tokens, 0);
  const LayerHook hook = svc_hook(c.calib, p.bank);
  Rng rng(3);
  Matrix input(1, 64), hidden(1, 64);
  for (double& x : input.values()) x = rng.normal();
  for (double& x : hidden.values()) x = rng.normal();
  for (auto _ : state) {
    Matrix h = hidden;
    LayerView view{c.calib.intervention_layer, 1, 40, 38, input, h};
    hook.fn(view);
    benchmark::DoNotOptimize(h);
  }
}
BENCHMARK(BM_SvcHookRow);

void BM_RunExperiment(benchmark::State& state) {
  const Setup& s = setup();
  RunConfig c = s.config;
  c.task.num_scenes = 4;
  c.mode = static_cast<Mode>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(run_experiment(c, s.world, s.task));
  state.SetLabel(std::string(to_string(c.mode)));
}
BENCHMARK(BM_RunExperiment)->DenseRange(0, 4)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

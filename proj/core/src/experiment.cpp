#include "vtcal/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <map>
#include <nlohmann/json.hpp>
#include <thread>

#include "vtcal/errors.hpp"

namespace vtcal {

namespace {

constexpr double kBiasTaskPriorBias = 0.5;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool uses_svc(Mode m) { return m == Mode::svc || m == Mode::unified || m == Mode::naive_combo; }
bool uses_crc(Mode m) { return m == Mode::crc || m == Mode::unified; }

void write_augment(const AugmentConfig& a, KeyValueFile& kv) {
  kv.set("augment.flip_probability", a.flip_probability);
  kv.set("augment.blur_sigma", a.blur_sigma);
  kv.set("augment.blur_truncate", a.blur_truncate);
  kv.set("augment.noise_intensity", a.noise_intensity);
  kv.set("augment.salt_fraction", a.salt_fraction);
}

void read_augment(AugmentConfig& a, const KeyValueFile& kv) {
  kv.read("augment.flip_probability", a.flip_probability);
  kv.read("augment.blur_sigma", a.blur_sigma);
  kv.read("augment.blur_truncate", a.blur_truncate);
  kv.read("augment.noise_intensity", a.noise_intensity);
  kv.read("augment.salt_fraction", a.salt_fraction);
}

bool is_augment_key(std::string_view key) {
  KeyValueFile probe;
  write_augment(AugmentConfig{}, probe);
  return probe.contains(key);
}

nlohmann::json metrics_json(const SplitMetrics& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
          {"f1", m.f1},             {"proxy_rate", m.proxy_rate}, {"n", m.n}};
}

}  // namespace

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::vanilla: return "vanilla";
    case Mode::svc: return "svc";
    case Mode::crc: return "crc";
    case Mode::unified: return "unified";
    case Mode::naive_combo: return "naive-combo";
  }
  return "vanilla";
}

Mode mode_from_string(std::string_view s) {
  for (Mode m : kModes)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected vanilla, svc, crc, unified, naive-combo)");
}

DecoderConfig bias_task_decoder() {
  DecoderConfig c;
  c.prior_bias_strength = kBiasTaskPriorBias;
  return c;
}

// ---------------------------------------------------------------------------
// RunConfig

void RunConfig::validate() const {
  decoder.validate();
  world.validate();
  task.validate(world);
  calib.validate(decoder.num_layers, world.num_vision_tokens());
  if (decoder.vocab_size < token::kObjectBase + world.num_objects) {
    throw ConfigError("decoder.vocab_size too small for " + std::to_string(world.num_objects) + " object tokens");
  }
  if (!(augment.flip_probability >= 0.0 && augment.flip_probability <= 1.0)) {
    throw ConfigError("augment.flip_probability must lie in [0, 1]");
  }
  if (!(augment.noise_intensity >= 0.0 && augment.noise_intensity <= 1.0) ||
      !(augment.salt_fraction >= 0.0 && augment.salt_fraction <= 1.0)) {
    throw ConfigError("augment.noise_intensity and augment.salt_fraction must lie in [0, 1]");
  }
  if (augment.blur_sigma < 0.0 || augment.blur_truncate <= 0.0) {
    throw ConfigError("augment.blur_sigma must be >= 0 and augment.blur_truncate > 0");
  }
}

KeyValueFile RunConfig::to_kv() const {
  KeyValueFile kv;
  kv.set("run.mode", std::string(to_string(mode)));
  kv.set("run.seed", seed);
  decoder.write(kv);
  world.write(kv);
  task.write(kv);
  calib.write(kv);
  write_augment(augment, kv);
  kv.set("io.task_path", task_path);
  kv.set("io.output_dir", output_dir);
  return kv;
}

RunConfig RunConfig::from_kv(const KeyValueFile& kv) {
  kv.require_known([](const std::string& k) {
    return k == "run.mode" || k == "run.seed" || k == "io.task_path" || k == "io.output_dir" ||
           DecoderConfig::is_key(k) || WorldSpec::is_key(k) || TaskSpec::is_key(k) || CalibConfig::is_key(k) ||
           is_augment_key(k);
  });
  RunConfig c;
  if (auto m = kv.find("run.mode")) c.mode = mode_from_string(*m);
  kv.read("run.seed", c.seed);
  c.decoder.read(kv);
  c.world.read(kv);
  c.task.read(kv);
  c.calib.read(kv);
  read_augment(c.augment, kv);
  kv.read("io.task_path", c.task_path);
  kv.read("io.output_dir", c.output_dir);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) { return from_kv(KeyValueFile::load(path)); }

void RunConfig::save(const std::filesystem::path& path) const { to_kv().save(path); }

std::string RunConfig::fingerprint() const {
  const KeyValueFile full = to_kv();
  KeyValueFile hashed;
  for (const auto& [k, v] : full.entries())
    if (k.rfind("io.", 0) != 0) hashed.set(k, v);
  return fingerprint_of(hashed.serialize());
}

// ---------------------------------------------------------------------------
// World and pipeline

World build_world(const DecoderConfig& decoder, const WorldSpec& world) {
  decoder.validate();
  World w;
  w.catalog = build_catalog(world);
  w.encoder = build_encoder(world, decoder.hidden_dim);
  w.model = DecoderModel::build(decoder, alignment_for(w.encoder, w.catalog));
  return w;
}

std::vector<int> question_prefix() { return {token::kBos, token::kAsk}; }

Pipeline assemble_pipeline(const RunConfig& config, const World& world, const SyntheticScene& scene,
                           const VisionTokens& tokens, std::size_t scene_index) {
  const CalibConfig& calib = config.calib;
  calib.validate(world.model.config().num_layers, tokens.count());
  const Rng scene_rng = Rng(config.seed).split(scene_index);
  Pipeline p;

  if (uses_crc(config.mode) && calib.num_negatives > 0 && calib.lambda_c != 0.0) {
    const auto t0 = Clock::now();
    const auto negatives =
        make_negatives(tokens, calib.num_negatives, static_cast<std::size_t>(calib.num_kept), scene_rng.split(2));
    p.cache = probe_directions(world.model, tokens, question_prefix(), negatives, calib.intervention_layer,
                               {calib.delta_position, calib.parallel_probes});
    p.cache->fingerprint = config.fingerprint();
    p.probe_seconds = seconds_since(t0);
    p.hooks.merge(crc_hooks(*p.cache, calib, p.stats));
  }
  if (uses_svc(config.mode) && calib.lambda_s != 0.0) {
    Rng aug_rng = scene_rng.split(1);
    const VisionTokens v_aug = encode_patches(augment(scene, aug_rng, config.augment), world.encoder);
    p.bank = std::make_shared<const SynergyBank>(build_bank(tokens, v_aug));
    p.hooks.add(svc_hook(calib, p.bank));
  }
  if (config.mode == Mode::naive_combo) {
    Rng mask_rng = scene_rng.split(3);
    const SyntheticScene masked =
        mask_image(scene, calib.effective_mask_fraction(tokens.count()), mask_rng, world.encoder.patch());
    p.contrast = encode_patches(masked, world.encoder);
    p.contrast_weight = calib.naive_contrast_weight;
  }
  return p;
}

std::vector<Answer> answer_questions(const World& world, const Pipeline& pipeline, const VisionTokens& tokens,
                                     std::span<const int> objects) {
  const DecoderModel& model = world.model;
  const auto prefix = question_prefix();
  DecodeState base(model, tokens, prefix);
  next_token_logits(model, base, pipeline.hooks);
  std::optional<DecodeState> neg_base;
  if (pipeline.contrast) {
    neg_base.emplace(model, *pipeline.contrast, prefix);
    next_token_logits(model, *neg_base, HookSet{});
  }
  std::vector<Answer> out;
  for (int obj : objects) {
    DecodeState s = base;
    s.append(token::object(obj));
    const Vec l = next_token_logits(model, s, pipeline.hooks);
    double yes = l[token::kYes];
    double no = l[token::kNo];
    if (neg_base) {
      DecodeState ns = *neg_base;
      ns.append(token::object(obj));
      const Vec ln = next_token_logits(model, ns, HookSet{});
      const double a = pipeline.contrast_weight;
      yes = (1.0 + a) * yes - a * ln[token::kYes];
      no = (1.0 + a) * no - a * ln[token::kNo];
    }
    out.push_back({yes >= no, yes - no});
  }
  return out;
}

SplitMetrics score(std::span<const Question> questions, std::span<const Answer> answers) {
  if (questions.size() != answers.size()) throw Error("score: question/answer count mismatch");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const bool y = answers[i].yes;
    if (questions[i].expect_yes) {
      y ? ++tp : ++fn;
    } else {
      y ? ++fp : ++tn;
    }
  }
  SplitMetrics m;
  m.n = questions.size();
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  m.accuracy = ratio(tp + tn, m.n);
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  m.proxy_rate = ratio(fp, fp + tn);
  return m;
}

// ---------------------------------------------------------------------------
// Experiments

void check_task(const RunConfig& config, const ProbeTask& task) {
  ProbeTask expected;
  expected.world = config.world;
  expected.spec = config.task;
  if (task.fingerprint() != expected.fingerprint()) {
    throw ConfigError("task fingerprint " + task.fingerprint() + " does not match run config " +
                      expected.fingerprint());
  }
}

RunResult run_experiment(const RunConfig& config, const World& world, const ProbeTask& task) {
  config.validate();
  check_task(config, task);
  const auto t0 = Clock::now();
  RunResult r;
  r.mode = config.mode;
  r.seed = config.seed;
  r.fingerprint = config.fingerprint();

  std::vector<std::vector<std::size_t>> by_scene(task.scenes.size());
  for (std::size_t i = 0; i < task.questions.size(); ++i) {
    by_scene.at(static_cast<std::size_t>(task.questions[i].scene)).push_back(i);
  }
  std::vector<Answer> answers(task.questions.size());
  for (std::size_t s = 0; s < task.scenes.size(); ++s) {
    if (by_scene[s].empty()) continue;
    const VisionTokens tokens = encode_patches(task.scenes[s], world.encoder);
    const Pipeline p = assemble_pipeline(config, world, task.scenes[s], tokens, s);
    std::vector<int> objects;
    for (std::size_t qi : by_scene[s]) {
      const int obj = task.questions[qi].object;
      if (std::find(objects.begin(), objects.end(), obj) == objects.end()) objects.push_back(obj);
    }
    const auto scene_answers = answer_questions(world, p, tokens, objects);
    for (std::size_t qi : by_scene[s]) {
      const auto it = std::find(objects.begin(), objects.end(), task.questions[qi].object);
      answers[qi] = scene_answers[static_cast<std::size_t>(it - objects.begin())];
    }
    r.probe_seconds += p.probe_seconds;
    r.calibrated_states += p.stats->applied;
    r.degenerate_states += p.stats->degenerate;
  }
  r.overall = score(task.questions, answers);
  for (std::size_t k = 0; k < kSplits.size(); ++k) {
    std::vector<Question> qs;
    std::vector<Answer> as;
    for (std::size_t i = 0; i < task.questions.size(); ++i) {
      if (task.questions[i].split != kSplits[k]) continue;
      qs.push_back(task.questions[i]);
      as.push_back(answers[i]);
    }
    r.splits[k] = score(qs, as);
  }
  r.seconds = seconds_since(t0);
  return r;
}

RunResult run_experiment(const RunConfig& config, const ProbeTask& task) {
  const World world = build_world(config.decoder, config.world);
  return run_experiment(config, world, task);
}

RunResult run_experiment(const RunConfig& config) {
  if (config.task_path.empty()) throw ConfigError("io.task_path is not set");
  const ProbeTask task = ProbeTask::load(config.task_path);
  return run_experiment(config, task);
}

void sort_results(std::vector<RunResult>& results) {
  std::stable_sort(results.begin(), results.end(), [](const RunResult& a, const RunResult& b) {
    if (a.fingerprint != b.fingerprint) return a.fingerprint < b.fingerprint;
    if (a.mode != b.mode) return a.mode < b.mode;
    return a.seed < b.seed;
  });
}

std::vector<RunResult> run_grid(std::span<const RunConfig> configs, const ProbeTask& task, unsigned workers) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<RunResult> results(configs.size());
  std::vector<std::future<void>> running;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (running.size() >= workers) {
      running.front().get();
      running.erase(running.begin());
    }
    running.push_back(std::async(std::launch::async, [&, i] { results[i] = run_experiment(configs[i], task); }));
  }
  for (auto& f : running) f.get();
  sort_results(results);
  return results;
}

// ---------------------------------------------------------------------------
// Reports

std::string results_csv(std::span<const RunResult> results) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : results) {
    out += std::string(to_string(r.mode)) + "," + std::to_string(r.seed) + "," + r.fingerprint + "," +
           std::to_string(r.overall.n) + "," + format_double(r.overall.accuracy) + "," + format_double(r.overall.f1) +
           "," + format_double(r.overall.proxy_rate);
    for (const auto& s : r.splits) out += "," + format_double(s.accuracy) + "," + format_double(s.f1);
    out += '\n';
  }
  return out;
}

std::vector<RunResult> parse_results_csv(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    if (end > start) lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty() || lines[0] != kCsvHeader) throw IoError("results file does not start with the expected header");
  std::vector<RunResult> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    std::vector<std::string> f;
    std::size_t a = 0;
    while (true) {
      const std::size_t b = lines[i].find(',', a);
      f.push_back(lines[i].substr(a, b == std::string::npos ? std::string::npos : b - a));
      if (b == std::string::npos) break;
      a = b + 1;
    }
    if (f.size() != 13) throw IoError("results row " + std::to_string(i) + " has " + std::to_string(f.size()) + " fields");
    try {
      RunResult r;
      r.mode = mode_from_string(f[0]);
      r.seed = std::stoull(f[1]);
      r.fingerprint = f[2];
      r.overall.n = std::stoull(f[3]);
      r.overall.accuracy = std::stod(f[4]);
      r.overall.f1 = std::stod(f[5]);
      r.overall.proxy_rate = std::stod(f[6]);
      for (std::size_t k = 0; k < 3; ++k) {
        r.splits[k].accuracy = std::stod(f[7 + 2 * k]);
        r.splits[k].f1 = std::stod(f[8 + 2 * k]);
      }
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw IoError("results row " + std::to_string(i) + " is malformed");
    } catch (const ConfigError& e) {
      throw IoError("results row " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

std::string results_json(std::span<const RunResult> results) {
  nlohmann::json j;
  j["results"] = nlohmann::json::array();
  for (const auto& r : results) {
    nlohmann::json splits;
    for (std::size_t k = 0; k < kSplits.size(); ++k) splits[std::string(to_string(kSplits[k]))] = metrics_json(r.splits[k]);
    j["results"].push_back({{"mode", to_string(r.mode)},
                            {"seed", r.seed},
                            {"fingerprint", r.fingerprint},
                            {"overall", metrics_json(r.overall)},
                            {"splits", splits},
                            {"calibrated_states", r.calibrated_states},
                            {"degenerate_states", r.degenerate_states}});
  }
  return j.dump(2) + "\n";
}

void emit_report(std::span<const RunResult> results, const std::filesystem::path& dir) {
  if (results.empty()) throw Error("emit_report: no results");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_text_file(dir / "results.csv", results_csv(results));
  write_text_file(dir / "summary.json", results_json(results));
  nlohmann::json timing = nlohmann::json::array();
  for (const auto& r : results) {
    timing.push_back({{"fingerprint", r.fingerprint}, {"seconds", r.seconds}, {"probe_seconds", r.probe_seconds}});
  }
  write_text_file(dir / "timing.json", timing.dump(2) + "\n");
}

BiasSweep sweep_prior_bias(const RunConfig& config, const ProbeTask& task, std::span<const double> grid,
                           double target) {
  World world = build_world(config.decoder, config.world);
  const DecoderModel base = world.model;
  BiasSweep sweep;
  for (double beta : grid) {
    RunConfig c = config;
    c.mode = Mode::vanilla;
    c.decoder.prior_bias_strength = beta;
    world.model = base.with_prior_bias(beta);
    const RunResult r = run_experiment(c, world, task);
    sweep.points.push_back({beta, r.overall.proxy_rate, r.overall.accuracy});
    if (!sweep.chosen && r.overall.proxy_rate >= target) sweep.chosen = beta;
  }
  return sweep;
}

}  // namespace vtcal

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vtcal/diagnostics.hpp"
#include "vtcal/errors.hpp"
#include "vtcal/experiment.hpp"

namespace fs = std::filesystem;
using namespace vtcal;

namespace {

enum Exit { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

// Flags shared by every subcommand that needs a RunConfig. Named flags are
// sugar over `--set key=value`.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::string mode, task, out;
  std::optional<double> beta, lambda_s, lambda_c;
  std::optional<int> layer, negatives, kept;

  void attach(CLI::App* app, bool with_mode = true) {
    app->add_option("-c,--config", config_path, "key = value config file");
    app->add_option("--set", sets, "override one key, e.g. --set calib.lambda_c=0.2");
    if (with_mode) app->add_option("--mode", mode, "vanilla | svc | crc | unified | naive-combo");
    app->add_option("--task", task, "task file (io.task_path)");
    app->add_option("-o,--out", out, "output directory (io.output_dir)");
    app->add_option("--beta", beta, "decoder.prior_bias_strength");
    app->add_option("--lambda-s", lambda_s, "calib.lambda_s");
    app->add_option("--lambda-c", lambda_c, "calib.lambda_c");
    app->add_option("--layer", layer, "calib.intervention_layer");
    app->add_option("--negatives", negatives, "calib.num_negatives");
    app->add_option("--kept", kept, "calib.num_kept");
  }

  RunConfig build(std::optional<std::uint64_t> seed = std::nullopt) const {
    RunConfig base = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
    KeyValueFile kv = base.to_kv();
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
      kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!mode.empty()) kv.set("run.mode", mode);
    if (!task.empty()) kv.set("io.task_path", task);
    if (!out.empty()) kv.set("io.output_dir", out);
    if (beta) kv.set("decoder.prior_bias_strength", *beta);
    if (lambda_s) kv.set("calib.lambda_s", *lambda_s);
    if (lambda_c) kv.set("calib.lambda_c", *lambda_c);
    if (layer) kv.set("calib.intervention_layer", *layer);
    if (negatives) kv.set("calib.num_negatives", *negatives);
    if (kept) kv.set("calib.num_kept", *kept);
    if (seed) kv.set("run.seed", *seed);
    RunConfig c = RunConfig::from_kv(kv);
    c.validate();
    return c;
  }
};

std::string output_dir(const RunConfig& c) { return c.output_dir.empty() ? std::string("out") : c.output_dir; }

// Loads io.task_path when set, otherwise regenerates the task from the config.
ProbeTask load_or_build_task(const RunConfig& c) {
  if (!c.task_path.empty()) {
    ProbeTask t = ProbeTask::load(c.task_path);
    check_task(c, t);
    return t;
  }
  return build_task(c.world, c.task);
}

void print_result(const RunResult& r) {
  std::printf("%-12s seed=%-4llu acc=%.4f f1=%.4f proxy=%.4f  [random %.4f | popular %.4f | adversarial %.4f]\n",
              std::string(to_string(r.mode)).c_str(), static_cast<unsigned long long>(r.seed), r.overall.accuracy,
              r.overall.f1, r.overall.proxy_rate, r.splits[0].accuracy, r.splits[1].accuracy, r.splits[2].accuracy);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// "lo:hi:step" or a comma list.
std::vector<double> parse_grid(const std::string& s) {
  std::vector<double> out;
  try {
    if (s.find(':') != std::string::npos) {
      const auto parts = [&] {
        std::vector<std::string> p;
        std::stringstream ss(s);
        for (std::string item; std::getline(ss, item, ':');) p.push_back(item);
        return p;
      }();
      if (parts.size() != 3) throw ConfigError("grid must be lo:hi:step");
      const double lo = std::stod(parts[0]), hi = std::stod(parts[1]), step = std::stod(parts[2]);
      if (!(step > 0.0) || hi < lo) throw ConfigError("grid needs step > 0 and hi >= lo");
      for (int i = 0; lo + i * step <= hi + 1e-12; ++i) out.push_back(lo + i * step);
    } else {
      for (const auto& item : split_list(s)) out.push_back(std::stod(item));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse grid '" + s + "'");
  }
  if (out.empty()) throw ConfigError("empty grid");
  return out;
}

int cmd_print_config(const ConfigFlags& flags) {
  std::cout << flags.build().to_kv().serialize();
  return kOk;
}

int cmd_gen_task(const ConfigFlags& flags, const std::string& path, const std::string& scenes_dir) {
  const RunConfig c = flags.build();
  const ProbeTask task = build_task(c.world, c.task);
  const fs::path target = path.empty() ? (c.task_path.empty() ? fs::path("task.json") : fs::path(c.task_path)) : fs::path(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  task.save(target);
  if (!scenes_dir.empty()) {
    fs::create_directories(scenes_dir);
    for (std::size_t i = 0; i < task.scenes.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%04zu", i);
      save_scene(task.scenes[i], fs::path(scenes_dir) / name);
    }
  }
  std::printf("task %s: %zu scenes, %zu questions -> %s\n", task.fingerprint().c_str(), task.scenes.size(),
              task.questions.size(), target.string().c_str());
  return kOk;
}

int cmd_run(const ConfigFlags& flags, std::uint64_t seed) {
  const RunConfig c = flags.build(seed);
  const ProbeTask task = load_or_build_task(c);
  const RunResult r = run_experiment(c, task);
  const std::vector<RunResult> results{r};
  emit_report(results, output_dir(c));
  print_result(r);
  std::printf("config %s, report in %s\n", r.fingerprint.c_str(), output_dir(c).c_str());
  return kOk;
}

int cmd_sweep(const ConfigFlags& flags, const std::string& modes, const std::string& seeds, unsigned workers,
              const std::string& bias_grid, double target) {
  const RunConfig base = flags.build();
  const ProbeTask task = load_or_build_task(base);
  const fs::path dir = output_dir(base);
  fs::create_directories(dir);

  if (!bias_grid.empty()) {
    const auto grid = parse_grid(bias_grid);
    const BiasSweep sweep = sweep_prior_bias(base, task, grid, target);
    std::string csv = "beta,proxy_rate,accuracy\n";
    for (const auto& p : sweep.points) {
      csv += format_double(p.beta) + "," + format_double(p.proxy_rate) + "," + format_double(p.accuracy) + "\n";
      std::printf("beta=%-8g proxy=%.4f acc=%.4f\n", p.beta, p.proxy_rate, p.accuracy);
    }
    write_text_file(dir / "bias_sweep.csv", csv);
    if (sweep.chosen) {
      std::printf("smallest beta with proxy >= %g: %g\n", target, *sweep.chosen);
    } else {
      std::printf("no beta in the grid reaches proxy >= %g\n", target);
    }
    return kOk;
  }

  std::vector<Mode> mode_list;
  if (modes == "all") {
    mode_list.assign(kModes.begin(), kModes.end());
  } else {
    for (const auto& m : split_list(modes)) mode_list.push_back(mode_from_string(m));
  }
  std::vector<std::uint64_t> seed_list;
  try {
    for (const auto& s : split_list(seeds)) seed_list.push_back(std::stoull(s));
  } catch (const std::logic_error&) {
    throw ConfigError("cannot parse --seeds '" + seeds + "'");
  }
  if (mode_list.empty() || seed_list.empty()) throw ConfigError("sweep needs at least one mode and one seed");

  std::vector<RunConfig> configs;
  for (Mode m : mode_list) {
    for (std::uint64_t s : seed_list) {
      RunConfig c = base;
      c.mode = m;
      c.seed = s;
      configs.push_back(c);
    }
  }
  const auto results = run_grid(configs, task, workers);
  emit_report(results, dir);
  for (const auto& r : results) print_result(r);
  std::printf("%zu runs, report in %s\n", results.size(), dir.string().c_str());
  return kOk;
}

int cmd_diagnose(const ConfigFlags& flags, std::uint64_t seed, std::size_t scenes, int steps, bool overhead,
                 int repeats) {
  const RunConfig c = flags.build(seed);
  const ProbeTask task = load_or_build_task(c);
  DiagnoseOptions opt;
  opt.scenes = scenes;
  opt.trace_steps = steps;
  const DiagnosticsBundle b = run_diagnostics(c, task, opt);
  const fs::path dir = output_dir(c);
  write_diagnostics(b, dir);
  std::cout << diagnostics_json(b);
  if (overhead) {
    const World world = build_world(c.decoder, c.world);
    nlohmann::json j = nlohmann::json::array();
    for (int max_new : {16, 64, 256}) {
      const OverheadReport o = measure_overhead(c, world, task.scenes.at(0), 0, max_new, repeats);
      j.push_back({{"max_new", o.max_new},
                   {"vanilla_per_token", o.vanilla_per_token},
                   {"pipeline_per_token", o.pipeline_per_token},
                   {"ratio", o.ratio},
                   {"probe_seconds", o.probe_seconds},
                   {"amortized_probe_per_token", o.amortized_probe_per_token}});
      std::printf("max_new=%-4d per-token ratio %.3f, probe %.2f ms (%.3f ms/token amortized)\n", max_new, o.ratio,
                  1e3 * o.probe_seconds, 1e3 * o.amortized_probe_per_token);
    }
    write_text_file(dir / "overhead.json", j.dump(2) + "\n");
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<RunResult> all;
  for (const auto& in : inputs) {
    fs::path p = in;
    if (fs::is_directory(p)) p /= "results.csv";
    std::ifstream f(p, std::ios::binary);
    if (!f) throw IoError("cannot read " + p.string());
    std::stringstream ss;
    ss << f.rdbuf();
    const auto rs = parse_results_csv(ss.str());
    all.insert(all.end(), rs.begin(), rs.end());
  }
  sort_results(all);
  for (const auto& r : all) print_result(r);
  if (!out.empty()) {
    fs::create_directories(out);
    write_text_file(fs::path(out) / "results.csv", results_csv(all));
    std::printf("%zu rows -> %s\n", all.size(), (fs::path(out) / "results.csv").string().c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vtcal: toy decoder with vision-token calibration"};
  app.require_subcommand(1);

  ConfigFlags pc_flags;
  auto* pc = app.add_subcommand("print-config", "print the effective configuration");
  pc_flags.attach(pc);

  ConfigFlags gen_flags;
  std::string task_out, scenes_dir;
  auto* gen = app.add_subcommand("gen-task", "generate the synthetic yes/no task");
  gen_flags.attach(gen, false);
  gen->add_option("--task-out", task_out, "task file to write (default io.task_path or task.json)");
  gen->add_option("--scenes-dir", scenes_dir, "also export every scene as PPM + JSON");

  ConfigFlags run_flags;
  std::uint64_t run_seed = 0;
  auto* run = app.add_subcommand("run", "run one mode and write results.csv / summary.json / timing.json");
  run_flags.attach(run);
  run->add_option("--seed", run_seed, "run seed (augmentation, negatives, masks)")->required();

  ConfigFlags sweep_flags;
  std::string sweep_modes = "all", sweep_seeds = "1", bias_grid;
  unsigned workers = 0;
  double bias_target = 0.3;
  auto* sweep = app.add_subcommand("sweep", "run a mode x seed grid, or a prior-bias sweep");
  sweep_flags.attach(sweep, false);
  sweep->add_option("--modes", sweep_modes, "comma list or 'all'");
  sweep->add_option("--seeds", sweep_seeds, "comma list of run seeds");
  sweep->add_option("--workers", workers, "concurrent runs (0: hardware threads)");
  sweep->add_option("--prior-bias", bias_grid, "beta grid lo:hi:step or list; vanilla proxy rate per beta");
  sweep->add_option("--target", bias_target, "proxy-rate target for --prior-bias");

  ConfigFlags diag_flags;
  std::uint64_t diag_seed = 0;
  std::size_t diag_scenes = 50;
  int diag_steps = 32, repeats = 5;
  bool with_overhead = false;
  auto* diag = app.add_subcommand("diagnose", "attention decay, overlap, distances, pruning sweep");
  diag_flags.attach(diag, false);
  diag->add_option("--seed", diag_seed, "run seed")->required();
  diag->add_option("--scenes", diag_scenes, "scenes for the per-scene diagnostics");
  diag->add_option("--steps", diag_steps, "decode steps for the attention trace");
  diag->add_flag("--overhead", with_overhead, "also time vanilla vs pipeline decoding");
  diag->add_option("--repeats", repeats, "timed repeats per overhead point");

  std::vector<std::string> report_inputs;
  std::string report_out;
  auto* report = app.add_subcommand("report", "merge results.csv files and print them sorted");
  report->add_option("inputs", report_inputs, "result directories or CSV files")->required();
  report->add_option("-o,--out", report_out, "directory for the merged results.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*pc) return cmd_print_config(pc_flags);
    if (*gen) return cmd_gen_task(gen_flags, task_out, scenes_dir);
    if (*run) return cmd_run(run_flags, run_seed);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_modes, sweep_seeds, workers, bias_grid, bias_target);
    if (*diag) return cmd_diagnose(diag_flags, diag_seed, diag_scenes, diag_steps, with_overhead, repeats);
    if (*report) return cmd_report(report_inputs, report_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  return kUsage;
}

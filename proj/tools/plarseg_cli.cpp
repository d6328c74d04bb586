// plarseg command-line front end.
//
//   plarseg make-data   --config cfg.json [--seed N] [--out DIR]
//   plarseg run         --config cfg.json [--seed N] [--resume] [--rounds N]
//   plarseg eval        --config cfg.json [--seed N] [--checkpoint DIR]
//   plarseg serve       --config cfg.json [--seed N] [--host H] [--port P]
//   plarseg export-viz  --config cfg.json [--seed N] [--checkpoint DIR] [--out DIR] [--count N]

#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "plarseg/errmap/error_mask.hpp"
#include "plarseg/eval/viz.hpp"
#include "plarseg/loop/config.hpp"
#include "plarseg/loop/runner.hpp"
#include "plarseg/loop/service.hpp"
#include "plarseg/numkit/ops.hpp"
#include "plarseg/synth/dataset.hpp"

namespace fs = std::filesystem;
using namespace plarseg;
using nlohmann::json;

namespace {

std::atomic<bool> g_interrupted{false};

void on_signal(int) { g_interrupted = true; }

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration")->required()->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "overrides the configured seed");
}

loop::LoopConfig load(const Common& c) {
  auto cfg = loop::load_loop_config(c.config);
  if (c.seed) loop::apply_seed(cfg, *c.seed);
  return cfg;
}

fs::path checkpoint_dir(const loop::LoopConfig& cfg, const std::string& given) {
  return given.empty() ? fs::path(cfg.out_dir) / "checkpoint" : fs::path(given);
}

void print_round(const loop::RoundMetrics& m) {
  std::printf("round %d  iter %d  mIoU teacher %.4f student %.4f  pl %.4f -> %.4f  auto %lld  manual %lld  budget %lld/%lld\n",
              m.round, m.iter, m.miou_teacher, m.miou_student, m.pl_acc_before, m.pl_acc_after,
              static_cast<long long>(m.auto_pixels), static_cast<long long>(m.manual_pixels),
              static_cast<long long>(m.budget_spent), static_cast<long long>(m.budget_total));
}

std::unique_ptr<loop::LoopRunner> open_runner(const loop::LoopConfig& cfg, const fs::path& ckpt, bool resume) {
  if (resume && fs::exists(ckpt / "state.json")) {
    std::fprintf(stderr, "resuming from %s\n", ckpt.string().c_str());
    return loop::LoopRunner::resume(ckpt, nullptr, cfg);
  }
  return std::make_unique<loop::LoopRunner>(cfg, loop::prepare_dataset(cfg));
}

int cmd_make_data(const Common& c, const std::string& out) {
  const auto cfg = load(c);
  const fs::path root = out.empty() ? fs::path(cfg.out_dir) / "data" : fs::path(out);
  const auto ds = synth::make_dataset(cfg.data);
  synth::save_dataset(ds, root);
  std::printf("wrote %zu labelled, %zu unlabelled, %zu val, %zu test images to %s\n", ds.labelled.size(),
              ds.unlabelled.size(), ds.val.size(), ds.test.size(), root.string().c_str());
  return 0;
}

int cmd_run(const Common& c, bool resume, std::optional<int> rounds) {
  const auto cfg = load(c);
  auto runner = open_runner(cfg, fs::path(cfg.out_dir) / "checkpoint", resume);
  const std::size_t before = runner->metrics().size();
  const auto status = runner->run(rounds);
  for (std::size_t i = before; i < runner->metrics().size(); ++i) print_round(runner->metrics()[i]);
  runner->write_csvs(cfg.out_dir);
  switch (status) {
    case loop::RunStatus::COMPLETED:
      std::printf("completed %d rounds; metrics in %s\n", cfg.rounds, (fs::path(cfg.out_dir) / "metrics.csv").string().c_str());
      break;
    case loop::RunStatus::STOPPED:
      std::printf("stopped before round %d; continue with --resume\n", runner->next_round());
      break;
    case loop::RunStatus::PAUSED:
      std::printf("paused with %zu pixels awaiting annotation; start `serve` to collect them\n",
                  runner->hub() ? runner->hub()->queued_pixels() : std::size_t{0});
      break;
  }
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt_arg) {
  const auto cfg = load(c);
  const fs::path ckpt = checkpoint_dir(cfg, ckpt_arg);
  if (!fs::exists(ckpt / "state.json")) {
    std::fprintf(stderr, "no checkpoint at %s\n", ckpt.string().c_str());
    return 2;
  }
  auto runner = loop::LoopRunner::resume(ckpt, nullptr, cfg);
  const auto& ds = runner->dataset();
  json out{{"rounds_completed", runner->next_round()}};
  auto split = [&](const char* name, const std::vector<synth::Sample>& v) {
    if (v.empty()) return;
    std::vector<const synth::Sample*> p;
    for (const auto& s : v) p.push_back(&s);
    out[name] = {{"teacher", eval::to_json(runner->evaluate(p, true))},
                 {"student", eval::to_json(runner->evaluate(p, false))}};
  };
  split("val", ds.val);
  split("test", ds.test);
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_serve(const Common& c, const std::string& host, int port, bool exit_when_done) {
  auto cfg = load(c);
  cfg.oracle_mode = loop::OracleMode::HUMAN;
  auto runner = open_runner(cfg, fs::path(cfg.out_dir) / "checkpoint", true);
  loop::AnnotationService svc(*runner->hub());
  const int bound = svc.start(host, port);
  std::printf("annotation service on http://%s:%d\n", host.c_str(), bound);
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  runner->attach_service();
  while (!g_interrupted && runner->next_round() < runner->config().rounds) {
    runner->run(1);
    print_round(runner->metrics().back());
    std::fflush(stdout);
  }
  runner->write_csvs(runner->config().out_dir);
  if (!exit_when_done) {
    std::printf("training finished; serving until interrupted\n");
    std::fflush(stdout);
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  svc.stop();
  return 0;
}

int cmd_export_viz(const Common& c, const std::string& ckpt_arg, const std::string& out, int count) {
  const auto cfg = load(c);
  const fs::path ckpt = checkpoint_dir(cfg, ckpt_arg);
  std::unique_ptr<loop::LoopRunner> runner;
  if (fs::exists(ckpt / "state.json")) {
    runner = loop::LoopRunner::resume(ckpt, nullptr, cfg);
  } else {
    std::fprintf(stderr, "no checkpoint at %s; exporting the untrained state\n", ckpt.string().c_str());
    runner = std::make_unique<loop::LoopRunner>(cfg, loop::prepare_dataset(cfg));
  }
  const fs::path dir = out.empty() ? fs::path(cfg.out_dir) / "viz" : fs::path(out);
  const auto& ds = runner->dataset();
  const auto palette = synth::default_palette(ds.spec.scene);
  const int n = std::min<int>(count, static_cast<int>(runner->unlabelled().size()));
  for (int i = 0; i < n; ++i) {
    const synth::Sample& s = *runner->unlabelled()[static_cast<std::size_t>(i)];
    const auto pv = runner->preview(s);
    const auto& gt = ds.vault.reveal(s.id);
    const auto a = eval::export_correction_panels(dir, s.id + "_correction", s, pv.before, pv.after, gt, palette);
    const int gh = pv.prob_grid.dim(1), gw = pv.prob_grid.dim(2);
    const auto truth = errmap::true_error_map(numkit::argmax_channels(pv.prob_grid), synth::resize_labels(gt, gh, gw));
    const auto b = eval::export_threshold_sweep(dir, s.id + "_sweep", pv.prob_grid, truth, {0.7f, 0.8f, 0.9f},
                                                ds.spec.scene.height, ds.spec.scene.width);
    std::printf("%s (%d panels)\n%s (%d panels)\n", a.path.string().c_str(), a.panels, b.path.string().c_str(), b.panels);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised segmentation with active-learned pseudo-label refinement"};
  app.require_subcommand(1);

  Common common;
  std::string out, ckpt, host = "127.0.0.1";
  int port = 8080, count = 4;
  bool resume = false, exit_when_done = false;
  std::optional<int> rounds;

  auto* make_data = app.add_subcommand("make-data", "generate and save the synthetic dataset");
  add_common(make_data, common);
  make_data->add_option("--out", out, "output directory (default <out_dir>/data)");

  auto* run = app.add_subcommand("run", "train with the simulated or queued human oracle");
  add_common(run, common);
  run->add_flag("--resume", resume, "continue from <out_dir>/checkpoint when present");
  run->add_option("--rounds", rounds, "stop after this many more rounds");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the val and test splits");
  add_common(ev, common);
  ev->add_option("--checkpoint", ckpt, "checkpoint directory (default <out_dir>/checkpoint)");

  auto* serve = app.add_subcommand("serve", "train in HUMAN mode behind the annotation HTTP API");
  add_common(serve, common);
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "bind port, 0 picks one");
  serve->add_flag("--exit-when-done", exit_when_done, "stop serving once training completes");

  auto* viz = app.add_subcommand("export-viz", "write correction and threshold-sweep panels");
  add_common(viz, common);
  viz->add_option("--checkpoint", ckpt, "checkpoint directory (default <out_dir>/checkpoint)");
  viz->add_option("--out", out, "output directory (default <out_dir>/viz)");
  viz->add_option("--count", count, "number of unlabelled images")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (make_data->parsed()) return cmd_make_data(common, out);
    if (run->parsed()) return cmd_run(common, resume, rounds);
    if (ev->parsed()) return cmd_eval(common, ckpt);
    if (serve->parsed()) return cmd_serve(common, host, port, exit_when_done);
    if (viz->parsed()) return cmd_export_viz(common, ckpt, out, count);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

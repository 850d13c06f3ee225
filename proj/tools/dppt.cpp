#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "dppt/behavior.hpp"
#include "dppt/experiment.hpp"
#include "dppt/image.hpp"
#include "dppt/label_server.hpp"
#include "dppt/perception.hpp"
#include "dppt/scene.hpp"

namespace fs = std::filesystem;
using namespace dppt;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string preset = "desk";
  std::string out;
};

experiments::ExperimentConfig experiment_config(const Common& c) {
  experiments::ExperimentConfig cfg = c.config.empty() ? experiments::ExperimentConfig{} : experiments::load_config(c.config);
  if (c.seed_set) cfg.seed = c.seed;
  if (!c.out.empty()) cfg.out_dir = c.out;
  cfg.preset = experiments::preset_from_string(c.preset);
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Trace raster: every pose in light gray, the final pose dark, end-effector
// path in blue, ball flight in orange, target in red. World window [-0.8, 0.8] x [-0.1, 0.8].
void export_trace_png(const arm::EpisodeTrace& trace, const arm::ArmConfig& config, const fs::path& path,
                      std::size_t size) {
  Tensor img({3, size, size}, 1.0);
  const double x0 = -0.8, x1 = 0.8, y0 = -0.1, y1 = 0.8;
  const auto to_px = [&](arm::Vec2 p) {
    return std::pair{(p.x - x0) / (x1 - x0) * (size - 1), (y1 - p.y) / (y1 - y0) * (size - 1)};
  };
  const auto plot = [&](double px, double py, std::array<double, 3> rgb) {
    const long ix = std::lround(px), iy = std::lround(py);
    if (ix < 0 || iy < 0 || ix >= static_cast<long>(size) || iy >= static_cast<long>(size)) return;
    for (std::size_t c = 0; c < 3; ++c) img[(c * size + iy) * size + ix] = rgb[c];
  };
  const auto line = [&](arm::Vec2 a, arm::Vec2 b, std::array<double, 3> rgb) {
    const auto [ax, ay] = to_px(a);
    const auto [bx, by] = to_px(b);
    const int n = std::max(1, static_cast<int>(std::ceil(std::max(std::abs(bx - ax), std::abs(by - ay)))));
    for (int i = 0; i <= n; ++i) plot(ax + (bx - ax) * i / n, ay + (by - ay) * i / n, rgb);
  };
  const auto joints = [&](const arm::ArmState& s) {
    std::vector<arm::Vec2> pts{{0.0, 0.0}};
    double angle = 0.0;
    for (std::size_t j = 0; j < s.joint_angles.size(); ++j) {
      angle += s.joint_angles[j];
      pts.push_back(pts.back() + config.link_lengths[j] * arm::Vec2{std::cos(angle), std::sin(angle)});
    }
    return pts;
  };
  line({x0, 0.0}, {x1, 0.0}, {0.55, 0.45, 0.35});
  for (std::size_t k = 0; k + 1 < trace.states.size(); ++k) {
    const auto pts = joints(trace.states[k]);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) line(pts[i], pts[i + 1], {0.8, 0.8, 0.8});
  }
  if (!trace.states.empty()) {
    const auto pts = joints(trace.states.back());
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) line(pts[i], pts[i + 1], {0.15, 0.15, 0.15});
  }
  for (std::size_t k = 0; k + 1 < trace.path.size(); ++k) line(trace.path[k], trace.path[k + 1], {0.1, 0.3, 0.9});
  for (const auto& s : trace.states) {
    if (s.ball) {
      const auto [px, py] = to_px(s.ball->position);
      plot(px, py, {0.95, 0.55, 0.1});
    }
  }
  if (trace.outcome.target) {
    const auto [tx, ty] = to_px(*trace.outcome.target);
    for (int d = -3; d <= 3; ++d) {
      plot(tx + d, ty, {0.9, 0.1, 0.1});
      plot(tx, ty + d, {0.9, 0.1, 0.1});
    }
  }
  write_png(path, quantize_levels(std::move(img)));
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Training reallocates the same large buffers every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Predictive policy training on a simulated planar arm"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "Experiment config (JSON)");
  app.add_option("--seed", common.seed, "Master seed")->each([&](const std::string&) { common.seed_set = true; });
  app.add_option("--preset", common.preset, "Model scale")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--out", common.out, "Output path");

  auto* gen_scenes = app.add_subcommand("gen-scenes", "Render the synthetic perception dataset");
  std::size_t bases = 40, augment = 12;
  int jitter = 3;
  gen_scenes->add_option("--bases", bases, "Base target positions");
  gen_scenes->add_option("--augment", augment, "Jittered renders per base");
  gen_scenes->add_option("--jitter", jitter, "Jitter radius, pixels");

  auto* gen_traj = app.add_subcommand("gen-trajectories", "Sample the blind-policy trajectory corpus");
  std::size_t count = 4000;
  std::string task_name = "grasp";
  gen_traj->add_option("--count", count, "Trajectories");
  gen_traj->add_option("--task", task_name, "reach, grasp or throw")->check(CLI::IsMember({"reach", "grasp", "throw"}));

  auto* train_perc = app.add_subcommand("train-perception", "Train the spatial autoencoder");
  std::string data_dir;
  perception::TrainConfig perc_cfg;
  train_perc->add_option("--data", data_dir, "Scene dataset directory")->required();
  train_perc->add_option("--epochs", perc_cfg.epochs, "Epochs");
  train_perc->add_option("--lambda-slow", perc_cfg.lambda_slow, "Slowness weight");

  auto* train_beh = app.add_subcommand("train-behavior", "Train the trajectory VAE");
  std::string corpus_path;
  behavior::TrainConfig beh_cfg;
  train_beh->add_option("--corpus", corpus_path, "Trajectory corpus")->required();
  train_beh->add_option("--steps", beh_cfg.steps, "Optimizer steps");

  auto* train_pol = app.add_subcommand("train-policy", "Run the policy search experiment");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a deterministic policy");
  std::string policy_path;
  evaluate->add_option("--policy", policy_path, "Policy checkpoint")->required();

  auto* serve = app.add_subcommand("serve", "Train with human labels served over HTTP");
  std::string host = "127.0.0.1", static_dir;
  int port = 8080;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (0 picks one)");
  serve->add_option("--static", static_dir, "Console bundle directory");

  auto* export_trace = app.add_subcommand("export-trace", "Render a trace JSON file as PNG");
  std::string trace_path;
  std::size_t png_size = 320;
  export_trace->add_option("--trace", trace_path, "Trace JSON")->required();
  export_trace->add_option("--size", png_size, "Image edge, pixels");

  CLI11_PARSE(app, argc, argv);

  try {
    const bool paper = common.preset == "paper";
    if (*gen_scenes) {
      if (common.out.empty()) throw std::invalid_argument("--out is required");
      scene::DatasetOptions opts;
      const auto pc = paper ? perception::PerceptionConfig::paper() : perception::PerceptionConfig::desk();
      opts.canvas = pc.canvas;
      opts.target_canvas = pc.target_canvas;
      opts.augmentations_per_base = augment;
      opts.jitter_px = jitter;
      const auto sprites = scene::SpriteSet::standard();
      Rng rng = make_rng(common.seed, "dataset");
      const double margin = scene::placement_margin(sprites.target().size, opts.canvas);
      const auto positions = scene::random_base_positions(bases, rng, margin);
      const auto ds = scene::make_dataset(positions, opts, rng, sprites);
      scene::save_dataset(ds, common.out);
      std::cout << "wrote " << ds.samples.size() << " scenes to " << common.out << '\n';
    } else if (*gen_traj) {
      if (common.out.empty()) throw std::invalid_argument("--out is required");
      const auto task = task_name == "throw" ? arm::Task::throw_ball : arm::Task::reach_grasp;
      const auto corpus = behavior::generate_corpus(task, count, common.seed, arm::ArmConfig{});
      behavior::save_corpus(corpus, common.out);
      std::cout << "wrote " << corpus.trajectories.size() << " trajectories to " << common.out << '\n';
    } else if (*train_perc) {
      if (common.out.empty()) throw std::invalid_argument("--out is required");
      const auto ds = scene::load_dataset(data_dir);
      perception::PerceptionModel model(paper ? perception::PerceptionConfig::paper() : perception::PerceptionConfig::desk());
      Rng rng = make_rng(common.seed, "perception-init");
      model.initialize(rng);
      Rng train_rng = make_rng(common.seed, "perception-train");
      perception::train_perception(model, ds, perc_cfg, train_rng, [](const perception::EpochLog& e) {
        std::printf("epoch %zu loss %.6g recon %.6g slow %.6g alpha %.4g\n", e.epoch, e.loss, e.reconstruction,
                    e.slowness, e.alpha);
      });
      const auto rep = perception::reconstruction_report(model, ds);
      std::printf("reconstruction mse %.6g (mean-image baseline %.6g)\n", rep.model_mse, rep.mean_baseline_mse);
      model.to_checkpoint().save(common.out);
    } else if (*train_beh) {
      if (common.out.empty()) throw std::invalid_argument("--out is required");
      const auto corpus = behavior::load_corpus(corpus_path);
      behavior::BehaviorModel model(paper ? behavior::BehaviorConfig::paper() : behavior::BehaviorConfig::desk());
      Rng rng = make_rng(common.seed, "behavior-init");
      model.initialize(rng);
      Rng train_rng = make_rng(common.seed, "behavior-train");
      const auto res = behavior::train_behavior(model, corpus.trajectories, beh_cfg, train_rng, [](const behavior::StepLog& s) {
        std::printf("step %zu recon %.6g kl %.6g beta %.3g\n", s.step, s.reconstruction, s.kl, s.beta);
      });
      std::printf("holdout rmse %.6g (command std %.6g)\n", res.holdout_rmse, res.corpus_std);
      model.to_checkpoint().save(common.out);
    } else if (*train_pol) {
      auto cfg = experiment_config(common);
      if (cfg.reward_mode == experiments::RewardMode::qualitative_human && cfg.label_log.empty()) {
        throw std::invalid_argument("human reward mode runs through 'serve' or replays a label_log");
      }
      const auto models = experiments::load_models(cfg);
      std::unique_ptr<experiments::ReplayLabelSource> replay;
      experiments::RunHooks hooks;
      hooks.on_iteration = [](const experiments::IterationSummary& s) {
        std::printf("iteration %zu mean %.6g std %.6g valid %zu\n", s.iteration, s.mean_reward, s.std_reward,
                    s.valid_episodes);
      };
      if (cfg.reward_mode == experiments::RewardMode::qualitative_human) {
        replay = std::make_unique<experiments::ReplayLabelSource>(labels::read_label_log(cfg.label_log));
        hooks.labels = replay.get();
      }
      const auto res = experiments::run_experiment(cfg, models, hooks);
      std::printf("episodes %zu invalid %zu\n", res.total_episodes, res.invalid_episodes);
    } else if (*evaluate) {
      const auto cfg = experiment_config(common);
      const auto models = experiments::load_models(cfg);
      const auto params = policy::PolicyParams::from_checkpoint(Checkpoint::load(policy_path));
      const json report = experiments::evaluate_policy(params, cfg, models).to_json();
      std::cout << report.dump(2) << '\n';
      if (!cfg.out_dir.empty()) write_json(cfg.out_dir / "evaluation.json", report);
    } else if (*serve) {
      auto cfg = experiment_config(common);
      cfg.reward_mode = experiments::RewardMode::qualitative_human;
      cfg.validate();
      const auto models = experiments::load_models(cfg);
      labels::LabelQueue queue(std::chrono::milliseconds(static_cast<long>(cfg.label_timeout_s * 1000)));
      labels::LabelServer server(queue, static_dir);
      const int bound = server.start(host, port);
      std::printf("serving labels on http://%s:%d\n", host.c_str(), bound);
      std::fflush(stdout);
      experiments::QueueLabelSource source(queue);
      experiments::RunHooks hooks;
      hooks.labels = &source;
      try {
        experiments::run_experiment(cfg, models, hooks);
      } catch (const experiments::LabelQueueClosed& e) {
        std::fprintf(stderr, "%s; rerun with \"resume\": true to continue\n", e.what());
        return 2;
      }
    } else if (*export_trace) {
      if (common.out.empty()) throw std::invalid_argument("--out is required");
      std::ifstream in(trace_path);
      if (!in) throw std::runtime_error("cannot open " + trace_path);
      const json doc = json::parse(in);
      export_trace_png(arm::trace_from_json(doc), arm::ArmConfig{}, common.out, png_size);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

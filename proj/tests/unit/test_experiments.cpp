#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "dppt/experiment.hpp"
#include "test_util.hpp"

using namespace dppt;
using namespace dppt::experiments;
using nlohmann::json;

namespace {

std::shared_ptr<const behavior::BehaviorModel> small_behavior() {
  behavior::BehaviorConfig bc;
  bc.shared = {32};
  bc.head = 16;
  bc.decoder = {32};
  auto m = std::make_shared<behavior::BehaviorModel>(bc);
  Rng rng = make_rng(0, "small-behavior");
  m->initialize(rng);
  const auto corpus = behavior::generate_corpus(arm::Task::reach_grasp, 32, 0, arm::ArmConfig{});
  m->set_scaler(behavior::Scaler::fit(corpus.trajectories));
  return m;
}

std::shared_ptr<const perception::PerceptionModel> small_perception() {
  perception::PerceptionConfig c;
  c.canvas = 16;
  c.target_canvas = 8;
  c.conv = {{4, 3, 1}, {3, 3, 1}};
  c.decoder_hidden = {8};
  c.initial_alpha = 0.5;
  auto m = std::make_shared<perception::PerceptionModel>(c);
  Rng rng = make_rng(0, "small-perception");
  m->initialize(rng);
  return m;
}

Models reach_models() { return {small_behavior(), nullptr}; }
Models visual_models() { return {small_behavior(), small_perception()}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig quick(TaskKind task, Optimizer opt, RewardMode mode) {
  ExperimentConfig c;
  c.task = task;
  c.optimizer = opt;
  c.reward_mode = mode;
  c.iterations = 3;
  c.episodes_per_iteration = 6;
  c.cem_population = 6;
  c.reps.mean_steps = 10;
  c.evaluation_scenes = 12;
  return c;
}

}  // namespace

TEST_CASE("config defaults and episode counts") {
  ExperimentConfig c;
  CHECK(c.iterations == 15);
  CHECK(c.episodes() == 25);
  c.task = TaskKind::throw_ball;
  CHECK(c.episodes() == 12);
  c.task = TaskKind::grasp;
  CHECK(c.episodes() == 12);
  c.episodes_per_iteration = 7;
  CHECK(c.episodes() == 7);
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.episodes_per_iteration = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.reward_mode = RewardMode::qualitative_human;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.optimizer = Optimizer::cem;
  c.cem_population = 3;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.cem_extra_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.throw_thresholds.near = 0.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.evaluation_scenes = 11;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("config JSON round trip and unknown keys") {
  ExperimentConfig c;
  c.task = TaskKind::grasp;
  c.optimizer = Optimizer::reps;
  c.reward_mode = RewardMode::qualitative_auto;
  c.seed = 17;
  c.cem_extra_std = 0.5;
  c.trpo.kl_limit = 0.02;
  c.reach_workspace = {-0.2, 0.2, -0.4, -0.1};
  const ExperimentConfig back = config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK(back.reach_workspace.x_min == -0.2);

  const ExperimentConfig partial = config_from_json(json{{"optimizer", "vpg"}});
  CHECK(partial.optimizer == Optimizer::vpg);
  CHECK(partial.iterations == 15);
  CHECK_THROWS(config_from_json(json{{"iteratons", 3}}));
  CHECK_THROWS(config_from_json(json{{"trpo", {{"kl", 0.1}}}}));
  CHECK_THROWS(config_from_json(json{{"optimizer", "sgd"}}));

  const auto path = test_util::scratch_dir("config") / "c.json";
  std::ofstream(path) << R"({"task": "throw", "seed": 4})";
  const ExperimentConfig loaded = load_config(path);
  CHECK(loaded.task == TaskKind::throw_ball);
  CHECK(loaded.seed == 4);
}

TEST_CASE("missing checkpoints are reported") {
  ExperimentConfig c;
  CHECK_THROWS_AS(load_models(c), std::runtime_error);
  c.behavior_checkpoint = "/nonexistent/behavior.json";
  CHECK_THROWS_AS(load_models(c), std::runtime_error);
}

TEST_CASE("reach targets and state") {
  const Workspace w = ExperimentConfig::default_reach_workspace();
  const auto train = reach_training_targets(w), novel = reach_novel_targets(w);
  CHECK(train.size() == 25);
  CHECK(novel.size() == 16);
  for (const auto& t : novel) {
    for (const auto& g : train) CHECK(arm::norm(t - g) > 1e-3);
    CHECK(t.x > w.x_min);
    CHECK(t.x < w.x_max);
  }
  const Tensor s = reach_state(w, {w.x_min, w.y_max});
  REQUIRE(s.size() == 2);
  CHECK(s[0] == doctest::Approx(-1.0));
  CHECK(s[1] == doctest::Approx(1.0));
  const TaskEnvironment env(ExperimentConfig{}, reach_models());
  CHECK(env.state_dim() == 2);
}

TEST_CASE("reach run writes one log row per iteration") {
  ExperimentConfig c;
  c.iterations = 15;
  c.out_dir = test_util::scratch_dir("reach-run");
  const ExperimentResult r = run_experiment(c, reach_models());
  CHECK(r.curve.size() == 15);
  CHECK(r.total_episodes == 15 * 25);
  CHECK(r.invalid_episodes == 0);
  std::ifstream in(c.out_dir / "learning_curve.csv");
  std::string line;
  std::size_t rows = 0;
  std::getline(in, line);
  while (std::getline(in, line)) rows += !line.empty();
  CHECK(rows == 15);
  CHECK(std::filesystem::exists(c.out_dir / "policy.json"));
  CHECK(std::filesystem::exists(c.out_dir / "policy_iter_014.json"));
  CHECK(std::filesystem::exists(c.out_dir / "training_log.csv"));
}

TEST_CASE("auto-reward reruns are byte-identical") {
  for (const Optimizer opt : {Optimizer::trpo, Optimizer::vpg, Optimizer::cem, Optimizer::reps}) {
    ExperimentConfig c = quick(TaskKind::reach, opt, RewardMode::continuous);
    c.seed = 3;
    c.out_dir = test_util::scratch_dir("rerun-a");
    const ExperimentResult a = run_experiment(c, reach_models());
    const std::string csv_a = slurp(c.out_dir / "learning_curve.csv");
    c.out_dir = test_util::scratch_dir("rerun-b");
    const ExperimentResult b = run_experiment(c, reach_models());
    CHECK(csv_a == slurp(c.out_dir / "learning_curve.csv"));
    CHECK(a.policy.flat() == b.policy.flat());
  }
}

TEST_CASE("different seeds give different curves") {
  ExperimentConfig c = quick(TaskKind::reach, Optimizer::trpo, RewardMode::continuous);
  const auto a = run_experiment(c, reach_models());
  c.seed = 1;
  const auto b = run_experiment(c, reach_models());
  CHECK(a.curve[0].mean_reward != b.curve[0].mean_reward);
}

TEST_CASE("evaluation cells") {
  const Models reach = reach_models();
  ExperimentConfig c;
  Rng rng = make_rng(0, "eval-policy");
  const auto p = policy::policy_init(2, rng);
  const EvaluationReport rep = evaluate_policy(p, c, reach);
  CHECK(rep.cells.size() == 4);
  CHECK(rep.cell("train_continuous").attempts == 25);
  CHECK(rep.cell("novel_continuous").attempts == 16);
  for (const auto& cell : rep.cells) CHECK(cell.attempts >= 12);
  CHECK_THROWS_AS(rep.cell("none"), std::out_of_range);
  CHECK(rep.to_json()["cells"].size() == 4);

  const Models visual = visual_models();
  for (const TaskKind t : {TaskKind::throw_ball, TaskKind::grasp}) {
    ExperimentConfig v = quick(t, Optimizer::trpo, RewardMode::qualitative_auto);
    Rng prng = make_rng(0, "eval-visual");
    const auto vp = policy::policy_init(visual.perception->state_dim(), prng);
    const EvaluationReport r = evaluate_policy(vp, v, visual);
    REQUIRE(r.cells.size() == 3);
    CHECK(r.cells[0].name == "none");
    CHECK(r.cells[1].name == "known");
    CHECK(r.cells[2].name == "unknown");
    for (const auto& cell : r.cells) CHECK(cell.attempts == 12);
  }
  CHECK_THROWS_AS(evaluate_policy(p, quick(TaskKind::grasp, Optimizer::trpo, RewardMode::continuous), visual),
                  std::invalid_argument);
}

TEST_CASE("initial reach policy scores the zero-action endpoint") {
  const Models models = reach_models();
  ExperimentConfig c;
  Rng rng = make_rng(5, "init-policy");
  const auto p = policy::policy_init(2, rng);
  const auto u = behavior::decode_action(*models.behavior, std::vector<double>(5, 0.0), c.arm.velocity_limit);
  const arm::Vec2 end = arm::rollout(arm::initial_state(arm::Task::reach_grasp, c.arm), u, c.arm).path.back();
  const EvaluationReport rep = evaluate_policy(p, c, models);
  for (const auto& [name, targets] : {std::pair{std::string("train"), reach_training_targets(c.reach_workspace)},
                                      std::pair{std::string("novel"), reach_novel_targets(c.reach_workspace)}}) {
    double sum = 0.0;
    for (const auto& t : targets) sum += 1.0 - std::sqrt(std::hypot(end.x - t.x, end.y - t.y));
    CHECK(rep.cell(name + "_continuous").mean == doctest::Approx(sum / targets.size()).epsilon(1e-12));
  }
}

TEST_CASE("visual tasks run with automatic qualitative rewards") {
  const Models models = visual_models();
  for (const TaskKind t : {TaskKind::throw_ball, TaskKind::grasp}) {
    ExperimentConfig c = quick(t, Optimizer::trpo, RewardMode::qualitative_auto);
    const ExperimentResult r = run_experiment(c, models);
    CHECK(r.total_episodes == 18);
    for (const auto& s : r.curve) CHECK(std::isfinite(s.mean_reward));
  }
  CHECK_THROWS_AS(TaskEnvironment(quick(TaskKind::grasp, Optimizer::trpo, RewardMode::continuous), reach_models()),
                  std::invalid_argument);
}

TEST_CASE("throw rewards are qualitative values") {
  const Models models = visual_models();
  ExperimentConfig c = quick(TaskKind::throw_ball, Optimizer::trpo, RewardMode::qualitative_auto);
  const TaskEnvironment env(c, models);
  Rng rng = make_rng(0, "throw-values");
  for (int i = 0; i < 20; ++i) {
    const Scenario s = env.draw_training_scenario(rng);
    Tensor a({5});
    for (std::size_t k = 0; k < 5; ++k) a[k] = standard_normal(rng);
    const EpisodeResult r = env.execute(s, a, RewardMode::qualitative_auto);
    CHECK(rewards::is_qualitative_value(r.reward));
    CHECK(r.reward == rewards::throw_reward(*r.trace.outcome.landing_x, s.target.x, c.throw_thresholds).value);
    CHECK(env.execute(s, a, RewardMode::qualitative_auto).reward == r.reward);
  }
}

namespace {

// Labels each pending episode from its trace until the queue closes.
void labeller(labels::LabelQueue& q, std::atomic<bool>& stop) {
  while (!stop) {
    for (const auto& e : q.pending()) {
      const double x = e.trace.at("outcome").value("landing_x", 0.0);
      q.post_label(e.id, x > 0.5 ? 2.0 : (x > 0.2 ? 1.0 : -1.0));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }
}

}  // namespace

TEST_CASE("human labels replay bit-exactly") {
  const Models models = visual_models();
  ExperimentConfig c = quick(TaskKind::throw_ball, Optimizer::trpo, RewardMode::qualitative_human);
  c.out_dir = test_util::scratch_dir("human-live");
  labels::LabelQueue queue(std::chrono::seconds(30));
  QueueLabelSource live(queue);
  std::atomic<bool> stop = false;
  std::thread worker(labeller, std::ref(queue), std::ref(stop));
  const ExperimentResult a = run_experiment(c, models, {.labels = &live});
  stop = true;
  worker.join();
  CHECK(a.labels.size() == 18);
  CHECK(queue.status().iteration == 3);
  CHECK(queue.status().episode == 18);

  ReplayLabelSource replay(labels::read_label_log(c.out_dir / "label_log.jsonl"));
  ExperimentConfig rc = c;
  rc.out_dir = test_util::scratch_dir("human-replay");
  rc.label_log = c.out_dir / "label_log.jsonl";
  const ExperimentResult b = run_experiment(rc, models, {.labels = &replay});
  CHECK(a.labels == b.labels);
  CHECK(a.policy.flat() == b.policy.flat());
  CHECK(slurp(c.out_dir / "learning_curve.csv") == slurp(rc.out_dir / "learning_curve.csv"));
  CHECK_THROWS_AS(run_experiment(c, models), std::invalid_argument);
}

TEST_CASE("missing labels are counted as invalid episodes") {
  const Models models = visual_models();
  ExperimentConfig c = quick(TaskKind::grasp, Optimizer::trpo, RewardMode::qualitative_human);
  std::vector<labels::LoggedLabel> log;
  for (std::size_t e = 0; e < 18; ++e) {
    if (e % 3 != 0) log.push_back({e, e + 1, 1.0});
  }
  ReplayLabelSource replay(log);
  const ExperimentResult r = run_experiment(c, models, {.labels = &replay});
  CHECK(r.total_episodes == 18);
  CHECK(r.invalid_episodes == 6);
  std::size_t valid = 0;
  for (const auto& s : r.curve) {
    CHECK(s.valid_episodes + s.invalid_episodes == 6);
    valid += s.valid_episodes;
  }
  CHECK(valid == r.total_episodes - r.invalid_episodes);
}

TEST_CASE("closing the label queue aborts and the run resumes") {
  const Models models = visual_models();
  ExperimentConfig c = quick(TaskKind::throw_ball, Optimizer::trpo, RewardMode::qualitative_human);
  c.out_dir = test_util::scratch_dir("human-abort");
  labels::LabelQueue queue(std::chrono::seconds(30));
  QueueLabelSource live(queue);
  std::thread closer([&] {
    std::size_t labelled = 0;
    while (labelled < 8) {
      for (const auto& e : queue.pending()) labelled += queue.post_label(e.id, 1.0) == labels::PostResult::ok;
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    while (queue.pending().empty()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
    queue.close();
  });
  CHECK_THROWS_AS(run_experiment(c, models, {.labels = &live}), LabelQueueClosed);
  closer.join();
  const json st = json::parse(slurp(c.out_dir / "run_state.json"));
  CHECK(st["completed"] == 1);

  std::vector<labels::LoggedLabel> rest;
  for (std::size_t e = 0; e < 18; ++e) rest.push_back({e, e + 1, 1.0});
  ReplayLabelSource replay(rest);
  c.resume = true;
  const ExperimentResult r = run_experiment(c, models, {.labels = &replay});
  CHECK(r.curve.size() == 3);
  CHECK(r.total_episodes == 18);
}

TEST_CASE("resume continues a run exactly") {
  for (const Optimizer opt : {Optimizer::trpo, Optimizer::cem}) {
    ExperimentConfig full = quick(TaskKind::reach, opt, RewardMode::continuous);
    full.iterations = 4;
    full.out_dir = test_util::scratch_dir("resume-full");
    const ExperimentResult a = run_experiment(full, reach_models());

    ExperimentConfig part = full;
    part.out_dir = test_util::scratch_dir("resume-part");
    part.iterations = 2;
    run_experiment(part, reach_models());
    part.iterations = 4;
    part.resume = true;
    const ExperimentResult b = run_experiment(part, reach_models());
    CHECK(a.policy.flat() == b.policy.flat());
    CHECK(a.total_episodes == b.total_episodes);
    CHECK(slurp(full.out_dir / "learning_curve.csv") == slurp(part.out_dir / "learning_curve.csv"));
    if (opt == Optimizer::cem) {
      const json st = json::parse(slurp(part.out_dir / "run_state.json"));
      CHECK(st["cem"]["generation"] == 4);
    }
  }
}

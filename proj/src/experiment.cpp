#include "dppt/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace dppt::experiments {

using nlohmann::json;

namespace {

template <typename E, std::size_t N>
E parse_enum(const std::string& s, const std::pair<const char*, E> (&table)[N], const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::pair<const char*, TaskKind> kTasks[] = {
    {"reach", TaskKind::reach}, {"throw", TaskKind::throw_ball}, {"grasp", TaskKind::grasp}};
constexpr std::pair<const char*, Optimizer> kOptimizers[] = {
    {"trpo", Optimizer::trpo}, {"vpg", Optimizer::vpg}, {"cem", Optimizer::cem}, {"reps", Optimizer::reps}};
constexpr std::pair<const char*, RewardMode> kModes[] = {{"continuous", RewardMode::continuous},
                                                         {"discrete", RewardMode::discrete},
                                                         {"qualitative_auto", RewardMode::qualitative_auto},
                                                         {"qualitative_human", RewardMode::qualitative_human}};
constexpr std::pair<const char*, Preset> kPresets[] = {{"desk", Preset::desk}, {"paper", Preset::paper}};

void reject_unknown(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
  if (!obj.is_object()) throw std::invalid_argument(where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, _] : obj.items()) {
    if (!allowed.count(k)) throw std::invalid_argument("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

json workspace_json(const Workspace& w) {
  return {{"x_min", w.x_min}, {"x_max", w.x_max}, {"y_min", w.y_min}, {"y_max", w.y_max}};
}

Workspace workspace_from(const json& j, Workspace w, const std::string& where) {
  reject_unknown(j, {"x_min", "x_max", "y_min", "y_max"}, where);
  read(j, "x_min", w.x_min);
  read(j, "x_max", w.x_max);
  read(j, "y_min", w.y_min);
  read(j, "y_max", w.y_max);
  return w;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// Image positions inside the target placement margin, rescaled to [0, 1].
double unit_from_image(double p, double margin) { return std::clamp((p - margin) / (1.0 - 2.0 * margin), 0.0, 1.0); }

json summary_json(const IterationSummary& s) {
  return {{"iteration", s.iteration}, {"mean", s.mean_reward}, {"std", s.std_reward}, {"valid", s.valid_episodes},
          {"invalid", s.invalid_episodes}, {"kl", s.kl}, {"eta", s.eta}, {"elapsed_s", s.elapsed_s}};
}

IterationSummary summary_from(const json& j) {
  IterationSummary s;
  s.iteration = j.at("iteration").get<std::size_t>();
  s.mean_reward = j.at("mean").get<double>();
  s.std_reward = j.at("std").get<double>();
  s.valid_episodes = j.at("valid").get<std::size_t>();
  s.invalid_episodes = j.at("invalid").get<std::size_t>();
  s.kl = j.at("kl").get<double>();
  s.eta = j.at("eta").get<double>();
  s.elapsed_s = j.at("elapsed_s").get<double>();
  return s;
}

void write_training_log(const std::filesystem::path& path, Optimizer optimizer, const std::vector<IterationSummary>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,optimizer,mean_reward,std_reward,valid_episodes,invalid_episodes,kl,eta,elapsed_s\n";
  for (const auto& s : curve) {
    out << s.iteration << ',' << to_string(optimizer) << ',' << fmt(s.mean_reward) << ',' << fmt(s.std_reward) << ','
        << s.valid_episodes << ',' << s.invalid_episodes << ',' << fmt(s.kl) << ',' << fmt(s.eta) << ','
        << fmt(s.elapsed_s) << '\n';
  }
}

}  // namespace

const char* to_string(TaskKind t) {
  for (const auto& [n, v] : kTasks) {
    if (v == t) return n;
  }
  return "?";
}
const char* to_string(Optimizer o) {
  for (const auto& [n, v] : kOptimizers) {
    if (v == o) return n;
  }
  return "?";
}
const char* to_string(RewardMode m) {
  for (const auto& [n, v] : kModes) {
    if (v == m) return n;
  }
  return "?";
}
const char* to_string(Preset p) {
  for (const auto& [n, v] : kPresets) {
    if (v == p) return n;
  }
  return "?";
}
TaskKind task_kind_from_string(const std::string& s) { return parse_enum(s, kTasks, "task"); }
Optimizer optimizer_from_string(const std::string& s) { return parse_enum(s, kOptimizers, "optimizer"); }
RewardMode reward_mode_from_string(const std::string& s) { return parse_enum(s, kModes, "reward mode"); }
Preset preset_from_string(const std::string& s) { return parse_enum(s, kPresets, "preset"); }

arm::Vec2 Workspace::lerp(double u, double v) const {
  return {x_min + u * (x_max - x_min), y_min + v * (y_max - y_min)};
}

arm::Vec2 Workspace::from_image(scene::ImagePoint p) const { return lerp(p.x, 1.0 - p.y); }

Workspace ExperimentConfig::default_reach_workspace() { return {-0.3, 0.1, -0.3, 0.0}; }

std::size_t ExperimentConfig::episodes() const {
  if (episodes_per_iteration) return episodes_per_iteration;
  return task == TaskKind::reach ? 25 : 12;
}

void ExperimentConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (episodes() < 2) throw std::invalid_argument("episodes_per_iteration must be >= 2");
  if (optimizer == Optimizer::cem && cem_population < 4) throw std::invalid_argument("CEM population must be >= 4");
  if (!(cem_extra_std >= 0.0) || !(cem_extra_decay > 0.0)) {
    throw std::invalid_argument("cem.extra_std must be >= 0 and cem.extra_decay > 0");
  }
  if (reward_mode == RewardMode::qualitative_human && task == TaskKind::reach) {
    throw std::invalid_argument("human labels are only supported for throw and grasp");
  }
  for (const Workspace* w : {&reach_workspace, &grasp_workspace}) {
    if (!(w->x_max > w->x_min) || !(w->y_max > w->y_min)) throw std::invalid_argument("workspace must have positive extent");
  }
  if (!(throw_target_max > throw_target_min)) throw std::invalid_argument("throw target range is empty");
  if (!(throw_thresholds.hit >= 0.0 && throw_thresholds.near >= throw_thresholds.hit)) {
    throw std::invalid_argument("throw thresholds must satisfy 0 <= hit <= near");
  }
  if (evaluation_scenes < 12) throw std::invalid_argument("evaluation needs at least 12 scenes per condition");
  if (!(label_timeout_s > 0.0)) throw std::invalid_argument("label timeout must be positive");
  arm.validate();
}

json to_json(const ExperimentConfig& c) {
  return {{"task", to_string(c.task)},
          {"optimizer", to_string(c.optimizer)},
          {"reward_mode", to_string(c.reward_mode)},
          {"preset", to_string(c.preset)},
          {"iterations", c.iterations},
          {"episodes_per_iteration", c.episodes()},
          {"seed", c.seed},
          {"behavior_checkpoint", c.behavior_checkpoint.string()},
          {"perception_checkpoint", c.perception_checkpoint.string()},
          {"out_dir", c.out_dir.string()},
          {"label_log", c.label_log.string()},
          {"resume", c.resume},
          {"trpo",
           {{"kl_limit", c.trpo.kl_limit},
            {"cg_iterations", c.trpo.cg_iterations},
            {"damping", c.trpo.damping},
            {"backtracks", c.trpo.backtracks}}},
          {"vpg", {{"lr", c.vpg_lr}}},
          {"cem",
           {{"population", c.cem_population},
            {"elite_fraction", c.cem_elite_fraction},
            {"initial_std", c.cem_initial_std},
            {"extra_std", c.cem_extra_std},
            {"extra_decay", c.cem_extra_decay}}},
          {"reps", {{"epsilon", c.reps.epsilon}, {"mean_steps", c.reps.mean_steps}, {"mean_lr", c.reps.mean_lr}}},
          {"reach_workspace", workspace_json(c.reach_workspace)},
          {"grasp_workspace", workspace_json(c.grasp_workspace)},
          {"throw",
           {{"target_min", c.throw_target_min},
            {"target_max", c.throw_target_max},
            {"hit", c.throw_thresholds.hit},
            {"near", c.throw_thresholds.near}}},
          {"grasp", {{"success", c.grasp_thresholds.grasp}, {"touch", c.grasp_thresholds.touch}}},
          {"discrete",
           {{"high", c.discrete_thresholds.high}, {"mid", c.discrete_thresholds.mid}, {"low", c.discrete_thresholds.low}}},
          {"label_timeout_s", c.label_timeout_s},
          {"evaluation", {{"scenes", c.evaluation_scenes}, {"distractors", c.evaluation_distractors}}}};
}

ExperimentConfig config_from_json(const json& doc) {
  reject_unknown(doc,
                 {"task", "optimizer", "reward_mode", "preset", "iterations", "episodes_per_iteration", "seed",
                  "behavior_checkpoint", "perception_checkpoint", "out_dir", "label_log", "resume", "trpo", "vpg", "cem",
                  "reps", "reach_workspace", "grasp_workspace", "throw", "grasp", "discrete", "label_timeout_s",
                  "evaluation"},
                 "");
  ExperimentConfig c;
  if (doc.contains("task")) c.task = task_kind_from_string(doc.at("task").get<std::string>());
  if (doc.contains("optimizer")) c.optimizer = optimizer_from_string(doc.at("optimizer").get<std::string>());
  if (doc.contains("reward_mode")) c.reward_mode = reward_mode_from_string(doc.at("reward_mode").get<std::string>());
  if (doc.contains("preset")) c.preset = preset_from_string(doc.at("preset").get<std::string>());
  read(doc, "iterations", c.iterations);
  read(doc, "episodes_per_iteration", c.episodes_per_iteration);
  read(doc, "seed", c.seed);
  if (doc.contains("behavior_checkpoint")) c.behavior_checkpoint = doc.at("behavior_checkpoint").get<std::string>();
  if (doc.contains("perception_checkpoint")) c.perception_checkpoint = doc.at("perception_checkpoint").get<std::string>();
  if (doc.contains("out_dir")) c.out_dir = doc.at("out_dir").get<std::string>();
  if (doc.contains("label_log")) c.label_log = doc.at("label_log").get<std::string>();
  read(doc, "resume", c.resume);
  if (doc.contains("trpo")) {
    const json& j = doc.at("trpo");
    reject_unknown(j, {"kl_limit", "cg_iterations", "damping", "backtracks"}, "trpo");
    read(j, "kl_limit", c.trpo.kl_limit);
    read(j, "cg_iterations", c.trpo.cg_iterations);
    read(j, "damping", c.trpo.damping);
    read(j, "backtracks", c.trpo.backtracks);
  }
  if (doc.contains("vpg")) {
    reject_unknown(doc.at("vpg"), {"lr"}, "vpg");
    read(doc.at("vpg"), "lr", c.vpg_lr);
  }
  if (doc.contains("cem")) {
    const json& j = doc.at("cem");
    reject_unknown(j, {"population", "elite_fraction", "initial_std", "extra_std", "extra_decay"}, "cem");
    read(j, "population", c.cem_population);
    read(j, "elite_fraction", c.cem_elite_fraction);
    read(j, "initial_std", c.cem_initial_std);
    read(j, "extra_std", c.cem_extra_std);
    read(j, "extra_decay", c.cem_extra_decay);
  }
  if (doc.contains("reps")) {
    const json& j = doc.at("reps");
    reject_unknown(j, {"epsilon", "mean_steps", "mean_lr"}, "reps");
    read(j, "epsilon", c.reps.epsilon);
    read(j, "mean_steps", c.reps.mean_steps);
    read(j, "mean_lr", c.reps.mean_lr);
  }
  if (doc.contains("reach_workspace")) c.reach_workspace = workspace_from(doc.at("reach_workspace"), c.reach_workspace, "reach_workspace");
  if (doc.contains("grasp_workspace")) c.grasp_workspace = workspace_from(doc.at("grasp_workspace"), c.grasp_workspace, "grasp_workspace");
  if (doc.contains("throw")) {
    const json& j = doc.at("throw");
    reject_unknown(j, {"target_min", "target_max", "hit", "near"}, "throw");
    read(j, "target_min", c.throw_target_min);
    read(j, "target_max", c.throw_target_max);
    read(j, "hit", c.throw_thresholds.hit);
    read(j, "near", c.throw_thresholds.near);
  }
  if (doc.contains("grasp")) {
    const json& j = doc.at("grasp");
    reject_unknown(j, {"success", "touch"}, "grasp");
    read(j, "success", c.grasp_thresholds.grasp);
    read(j, "touch", c.grasp_thresholds.touch);
  }
  if (doc.contains("discrete")) {
    const json& j = doc.at("discrete");
    reject_unknown(j, {"high", "mid", "low"}, "discrete");
    read(j, "high", c.discrete_thresholds.high);
    read(j, "mid", c.discrete_thresholds.mid);
    read(j, "low", c.discrete_thresholds.low);
  }
  read(doc, "label_timeout_s", c.label_timeout_s);
  if (doc.contains("evaluation")) {
    const json& j = doc.at("evaluation");
    reject_unknown(j, {"scenes", "distractors"}, "evaluation");
    read(j, "scenes", c.evaluation_scenes);
    read(j, "distractors", c.evaluation_distractors);
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  return config_from_json(json::parse(in, nullptr, true, true));
}

std::vector<arm::Vec2> reach_training_targets(const Workspace& w) {
  std::vector<arm::Vec2> out;
  for (int j = 0; j < 5; ++j) {
    for (int i = 0; i < 5; ++i) out.push_back(w.lerp(i / 4.0, j / 4.0));
  }
  return out;
}

std::vector<arm::Vec2> reach_novel_targets(const Workspace& w) {
  std::vector<arm::Vec2> out;
  for (int j = 0; j < 4; ++j) {
    for (int i = 0; i < 4; ++i) out.push_back(w.lerp((i + 0.5) / 4.0, (j + 0.5) / 4.0));
  }
  return out;
}

Tensor reach_state(const Workspace& w, arm::Vec2 t) {
  return Tensor::vector({2.0 * (t.x - w.x_min) / (w.x_max - w.x_min) - 1.0, 2.0 * (t.y - w.y_min) / (w.y_max - w.y_min) - 1.0});
}

Models load_models(const ExperimentConfig& config) {
  Models m;
  if (config.behavior_checkpoint.empty()) throw std::runtime_error("a behavior checkpoint is required");
  if (!std::filesystem::exists(config.behavior_checkpoint)) {
    throw std::runtime_error("behavior checkpoint " + config.behavior_checkpoint.string() + " not found");
  }
  m.behavior = std::make_shared<behavior::BehaviorModel>(
      behavior::BehaviorModel::from_checkpoint(Checkpoint::load(config.behavior_checkpoint)));
  if (config.task != TaskKind::reach) {
    if (config.perception_checkpoint.empty()) throw std::runtime_error("a perception checkpoint is required");
    if (!std::filesystem::exists(config.perception_checkpoint)) {
      throw std::runtime_error("perception checkpoint " + config.perception_checkpoint.string() + " not found");
    }
    m.perception = std::make_shared<perception::PerceptionModel>(
        perception::PerceptionModel::from_checkpoint(Checkpoint::load(config.perception_checkpoint)));
  }
  return m;
}

TaskEnvironment::TaskEnvironment(const ExperimentConfig& config, Models models)
    : config_(config),
      models_(std::move(models)),
      sprites_(scene::SpriteSet::standard()),
      arm_task_(config.task == TaskKind::throw_ball ? arm::Task::throw_ball : arm::Task::reach_grasp) {
  if (!models_.behavior) throw std::invalid_argument("TaskEnvironment: behavior model missing");
  const auto& bc = models_.behavior->config();
  if (bc.steps != config_.arm.horizon || bc.joints != config_.arm.joint_count) {
    throw std::invalid_argument("behavior model trajectory shape does not match the arm");
  }
  if (config_.task != TaskKind::reach && !models_.perception) {
    throw std::invalid_argument("TaskEnvironment: perception model missing");
  }
}

std::size_t TaskEnvironment::state_dim() const {
  return config_.task == TaskKind::reach ? 2 : models_.perception->state_dim();
}

Scenario TaskEnvironment::draw_training_scenario(Rng& rng) const {
  if (config_.task == TaskKind::reach) {
    const auto targets = reach_training_targets(config_.reach_workspace);
    return {targets[std::uniform_int_distribution<std::size_t>(0, targets.size() - 1)(rng)], std::nullopt};
  }
  const std::size_t canvas = models_.perception->config().canvas;
  scene::SceneSpec spec;
  spec.canvas = canvas;
  spec.target_canvas = models_.perception->config().target_canvas;
  const double m = scene::placement_margin(sprites_.target().size, canvas);
  spec.target_position = {uniform(rng, m, 1.0 - m), uniform(rng, m, 1.0 - m)};
  const double u = unit_from_image(spec.target_position.x, m), v = unit_from_image(spec.target_position.y, m);
  arm::Vec2 target;
  if (config_.task == TaskKind::grasp) {
    target = config_.grasp_workspace.lerp(u, 1.0 - v);
  } else {
    target = {config_.throw_target_min + u * (config_.throw_target_max - config_.throw_target_min), 0.0};
  }
  return {target, spec};
}

Tensor TaskEnvironment::observe(const Scenario& s) const {
  if (config_.task == TaskKind::reach) return reach_state(config_.reach_workspace, s.target);
  if (!s.scene) throw std::invalid_argument("scenario has no scene to observe");
  return perception::observe(*models_.perception, scene::render_scene(*s.scene, sprites_).rgb);
}

arm::MotorTrajectory TaskEnvironment::decode(const Tensor& action) const {
  return behavior::decode_action(*models_.behavior, action.values(), config_.arm.velocity_limit);
}

EpisodeResult TaskEnvironment::execute(const Scenario& s, const Tensor& action, RewardMode mode) const {
  EpisodeResult r;
  const arm::MotorTrajectory u = decode(action);
  r.trace = arm::rollout(arm::initial_state(arm_task_, config_.arm), u, config_.arm);
  r.trace.outcome.target = s.target;
  const auto finish = [&](double continuous) {
    r.reward = mode == RewardMode::discrete ? rewards::discretize_reward(continuous, config_.discrete_thresholds)
                                            : continuous;
  };
  switch (config_.task) {
    case TaskKind::reach: {
      const arm::Vec2 ee = r.trace.path.back();
      r.trace.outcome.final_distance = arm::norm(ee - s.target);
      r.value = {rewards::reach_reward_continuous(ee, s.target), ""};
      finish(r.value.value);
      break;
    }
    case TaskKind::grasp: {
      const arm::GraspOutcome g = arm::grasp_outcome(r.trace, s.target, config_.grasp_thresholds);
      r.trace.outcome.final_distance = g.distance;
      r.value = rewards::grasp_reward(g);
      finish(r.value.value);
      break;
    }
    case TaskKind::throw_ball: {
      const double landing = arm::simulate_throw(r.trace, config_.arm.release_step, config_.arm.gravity, config_.arm);
      r.trace.outcome.landing_x = landing;
      r.value = rewards::throw_reward(landing, s.target.x, config_.throw_thresholds);
      if (mode == RewardMode::qualitative_auto || mode == RewardMode::qualitative_human) {
        r.reward = r.value.value;
      } else {
        finish(1.0 - std::sqrt(std::abs(landing - s.target.x)));
      }
      break;
    }
  }
  return r;
}

json TaskEnvironment::trace_json(const Scenario& s, const EpisodeResult& r) const {
  json j = arm::to_json(r.trace);
  j["task"] = to_string(config_.task);
  j["target"] = {s.target.x, s.target.y};
  if (s.scene) j["scene"] = scene::to_json(*s.scene);
  return j;
}

std::optional<double> QueueLabelSource::label(std::size_t, const std::string& task, const json& trace) {
  if (queue_.closed()) throw LabelQueueClosed("label queue closed");
  const std::uint64_t id = queue_.enqueue(task, trace);
  const auto v = queue_.wait_for_label(id);
  if (!v && queue_.closed()) throw LabelQueueClosed("label queue closed while waiting for episode " + std::to_string(id));
  return v;
}

ReplayLabelSource::ReplayLabelSource(std::vector<labels::LoggedLabel> log) {
  for (const auto& l : log) by_episode_[l.episode] = l.value;
}

std::optional<double> ReplayLabelSource::label(std::size_t global_episode, const std::string&, const json&) {
  auto it = by_episode_.find(global_episode);
  if (it == by_episode_.end()) return std::nullopt;
  return it->second;
}

void write_learning_curve(const std::filesystem::path& path, Optimizer optimizer,
                          const std::vector<IterationSummary>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "iteration,optimizer,mean_reward,std_reward,valid_episodes,invalid_episodes\n";
  for (const auto& s : curve) {
    out << s.iteration << ',' << to_string(optimizer) << ',' << fmt(s.mean_reward) << ',' << fmt(s.std_reward) << ','
        << s.valid_episodes << ',' << s.invalid_episodes << '\n';
  }
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Models& models, const RunHooks& hooks) {
  config.validate();
  const bool human = config.reward_mode == RewardMode::qualitative_human;
  if (human && !hooks.labels) throw std::invalid_argument("human reward mode needs a label source");
  const TaskEnvironment env(config, models);
  const std::size_t n = config.episodes();
  const auto started = std::chrono::steady_clock::now();
  const bool persist = !config.out_dir.empty();
  if (persist) std::filesystem::create_directories(config.out_dir);

  ExperimentResult result;
  Rng init_rng = make_rng(config.seed, "policy-init");
  result.policy = policy::policy_init(env.state_dim(), init_rng);
  policy::CemState cem;
  std::size_t start = 0;

  const std::filesystem::path state_path = config.out_dir / "run_state.json";
  if (persist && config.resume && std::filesystem::exists(state_path)) {
    std::ifstream in(state_path);
    const json st = json::parse(in);
    start = st.at("completed").get<std::size_t>();
    for (const json& row : st.at("curve")) result.curve.push_back(summary_from(row));
    result.total_episodes = st.at("total_episodes").get<std::size_t>();
    result.invalid_episodes = st.at("invalid_episodes").get<std::size_t>();
    result.labels = st.at("labels").get<std::vector<double>>();
    result.policy = policy::PolicyParams::from_checkpoint(Checkpoint::load(config.out_dir / "policy.json"));
    if (st.contains("cem")) {
      cem.mean = st.at("cem").at("mean").get<std::vector<double>>();
      cem.var = st.at("cem").at("var").get<std::vector<double>>();
      cem.generation = st.at("cem").at("generation").get<std::size_t>();
      cem.elite_fraction = config.cem_elite_fraction;
      cem.extra_std = config.cem_extra_std;
      cem.extra_decay = config.cem_extra_decay;
      cem.population.resize(config.cem_population);
    }
  }

  for (std::size_t it = start; it < config.iterations; ++it) {
    Rng scenario_rng = make_rng(config.seed, "scenario", it);
    Rng sampling_rng = make_rng(config.seed, "policy-sampling", it);
    std::vector<Scenario> scenarios;
    for (std::size_t e = 0; e < n; ++e) scenarios.push_back(env.draw_training_scenario(scenario_rng));

    std::vector<policy::PolicyParams> members;
    if (config.optimizer == Optimizer::cem) {
      Rng cem_rng = make_rng(config.seed, "cem-population", it);
      if (cem.mean.empty()) {
        cem = policy::cem_init(result.policy.flat(), config.cem_initial_std, config.cem_population, cem_rng,
                               config.cem_elite_fraction, config.cem_extra_std, config.cem_extra_decay);
      } else {
        policy::cem_sample(cem, cem_rng);
      }
      for (const auto& theta : cem.population) {
        policy::PolicyParams p = result.policy;
        p.set_flat(theta);
        members.push_back(std::move(p));
      }
    } else {
      members.push_back(result.policy);
    }

    const policy::StateFn state_fn = [&](std::size_t e) { return env.observe(scenarios[e]); };
    const policy::RewardFn reward_fn = [&](std::size_t e, const Tensor&, const Tensor& action) -> std::optional<double> {
      const EpisodeResult r = env.execute(scenarios[e], action, config.reward_mode);
      if (!human) return r.reward;
      const std::size_t global = it * n + e;
      const auto v = hooks.labels->label(global, to_string(config.task), env.trace_json(scenarios[e], r));
      if (v) {
        result.labels.push_back(*v);
        if (persist && config.label_log.empty()) {
          labels::append_label(config.out_dir / "label_log.jsonl", {global, global + 1, *v});
        }
      }
      return v;
    };
    policy::IterationBatch batch = policy::collect_iteration(members, n, sampling_rng, state_fn, reward_fn, it);

    IterationSummary s;
    s.iteration = it;
    s.valid_episodes = batch.episodes.size();
    s.invalid_episodes = batch.invalid;
    s.mean_reward = batch.mean_reward();
    s.std_reward = batch.reward_std();
    result.total_episodes += batch.episodes.size() + batch.invalid;
    result.invalid_episodes += batch.invalid;

    if (batch.episodes.size() >= 2) {
      switch (config.optimizer) {
        case Optimizer::trpo: {
          policy::TrpoInfo info;
          result.policy = policy::trpo_update(result.policy, batch, config.trpo, &info);
          s.kl = info.kl;
          break;
        }
        case Optimizer::vpg:
          result.policy = policy::vpg_update(result.policy, batch, config.vpg_lr);
          break;
        case Optimizer::reps: {
          policy::RepsInfo info;
          result.policy = policy::reps_update(result.policy, batch, config.reps, &info);
          s.eta = info.eta;
          s.kl = info.weight_kl;
          break;
        }
        case Optimizer::cem: {
          Rng cem_rng = make_rng(config.seed, "cem-update", it);
          policy::cem_update(cem, policy::member_returns(batch, cem.population.size()), cem_rng);
          result.policy.set_flat(cem.mean);
          break;
        }
      }
    }
    s.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.curve.push_back(s);
    if (hooks.labels) hooks.labels->status({it + 1, (it + 1) * n, s.mean_reward});
    if (hooks.on_iteration) hooks.on_iteration(s);

    if (persist) {
      const Checkpoint ck = result.policy.to_checkpoint();
      char name[32];
      std::snprintf(name, sizeof name, "policy_iter_%03zu.json", it);
      ck.save(config.out_dir / name);
      ck.save(config.out_dir / "policy.json");
      write_learning_curve(config.out_dir / "learning_curve.csv", config.optimizer, result.curve);
      write_training_log(config.out_dir / "training_log.csv", config.optimizer, result.curve);
      json st = {{"completed", it + 1},
                 {"config", to_json(config)},
                 {"total_episodes", result.total_episodes},
                 {"invalid_episodes", result.invalid_episodes},
                 {"labels", result.labels},
                 {"curve", json::array()}};
      for (const auto& row : result.curve) st["curve"].push_back(summary_json(row));
      if (config.optimizer == Optimizer::cem) st["cem"] = {{"mean", cem.mean}, {"var", cem.var}, {"generation", cem.generation}};
      std::ofstream(state_path) << st.dump();
    }
  }
  return result;
}

const EvaluationCell& EvaluationReport::cell(const std::string& name) const {
  for (const auto& c : cells) {
    if (c.name == name) return c;
  }
  throw std::out_of_range("evaluation report has no cell '" + name + "'");
}

json EvaluationReport::to_json() const {
  json c = json::object();
  for (const auto& cell : cells) c[cell.name] = {{"mean", cell.mean}, {"attempts", cell.attempts}};
  return {{"task", experiments::to_string(task)}, {"cells", c}};
}

EvaluationReport evaluate_policy(const policy::PolicyParams& params, const ExperimentConfig& config,
                                 const Models& models) {
  const TaskEnvironment env(config, models);
  if (params.state_dim() != env.state_dim()) throw std::invalid_argument("policy state dimension does not match the task");
  const auto act = policy::deterministic_policy(params);
  EvaluationReport report;
  report.task = config.task;

  if (config.task == TaskKind::reach) {
    for (const auto& [name, targets] : {std::pair{std::string("train"), reach_training_targets(config.reach_workspace)},
                                        std::pair{std::string("novel"), reach_novel_targets(config.reach_workspace)}}) {
      std::vector<double> cont, disc;
      for (const arm::Vec2& t : targets) {
        const Scenario s{t, std::nullopt};
        const double r = env.execute(s, act(env.observe(s)), RewardMode::continuous).reward;
        cont.push_back(r);
        disc.push_back(rewards::discretize_reward(r, config.discrete_thresholds));
      }
      report.cells.push_back({name + "_continuous", mean_of(cont), cont.size()});
      report.cells.push_back({name + "_discrete", mean_of(disc), disc.size()});
    }
    return report;
  }

  const scene::SpriteSet sprites = scene::SpriteSet::standard();
  Rng scene_rng = make_rng(config.seed, "evaluation-scenes");
  std::vector<Scenario> scenarios;
  for (std::size_t i = 0; i < config.evaluation_scenes; ++i) scenarios.push_back(env.draw_training_scenario(scene_rng));
  const auto known = sprites.ids(scene::SpriteRole::known_distractor);
  const auto unknown = sprites.ids(scene::SpriteRole::unknown_distractor);
  const std::vector<std::string> none;
  for (const auto& [name, pool] : {std::pair{std::string("none"), &none}, std::pair{std::string("known"), &known},
                                   std::pair{std::string("unknown"), &unknown}}) {
    std::vector<double> rs;
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      Scenario s = scenarios[i];
      if (!pool->empty()) {
        Rng drng = make_rng(config.seed, "evaluation-distractors", i);
        s.scene->distractors = perception::distractors_clear_of_target(*s.scene, *pool, config.evaluation_distractors,
                                                                       drng, sprites);
      }
      rs.push_back(env.execute(s, act(env.observe(s)), RewardMode::qualitative_auto).reward);
    }
    report.cells.push_back({name, mean_of(rs), rs.size()});
  }
  return report;
}

}  // namespace dppt::experiments

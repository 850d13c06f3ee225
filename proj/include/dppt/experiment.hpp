#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dppt/arm.hpp"
#include "dppt/behavior.hpp"
#include "dppt/label_queue.hpp"
#include "dppt/perception.hpp"
#include "dppt/policy.hpp"
#include "dppt/rewards.hpp"
#include "dppt/scene.hpp"

namespace dppt::experiments {

enum class TaskKind { reach, throw_ball, grasp };
enum class Optimizer { trpo, vpg, cem, reps };
enum class RewardMode { continuous, discrete, qualitative_auto, qualitative_human };
enum class Preset { desk, paper };

const char* to_string(TaskKind t);
const char* to_string(Optimizer o);
const char* to_string(RewardMode m);
const char* to_string(Preset p);
TaskKind task_kind_from_string(const std::string& s);
Optimizer optimizer_from_string(const std::string& s);
RewardMode reward_mode_from_string(const std::string& s);
Preset preset_from_string(const std::string& s);

// Rectangle of the arm workspace, metres; image coordinates map onto it with
// image x to the right and image y towards the arm base.
struct Workspace {
  double x_min = 0.0;
  double x_max = 0.0;
  double y_min = 0.0;
  double y_max = 0.0;

  arm::Vec2 from_image(scene::ImagePoint p) const;
  arm::Vec2 lerp(double u, double v) const;  // u, v in [0, 1]
};

struct ExperimentConfig {
  TaskKind task = TaskKind::reach;
  Optimizer optimizer = Optimizer::trpo;
  RewardMode reward_mode = RewardMode::continuous;
  Preset preset = Preset::desk;
  std::size_t iterations = 15;
  std::size_t episodes_per_iteration = 0;  // 0: 25 for reach, 12 otherwise
  std::uint64_t seed = 0;
  std::filesystem::path behavior_checkpoint;
  std::filesystem::path perception_checkpoint;
  std::filesystem::path out_dir;
  std::filesystem::path label_log;  // human mode: replay labels from this log instead of the queue
  bool resume = false;

  policy::TrpoConfig trpo;
  double vpg_lr = 0.05;
  std::size_t cem_population = 20;
  double cem_elite_fraction = 0.2;
  double cem_initial_std = 1.0;
  double cem_extra_std = 1.0;
  double cem_extra_decay = 100.0;  // iterations
  policy::RepsConfig reps;

  Workspace reach_workspace = default_reach_workspace();
  Workspace grasp_workspace = default_reach_workspace();
  double throw_target_min = 0.2;
  double throw_target_max = 0.8;
  rewards::ThrowThresholds throw_thresholds;
  arm::GraspThresholds grasp_thresholds;
  rewards::DiscreteThresholds discrete_thresholds;
  double label_timeout_s = 600.0;
  std::size_t evaluation_scenes = 24;   // per distractor condition
  std::size_t evaluation_distractors = 3;
  arm::ArmConfig arm;

  static Workspace default_reach_workspace();

  std::size_t episodes() const;
  void validate() const;  // throws std::invalid_argument
};

nlohmann::json to_json(const ExperimentConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

// Reach training targets (5x5 grid) and novel targets (4x4 cell midpoints).
std::vector<arm::Vec2> reach_training_targets(const Workspace& w);
std::vector<arm::Vec2> reach_novel_targets(const Workspace& w);
// Policy input for a reach target: workspace coordinates mapped to [-1, 1].
Tensor reach_state(const Workspace& w, arm::Vec2 target);

struct Models {
  std::shared_ptr<const behavior::BehaviorModel> behavior;
  std::shared_ptr<const perception::PerceptionModel> perception;
};
// Loads the checkpoints the task needs. Missing files raise std::runtime_error.
Models load_models(const ExperimentConfig& config);

// One task instance: where the target is and what the camera sees.
struct Scenario {
  arm::Vec2 target;
  std::optional<scene::SceneSpec> scene;
};

struct EpisodeResult {
  arm::EpisodeTrace trace;
  double reward = 0.0;        // auto reward under the configured mode
  rewards::RewardValue value;  // task reward before discretization
};

// Task dynamics shared by training and evaluation.
class TaskEnvironment {
 public:
  TaskEnvironment(const ExperimentConfig& config, Models models);

  TaskKind task() const { return config_.task; }
  std::size_t state_dim() const;
  const ExperimentConfig& config() const { return config_; }

  Scenario draw_training_scenario(Rng& rng) const;
  Tensor observe(const Scenario& s) const;
  arm::MotorTrajectory decode(const Tensor& action) const;
  // Executes an action and scores it with the task reward (no human labels).
  EpisodeResult execute(const Scenario& s, const Tensor& action, RewardMode mode) const;
  nlohmann::json trace_json(const Scenario& s, const EpisodeResult& r) const;

 private:
  ExperimentConfig config_;
  Models models_;
  scene::SpriteSet sprites_;
  arm::Task arm_task_;
};

// Source of human rewards: the live queue or a recorded log.
class LabelSource {
 public:
  virtual ~LabelSource() = default;
  // Empty result: no label (timeout); the episode is excluded.
  virtual std::optional<double> label(std::size_t global_episode, const std::string& task, const nlohmann::json& trace) = 0;
  virtual void status(const labels::Status&) {}
};

class QueueLabelSource : public LabelSource {
 public:
  explicit QueueLabelSource(labels::LabelQueue& queue) : queue_(queue) {}
  std::optional<double> label(std::size_t global_episode, const std::string& task, const nlohmann::json& trace) override;
  void status(const labels::Status& s) override { queue_.set_status(s); }

 private:
  labels::LabelQueue& queue_;
};

class ReplayLabelSource : public LabelSource {
 public:
  explicit ReplayLabelSource(std::vector<labels::LoggedLabel> log);
  std::optional<double> label(std::size_t global_episode, const std::string& task, const nlohmann::json& trace) override;

 private:
  std::map<std::size_t, double> by_episode_;
};

class LabelQueueClosed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct IterationSummary {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double std_reward = 0.0;
  std::size_t valid_episodes = 0;
  std::size_t invalid_episodes = 0;
  double kl = 0.0;   // TRPO: KL of the accepted step
  double eta = 0.0;  // REPS temperature
  double elapsed_s = 0.0;
};

struct ExperimentResult {
  policy::PolicyParams policy;  // deterministic policy to evaluate (CEM: sampling mean)
  std::vector<IterationSummary> curve;
  std::size_t total_episodes = 0;
  std::size_t invalid_episodes = 0;
  std::vector<double> labels;  // human mode: rewards in the order they were received
};

struct RunHooks {
  std::function<void(const IterationSummary&)> on_iteration;
  LabelSource* labels = nullptr;  // required in qualitative_human mode
};

// Policy search loop. Writes learning_curve.csv, training_log.csv, policy
// checkpoints and run_state.json into config.out_dir when it is set. With
// config.resume, continues from the run_state.json found there.
ExperimentResult run_experiment(const ExperimentConfig& config, const Models& models, const RunHooks& hooks = {});

struct EvaluationCell {
  std::string name;
  double mean = 0.0;
  std::size_t attempts = 0;
};
struct EvaluationReport {
  TaskKind task = TaskKind::reach;
  std::vector<EvaluationCell> cells;

  const EvaluationCell& cell(const std::string& name) const;
  nlohmann::json to_json() const;
};

// Deterministic policy over the condition grid: reach -> train/novel x
// continuous/discrete; throw and grasp -> none/known/unknown distractors.
EvaluationReport evaluate_policy(const policy::PolicyParams& params, const ExperimentConfig& config,
                                 const Models& models);

void write_learning_curve(const std::filesystem::path& path, Optimizer optimizer,
                          const std::vector<IterationSummary>& curve);

}  // namespace dppt::experiments

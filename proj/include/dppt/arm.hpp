#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dppt/rng.hpp"

namespace dppt::arm {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  bool operator==(const Vec2&) const = default;
};

double norm(Vec2 v);

enum class Task { reach_grasp, throw_ball };

const char* to_string(Task task);
Task task_from_string(const std::string& name);

struct JointRange {
  double lower = -2.8;
  double upper = 2.8;
};

// Planar J-joint arm with its base at the origin; gravity points along -y and
// the floor is the plane y = 0.
struct ArmConfig {
  std::size_t joint_count = 7;
  std::vector<double> link_lengths = std::vector<double>(7, 0.1);
  std::vector<JointRange> joint_limits = std::vector<JointRange>(7);
  double velocity_limit = 1.5;  // rad/s
  double dt = 0.1;              // s, 10 Hz control
  std::size_t horizon = 20;     // T
  std::size_t release_step = 10;
  double gravity = 9.81;

  static ArmConfig with_joints(std::size_t joints);
  void validate() const;  // throws std::invalid_argument
};

struct BallState {
  Vec2 position;
  Vec2 velocity;
  bool landed = false;
};

struct ArmState {
  std::vector<double> joint_angles;
  std::size_t time_step = 0;
  bool ball_attached = false;
  std::optional<BallState> ball;  // present once released

  bool operator==(const ArmState&) const = default;
};

bool operator==(const BallState& a, const BallState& b);

// T x J joint velocity commands, row-major by time step.
class MotorTrajectory {
 public:
  MotorTrajectory() = default;
  MotorTrajectory(std::size_t steps, std::size_t joints, double fill = 0.0);
  MotorTrajectory(std::size_t steps, std::size_t joints, std::vector<double> flat);

  std::size_t steps() const { return steps_; }
  std::size_t joints() const { return joints_; }
  double& operator()(std::size_t t, std::size_t j) { return data_[t * joints_ + j]; }
  double operator()(std::size_t t, std::size_t j) const { return data_[t * joints_ + j]; }
  std::span<const double> row(std::size_t t) const { return {data_.data() + t * joints_, joints_}; }
  const std::vector<double>& flat() const { return data_; }

  // Clamps every command to +-limit.
  void clamp(double limit);
  bool within(double limit) const;

  bool operator==(const MotorTrajectory&) const = default;

 private:
  std::size_t steps_ = 0;
  std::size_t joints_ = 0;
  std::vector<double> data_;
};

struct EpisodeOutcome {
  std::optional<double> landing_x;
  std::optional<double> final_distance;
  std::optional<Vec2> target;
};

struct EpisodeTrace {
  std::vector<ArmState> states;  // T + 1 entries, initial state first
  std::vector<Vec2> path;        // end-effector position per state
  EpisodeOutcome outcome;
};

nlohmann::json to_json(const EpisodeTrace& trace);
EpisodeTrace trace_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MotorTrajectory& u);
MotorTrajectory trajectory_from_json(const nlohmann::json& doc);

Vec2 forward_kinematics(std::span<const double> angles, const ArmConfig& config);

ArmState initial_state(Task task, const ArmConfig& config);

// One control period: angles += clamp(v) * dt, then clamped to joint limits.
ArmState step(const ArmState& state, std::span<const double> velocities, const ArmConfig& config);

// Open-loop execution of all T commands. Releases an attached ball at
// config.release_step with the end-effector's backward-difference velocity.
EpisodeTrace rollout(const ArmState& initial, const MotorTrajectory& u, const ArmConfig& config);

// Landing x of a ball released from the trace at `release_step`.
double simulate_throw(const EpisodeTrace& trace, std::size_t release_step, double gravity, const ArmConfig& config);

enum class GraspClass { success, touch, miss };
const char* to_string(GraspClass c);

struct GraspThresholds {
  double grasp = 0.03;  // m
  double touch = 0.10;  // m
};

struct GraspOutcome {
  GraspClass result = GraspClass::miss;
  double distance = 0.0;
};

GraspOutcome grasp_outcome(const EpisodeTrace& trace, Vec2 target, const GraspThresholds& thresholds = {});

// Low-dimensional generative motion model used by the blind policy: velocity
// knots are a fixed time profile scaled per joint by (bias + synergies * z),
// z ~ U[-1, 1]^m.
struct BlindMotionModel {
  std::vector<double> knot_profile;         // K entries
  std::vector<double> bias;                 // J entries, units of velocity_limit
  std::vector<std::vector<double>> synergies;  // J rows x m columns
  std::vector<double> start_pose;           // J entries, rad
};

const BlindMotionModel& blind_motion_model(Task task);

MotorTrajectory blind_policy_sample(Task task, Rng& rng, const ArmConfig& config);

// Natural cubic spline through (knot_times[k], knot_values[k]) evaluated at t.
double natural_cubic_spline(std::span<const double> knot_times, std::span<const double> knot_values, double t);

}  // namespace dppt::arm

#include "dppt/arm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dppt::arm {

using nlohmann::json;

double norm(Vec2 v) { return std::hypot(v.x, v.y); }

const char* to_string(Task task) { return task == Task::throw_ball ? "throw" : "reach_grasp"; }

Task task_from_string(const std::string& name) {
  if (name == "throw" || name == "throw_ball") return Task::throw_ball;
  if (name == "reach_grasp" || name == "grasp" || name == "reach") return Task::reach_grasp;
  throw std::invalid_argument("unknown blind-policy task '" + name + "'");
}

ArmConfig ArmConfig::with_joints(std::size_t joints) {
  ArmConfig c;
  c.joint_count = joints;
  c.link_lengths.assign(joints, 0.1);
  c.joint_limits.assign(joints, JointRange{});
  return c;
}

void ArmConfig::validate() const {
  if (joint_count < 2) throw std::invalid_argument("arm needs at least 2 joints");
  if (link_lengths.size() != joint_count || joint_limits.size() != joint_count) {
    throw std::invalid_argument("link_lengths/joint_limits must have joint_count entries");
  }
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(velocity_limit > 0.0)) throw std::invalid_argument("velocity_limit must be positive");
  if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
  if (release_step < 1 || release_step > horizon) throw std::invalid_argument("release_step must be in [1, T]");
  for (const auto& r : joint_limits) {
    if (!(r.lower < r.upper)) throw std::invalid_argument("joint limit range is empty");
  }
}

bool operator==(const BallState& a, const BallState& b) {
  return a.position == b.position && a.velocity == b.velocity && a.landed == b.landed;
}

MotorTrajectory::MotorTrajectory(std::size_t steps, std::size_t joints, double fill)
    : steps_(steps), joints_(joints), data_(steps * joints, fill) {}

MotorTrajectory::MotorTrajectory(std::size_t steps, std::size_t joints, std::vector<double> flat)
    : steps_(steps), joints_(joints), data_(std::move(flat)) {
  if (data_.size() != steps * joints) {
    throw std::invalid_argument("trajectory data has " + std::to_string(data_.size()) + " entries, expected " +
                                std::to_string(steps) + "x" + std::to_string(joints));
  }
}

void MotorTrajectory::clamp(double limit) {
  for (double& v : data_) v = std::clamp(v, -limit, limit);
}

bool MotorTrajectory::within(double limit) const {
  return std::all_of(data_.begin(), data_.end(), [limit](double v) { return std::abs(v) <= limit; });
}

Vec2 forward_kinematics(std::span<const double> angles, const ArmConfig& config) {
  Vec2 p;
  double cumulative = 0.0;
  for (std::size_t j = 0; j < angles.size() && j < config.link_lengths.size(); ++j) {
    cumulative += angles[j];
    p.x += config.link_lengths[j] * std::cos(cumulative);
    p.y += config.link_lengths[j] * std::sin(cumulative);
  }
  return p;
}

namespace {

void propagate_ball(BallState& ball, double dt, double gravity) {
  if (ball.landed) return;
  const double y1 = ball.position.y + ball.velocity.y * dt - 0.5 * gravity * dt * dt;
  if (y1 > 0.0) {
    ball.position = {ball.position.x + ball.velocity.x * dt, y1};
    ball.velocity.y -= gravity * dt;
    return;
  }
  // Lands within this period: solve y(t) = 0 for the positive root.
  const double vy = ball.velocity.y, y0 = std::max(ball.position.y, 0.0);
  const double t = (vy + std::sqrt(vy * vy + 2.0 * gravity * y0)) / gravity;
  ball.position = {ball.position.x + ball.velocity.x * t, 0.0};
  ball.velocity.y = vy - gravity * t;
  ball.landed = true;
}

// Seven-joint reference tables; other joint counts are resampled linearly
// along the chain.
std::vector<double> resample(const std::vector<double>& table, std::size_t joints) {
  if (joints == table.size()) return table;
  std::vector<double> out(joints);
  for (std::size_t j = 0; j < joints; ++j) {
    const double pos = joints == 1 ? 0.0 : static_cast<double>(j) * (table.size() - 1) / (joints - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, table.size() - 1);
    const double w = pos - lo;
    out[j] = (1.0 - w) * table[lo] + w * table[hi];
  }
  return out;
}

BlindMotionModel make_grasp_model() {
  BlindMotionModel m;
  // Decelerating: the arm comes to rest at the end of the horizon.
  m.knot_profile = {1.0, 0.649519052838329, 0.353553390593274, 0.125, 0.0};
  m.bias = std::vector<double>(7, 0.0);
  m.start_pose = {0.9, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2};
  // Columns: shoulder sweep, chain extension, two distal posture modes.
  m.synergies = {
      {0.6, 0.0, 0.0, 0.0},    {0.0, -0.6, 0.18, 0.0},   {0.0, -0.6, 0.12, 0.18},   {0.0, -0.48, -0.18, 0.18},
      {0.0, -0.36, -0.3, -0.18}, {0.0, -0.24, 0.18, -0.3}, {0.0, -0.12, 0.0, -0.36},
  };
  return m;
}

BlindMotionModel make_throw_model() {
  BlindMotionModel m;
  // Accelerating towards the release step, then braking.
  m.knot_profile = {0.15, 0.6, 1.0, 0.45, 0.0};
  m.bias = {-0.55, -0.35, -0.3, -0.3, -0.35, -0.4, -0.45};
  m.start_pose = {2.5, 0.3, 0.2, 0.2, 0.1, 0.1, 0.1};
  m.synergies = {
      {0.3, 0.0, 0.0, 0.0},  {0.1, 0.25, 0.0, 0.0}, {0.1, 0.25, 0.1, 0.0},  {0.1, 0.0, 0.2, 0.1},
      {0.1, -0.2, 0.2, 0.1}, {0.1, -0.2, -0.1, 0.25}, {0.1, 0.0, -0.2, 0.25},
  };
  return m;
}

std::vector<double> start_pose_for(Task task, std::size_t joints) {
  return resample(blind_motion_model(task).start_pose, joints);
}

}  // namespace

const BlindMotionModel& blind_motion_model(Task task) {
  static const BlindMotionModel grasp = make_grasp_model();
  static const BlindMotionModel throw_model = make_throw_model();
  return task == Task::throw_ball ? throw_model : grasp;
}

ArmState initial_state(Task task, const ArmConfig& config) {
  config.validate();
  ArmState s;
  s.joint_angles = start_pose_for(task, config.joint_count);
  for (std::size_t j = 0; j < config.joint_count; ++j) {
    s.joint_angles[j] = std::clamp(s.joint_angles[j], config.joint_limits[j].lower, config.joint_limits[j].upper);
  }
  s.ball_attached = task == Task::throw_ball;
  return s;
}

ArmState step(const ArmState& state, std::span<const double> velocities, const ArmConfig& config) {
  if (velocities.size() != config.joint_count || state.joint_angles.size() != config.joint_count) {
    throw std::invalid_argument("step: expected " + std::to_string(config.joint_count) + " joint velocities, got " +
                                std::to_string(velocities.size()));
  }
  ArmState next = state;
  for (std::size_t j = 0; j < config.joint_count; ++j) {
    const double v = std::clamp(velocities[j], -config.velocity_limit, config.velocity_limit);
    next.joint_angles[j] =
        std::clamp(state.joint_angles[j] + v * config.dt, config.joint_limits[j].lower, config.joint_limits[j].upper);
  }
  next.time_step = state.time_step + 1;
  if (next.ball) propagate_ball(*next.ball, config.dt, config.gravity);
  return next;
}

EpisodeTrace rollout(const ArmState& initial, const MotorTrajectory& u, const ArmConfig& config) {
  config.validate();
  if (u.steps() != config.horizon || u.joints() != config.joint_count) {
    throw std::invalid_argument("rollout: trajectory is " + std::to_string(u.steps()) + "x" +
                                std::to_string(u.joints()) + ", expected " + std::to_string(config.horizon) + "x" +
                                std::to_string(config.joint_count));
  }
  EpisodeTrace trace;
  trace.states.reserve(config.horizon + 1);
  trace.path.reserve(config.horizon + 1);
  trace.states.push_back(initial);
  trace.path.push_back(forward_kinematics(initial.joint_angles, config));
  for (std::size_t t = 0; t < config.horizon; ++t) {
    ArmState next = step(trace.states.back(), u.row(t), config);
    const Vec2 ee = forward_kinematics(next.joint_angles, config);
    if (next.ball_attached && next.time_step == config.release_step) {
      const Vec2 prev = trace.path.back();
      next.ball_attached = false;
      next.ball = BallState{ee, (1.0 / config.dt) * (ee - prev), false};
    }
    trace.states.push_back(std::move(next));
    trace.path.push_back(ee);
  }
  return trace;
}

double simulate_throw(const EpisodeTrace& trace, std::size_t release_step, double gravity, const ArmConfig& config) {
  if (release_step == 0 || release_step >= trace.path.size()) {
    throw std::invalid_argument("simulate_throw: release step must be in [1, T]");
  }
  const Vec2 p = trace.path[release_step];
  if (p.y < 0.0) return p.x;
  const Vec2 v = (1.0 / config.dt) * (p - trace.path[release_step - 1]);
  if (gravity <= 0.0) throw std::invalid_argument("simulate_throw: gravity must be positive");
  const double t = (v.y + std::sqrt(v.y * v.y + 2.0 * gravity * p.y)) / gravity;
  return p.x + v.x * t;
}

const char* to_string(GraspClass c) {
  switch (c) {
    case GraspClass::success: return "success";
    case GraspClass::touch: return "touch";
    case GraspClass::miss: return "miss";
  }
  return "?";
}

GraspOutcome grasp_outcome(const EpisodeTrace& trace, Vec2 target, const GraspThresholds& thresholds) {
  if (trace.path.empty()) throw std::invalid_argument("grasp_outcome: empty trace");
  GraspOutcome out;
  out.distance = norm(trace.path.back() - target);
  if (out.distance <= thresholds.grasp) {
    out.result = GraspClass::success;
  } else if (out.distance <= thresholds.touch) {
    out.result = GraspClass::touch;
  } else {
    out.result = GraspClass::miss;
  }
  return out;
}

double natural_cubic_spline(std::span<const double> x, std::span<const double> y, double t) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw std::invalid_argument("spline needs at least two knots");
  // Second derivatives via the tridiagonal system (Thomas algorithm), zero at both ends.
  std::vector<double> m(n, 0.0);
  if (n > 2) {
    std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), d(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x[i] - x[i - 1], h1 = x[i + 1] - x[i];
      a[i] = h0;
      b[i] = 2.0 * (h0 + h1);
      c[i] = h1;
      d[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
    }
    for (std::size_t i = 2; i + 1 < n; ++i) {
      const double w = a[i] / b[i - 1];
      b[i] -= w * c[i - 1];
      d[i] -= w * d[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      m[i] = (d[i] - (i + 2 < n ? c[i] * m[i + 1] : 0.0)) / b[i];
      if (i == 1) break;
    }
  }
  std::size_t k = 0;
  while (k + 2 < n && t > x[k + 1]) ++k;
  const double h = x[k + 1] - x[k];
  const double A = (x[k + 1] - t) / h, B = (t - x[k]) / h;
  return A * y[k] + B * y[k + 1] + ((A * A * A - A) * m[k] + (B * B * B - B) * m[k + 1]) * h * h / 6.0;
}

MotorTrajectory blind_policy_sample(Task task, Rng& rng, const ArmConfig& config) {
  config.validate();
  const BlindMotionModel& model = blind_motion_model(task);
  const std::size_t J = config.joint_count, T = config.horizon, K = model.knot_profile.size();
  const std::size_t m = model.synergies.front().size();

  std::vector<double> z(m);
  for (double& zi : z) zi = uniform(rng, -1.0, 1.0);

  std::vector<double> amplitude7(model.synergies.size());
  for (std::size_t j = 0; j < model.synergies.size(); ++j) {
    double a = model.bias[j];
    for (std::size_t i = 0; i < m; ++i) a += model.synergies[j][i] * z[i];
    amplitude7[j] = a;
  }
  const std::vector<double> amplitude = resample(amplitude7, J);

  std::vector<double> knot_times(K);
  for (std::size_t k = 0; k < K; ++k) {
    knot_times[k] = K == 1 ? 0.0 : static_cast<double>(k) * static_cast<double>(T - 1) / static_cast<double>(K - 1);
  }
  MotorTrajectory u(T, J);
  std::vector<double> knots(K);
  for (std::size_t j = 0; j < J; ++j) {
    for (std::size_t k = 0; k < K; ++k) knots[k] = config.velocity_limit * model.knot_profile[k] * amplitude[j];
    for (std::size_t t = 0; t < T; ++t) {
      u(t, j) = T == 1 ? knots[0] : natural_cubic_spline(knot_times, knots, static_cast<double>(t));
    }
  }
  u.clamp(config.velocity_limit);
  return u;
}

json to_json(const MotorTrajectory& u) {
  return {{"steps", u.steps()}, {"joints", u.joints()}, {"commands", u.flat()}};
}

MotorTrajectory trajectory_from_json(const json& doc) {
  return MotorTrajectory(doc.at("steps").get<std::size_t>(), doc.at("joints").get<std::size_t>(),
                         doc.at("commands").get<std::vector<double>>());
}

json to_json(const EpisodeTrace& trace) {
  json states = json::array();
  for (const ArmState& s : trace.states) {
    json js = {{"joint_angles", s.joint_angles}, {"time_step", s.time_step}, {"ball_attached", s.ball_attached}};
    if (s.ball) {
      js["ball"] = {{"position", {s.ball->position.x, s.ball->position.y}},
                    {"velocity", {s.ball->velocity.x, s.ball->velocity.y}},
                    {"landed", s.ball->landed}};
    }
    states.push_back(std::move(js));
  }
  json path = json::array();
  for (Vec2 p : trace.path) path.push_back({p.x, p.y});
  json outcome = json::object();
  if (trace.outcome.landing_x) outcome["landing_x"] = *trace.outcome.landing_x;
  if (trace.outcome.final_distance) outcome["final_distance"] = *trace.outcome.final_distance;
  if (trace.outcome.target) outcome["target"] = {trace.outcome.target->x, trace.outcome.target->y};
  return {{"states", std::move(states)}, {"path", std::move(path)}, {"outcome", std::move(outcome)}};
}

EpisodeTrace trace_from_json(const json& doc) {
  auto vec2 = [](const json& a) { return Vec2{a.at(0).get<double>(), a.at(1).get<double>()}; };
  EpisodeTrace trace;
  for (const json& js : doc.at("states")) {
    ArmState s;
    s.joint_angles = js.at("joint_angles").get<std::vector<double>>();
    s.time_step = js.at("time_step").get<std::size_t>();
    s.ball_attached = js.at("ball_attached").get<bool>();
    if (js.contains("ball")) {
      const json& b = js.at("ball");
      s.ball = BallState{vec2(b.at("position")), vec2(b.at("velocity")), b.at("landed").get<bool>()};
    }
    trace.states.push_back(std::move(s));
  }
  for (const json& p : doc.at("path")) trace.path.push_back(vec2(p));
  const json& o = doc.value("outcome", json::object());
  if (o.contains("landing_x")) trace.outcome.landing_x = o.at("landing_x").get<double>();
  if (o.contains("final_distance")) trace.outcome.final_distance = o.at("final_distance").get<double>();
  if (o.contains("target")) trace.outcome.target = vec2(o.at("target"));
  return trace;
}

}  // namespace dppt::arm

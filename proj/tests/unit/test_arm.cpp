#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "dppt/arm.hpp"

using namespace dppt;
using namespace dppt::arm;

namespace {

EpisodeTrace release_trace(Vec2 before, Vec2 at, std::size_t release_step) {
  EpisodeTrace trace;
  trace.path.assign(release_step + 1, before);
  trace.path[release_step] = at;
  return trace;
}

MotorTrajectory random_trajectory(Rng& rng, const ArmConfig& config, double amplitude) {
  MotorTrajectory u(config.horizon, config.joint_count);
  for (std::size_t t = 0; t < u.steps(); ++t)
    for (std::size_t j = 0; j < u.joints(); ++j) u(t, j) = uniform(rng, -amplitude, amplitude);
  return u;
}

}  // namespace

TEST_CASE("forward kinematics of simple poses") {
  const ArmConfig config;
  const std::vector<double> zero(7, 0.0);
  const Vec2 straight = forward_kinematics(zero, config);
  CHECK(straight.x == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(std::abs(straight.y) <= 1e-15);

  std::vector<double> up(7, 0.0);
  up[0] = std::numbers::pi / 2;
  const Vec2 p = forward_kinematics(up, config);
  CHECK(std::abs(p.x) <= 1e-12);
  CHECK(p.y == doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("forward kinematics matches complex-exponential accumulation") {
  const ArmConfig config;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = make_rng(seed, "fk");
    std::vector<double> q(7);
    for (double& v : q) v = uniform(rng, -2.8, 2.8);
    std::complex<double> tip = 0.0, heading = 1.0;
    for (std::size_t j = 0; j < 7; ++j) {
      heading *= std::polar(1.0, q[j]);
      tip += config.link_lengths[j] * heading;
    }
    const Vec2 p = forward_kinematics(q, config);
    CHECK(std::abs(p.x - tip.real()) <= 1e-12);
    CHECK(std::abs(p.y - tip.imag()) <= 1e-12);
  }
}

TEST_CASE("step integrates clamped velocities") {
  const ArmConfig config;
  ArmState s;
  s.joint_angles.assign(7, 0.2);

  const ArmState same = step(s, std::vector<double>(7, 0.0), config);
  CHECK(same.joint_angles == s.joint_angles);
  CHECK(same.time_step == 1);

  const ArmState moved = step(s, std::vector<double>(7, 0.1), config);
  for (double a : moved.joint_angles) CHECK(a == doctest::Approx(0.21).epsilon(1e-12));

  const ArmState fast = step(s, std::vector<double>(7, 9.0), config);
  for (double a : fast.joint_angles) CHECK(a - 0.2 == doctest::Approx(config.velocity_limit * config.dt).epsilon(1e-12));

  ArmState edge;
  edge.joint_angles.assign(7, 2.79);
  const ArmState limited = step(edge, std::vector<double>(7, 1.5), config);
  for (double a : limited.joint_angles) CHECK(a == 2.8);
}

TEST_CASE("rollout contracts") {
  const ArmConfig config;
  const ArmState init = initial_state(Task::reach_grasp, config);

  const EpisodeTrace still = rollout(init, MotorTrajectory(20, 7), config);
  REQUIRE(still.states.size() == 21);
  REQUIRE(still.path.size() == 21);
  for (const auto& s : still.states) CHECK(s.joint_angles == init.joint_angles);

  ArmState centre;
  centre.joint_angles.assign(7, 0.0);
  const EpisodeTrace constant = rollout(centre, MotorTrajectory(20, 7, 0.5), config);
  for (double a : constant.states.back().joint_angles) CHECK(a == doctest::Approx(20 * 0.5 * 0.1).epsilon(1e-12));

  CHECK_THROWS_AS(rollout(init, MotorTrajectory(19, 7), config), std::invalid_argument);
  CHECK_THROWS_AS(rollout(init, MotorTrajectory(20, 6), config), std::invalid_argument);
}

TEST_CASE("joint limits hold along random rollouts") {
  const ArmConfig config;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng = make_rng(seed, "limits");
    const EpisodeTrace trace =
        rollout(initial_state(Task::throw_ball, config), random_trajectory(rng, config, 5.0), config);
    for (const auto& s : trace.states) {
      for (std::size_t j = 0; j < 7; ++j) {
        CHECK(s.joint_angles[j] >= config.joint_limits[j].lower);
        CHECK(s.joint_angles[j] <= config.joint_limits[j].upper);
      }
    }
  }
}

TEST_CASE("rollout is deterministic and open-loop") {
  const ArmConfig config;
  Rng rng = make_rng(4, "det");
  const MotorTrajectory u = random_trajectory(rng, config, 1.0);
  const ArmState init = initial_state(Task::throw_ball, config);
  const EpisodeTrace a = rollout(init, u, config), b = rollout(init, u, config);
  CHECK(a.states == b.states);
  CHECK(a.path == b.path);
}

TEST_CASE("throw release attaches ball state at the release step") {
  const ArmConfig config;
  Rng rng = make_rng(9, "release");
  const EpisodeTrace trace =
      rollout(initial_state(Task::throw_ball, config), random_trajectory(rng, config, 1.0), config);
  CHECK(trace.states[config.release_step - 1].ball_attached);
  REQUIRE(trace.states[config.release_step].ball.has_value());
  const BallState& ball = *trace.states[config.release_step].ball;
  CHECK(ball.position == trace.path[config.release_step]);
  const Vec2 v = (1.0 / config.dt) * (trace.path[config.release_step] - trace.path[config.release_step - 1]);
  CHECK(ball.velocity.x == doctest::Approx(v.x).epsilon(1e-12));
  CHECK(ball.velocity.y == doctest::Approx(v.y).epsilon(1e-12));
}

TEST_CASE("projectile landing") {
  const ArmConfig config;
  SUBCASE("release at rest lands below the release point") {
    const EpisodeTrace t = release_trace({0.3, 0.5}, {0.3, 0.5}, 10);
    CHECK(simulate_throw(t, 10, 9.81, config) == doctest::Approx(0.3).epsilon(1e-12));
  }
  SUBCASE("horizontal release from height one") {
    const EpisodeTrace t = release_trace({-0.1, 1.0}, {0.0, 1.0}, 10);
    CHECK(std::abs(simulate_throw(t, 10, 9.81, config) - std::sqrt(2.0 / 9.81)) <= 1e-9);
  }
  SUBCASE("doubling horizontal speed doubles the range") {
    const double r1 = simulate_throw(release_trace({0.1, 0.4}, {0.2, 0.4}, 10), 10, 9.81, config) - 0.2;
    const double r2 = simulate_throw(release_trace({0.0, 0.4}, {0.2, 0.4}, 10), 10, 9.81, config) - 0.2;
    CHECK(r2 == doctest::Approx(2.0 * r1).epsilon(1e-12));
  }
  SUBCASE("analytic releases with vertical velocity") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      Rng rng = make_rng(seed, "ballistic");
      const Vec2 p{uniform(rng, -0.5, 0.5), uniform(rng, 0.05, 1.0)};
      const Vec2 v{uniform(rng, -2, 2), uniform(rng, -2, 2)};
      const EpisodeTrace t = release_trace(p - config.dt * v, p, 10);
      const double g = 9.81;
      const double tf = (v.y + std::sqrt(v.y * v.y + 2 * g * p.y)) / g;
      CHECK(std::abs(simulate_throw(t, 10, g, config) - (p.x + v.x * tf)) <= 1e-9);
    }
  }
  SUBCASE("release below the floor lands at the release x") {
    const EpisodeTrace t = release_trace({0.0, -0.1}, {0.25, -0.2}, 10);
    CHECK(simulate_throw(t, 10, 9.81, config) == 0.25);
  }
  SUBCASE("release step must be inside the trace") {
    const EpisodeTrace t = release_trace({0, 0.5}, {0, 0.5}, 10);
    CHECK_THROWS_AS(simulate_throw(t, 0, 9.81, config), std::invalid_argument);
    CHECK_THROWS_AS(simulate_throw(t, 11, 9.81, config), std::invalid_argument);
  }
}

TEST_CASE("grasp outcome thresholds are closed") {
  const GraspThresholds th;
  EpisodeTrace t;
  t.path = {{0.5, 0.0}, {0.0, 0.2}};
  CHECK(grasp_outcome(t, {0.0, 0.2}, th).result == GraspClass::success);
  CHECK(grasp_outcome(t, {0.0, 0.2}, th).distance == 0.0);
  CHECK(grasp_outcome(t, {th.grasp, 0.2}, th).result == GraspClass::success);
  CHECK(grasp_outcome(t, {0.06, 0.2}, th).result == GraspClass::touch);
  CHECK(grasp_outcome(t, {th.touch, 0.2}, th).result == GraspClass::touch);
  CHECK(grasp_outcome(t, {0.2, 0.2}, th).result == GraspClass::miss);
}

TEST_CASE("blind policy samples") {
  const ArmConfig config;
  for (Task task : {Task::reach_grasp, Task::throw_ball}) {
    CAPTURE(to_string(task));
    double autocorr = 0.0;
    for (std::uint64_t i = 0; i < 1000; ++i) {
      Rng rng = make_rng(i, "blind");
      const MotorTrajectory u = blind_policy_sample(task, rng, config);
      REQUIRE(u.steps() == 20);
      REQUIRE(u.joints() == 7);
      CHECK(u.within(config.velocity_limit));
      for (std::size_t j = 0; j < 7; ++j) {
        double mean = 0.0;
        for (std::size_t t = 0; t < 20; ++t) mean += u(t, j) / 20.0;
        double num = 0.0, den = 0.0;
        for (std::size_t t = 0; t < 20; ++t) {
          den += (u(t, j) - mean) * (u(t, j) - mean);
          if (t + 1 < 20) num += (u(t, j) - mean) * (u(t + 1, j) - mean);
        }
        if (den > 0) autocorr += num / den / (1000.0 * 7.0);
      }
    }
    CHECK(autocorr > 0.0);

    Rng a = make_rng(42, "blind"), b = make_rng(42, "blind");
    CHECK(blind_policy_sample(task, a, config) == blind_policy_sample(task, b, config));
  }
}

TEST_CASE("natural cubic spline") {
  const double x[] = {0.0, 1.0, 2.0, 3.0};
  const double y[] = {1.0, -1.0, 0.5, 2.0};
  for (int k = 0; k < 4; ++k) CHECK(natural_cubic_spline(x, y, x[k]) == doctest::Approx(y[k]).epsilon(1e-12));
  const double line[] = {0.0, 2.0, 4.0, 6.0};
  CHECK(natural_cubic_spline(x, line, 1.7) == doctest::Approx(3.4).epsilon(1e-12));
}

TEST_CASE("trace JSON round trip") {
  const ArmConfig config;
  Rng rng = make_rng(2, "json");
  EpisodeTrace t = rollout(initial_state(Task::throw_ball, config), random_trajectory(rng, config, 1.0), config);
  t.outcome.landing_x = simulate_throw(t, config.release_step, config.gravity, config);
  t.outcome.target = Vec2{0.4, 0.0};
  const EpisodeTrace back = trace_from_json(to_json(t));
  CHECK(back.states == t.states);
  CHECK(back.path == t.path);
  CHECK(back.outcome.landing_x == t.outcome.landing_x);
  CHECK(back.outcome.target == t.outcome.target);
}

TEST_CASE("arm config validation") {
  ArmConfig c;
  c.joint_count = 1;
  c.link_lengths = {0.1};
  c.joint_limits.resize(1);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  ArmConfig d;
  d.dt = 0.0;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

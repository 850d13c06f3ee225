#include "dppt/rewards.hpp"

#include <cmath>
#include <stdexcept>

namespace dppt::rewards {

double reach_reward_continuous(arm::Vec2 p, arm::Vec2 p_star) {
  return 1.0 - std::sqrt(arm::norm(p - p_star));
}

double discretize_reward(double r, const DiscreteThresholds& t) {
  if (!std::isfinite(r)) throw std::invalid_argument("discretize_reward: non-finite reward");
  if (r >= t.high) return 1.0;
  if (r >= t.mid) return 0.5;
  if (r >= t.low) return -0.5;
  return -1.0;
}

RewardValue throw_reward(double landing_x, double target_x, const ThrowThresholds& t) {
  const double d = std::abs(landing_x - target_x);
  if (d <= t.hit) return {2.0, "hit"};
  if (d <= t.near) return {1.0, "near"};
  return {-1.0, "far"};
}

RewardValue grasp_reward(const arm::GraspOutcome& outcome) {
  if (outcome.result == arm::GraspClass::success) return {2.0, "success"};
  return {1.0 - std::sqrt(outcome.distance), ""};
}

double qualitative_value(const std::string& tag) {
  if (tag == "hit") return 2.0;
  if (tag == "near" || tag == "close") return 1.0;
  if (tag == "far") return -1.0;
  throw std::invalid_argument("unknown qualitative reward '" + tag + "'");
}

bool is_qualitative_value(double v) { return v == 2.0 || v == 1.0 || v == -1.0; }

}  // namespace dppt::rewards

#pragma once

#include <string>

#include "dppt/arm.hpp"

namespace dppt::rewards {

// 1 - sqrt(||p - p*||)
double reach_reward_continuous(arm::Vec2 p, arm::Vec2 p_star);

struct DiscreteThresholds {
  double high = 0.5;  // r >= high -> +1
  double mid = 0.0;   // mid <= r < high -> +0.5
  double low = -0.5;  // low <= r < mid -> -0.5, below -> -1
};

// Maps to {+1, +0.5, -0.5, -1}; monotone non-decreasing in r.
double discretize_reward(double r, const DiscreteThresholds& t = {});

struct RewardValue {
  double value = 0.0;
  std::string tag;  // "hit", "near", "far", "success", or empty for continuous values
};

struct ThrowThresholds {
  double hit = 0.05;   // m
  double near = 0.15;  // m
};

// |dx| <= hit -> +2 (hit); <= near -> +1 (near); else -1 (far). Boundaries are closed.
RewardValue throw_reward(double landing_x, double target_x, const ThrowThresholds& t = {});

// Success -> +2, otherwise the continuous reach reward of the final distance.
RewardValue grasp_reward(const arm::GraspOutcome& outcome);

// Scalar of a qualitative label tag; throws std::invalid_argument for unknown tags.
double qualitative_value(const std::string& tag);
bool is_qualitative_value(double v);

}  // namespace dppt::rewards

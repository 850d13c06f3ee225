#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dppt/checkpoint.hpp"
#include "dppt/network.hpp"
#include "dppt/rng.hpp"

namespace dppt::policy {

constexpr double kMinLogStd = -5.0;
constexpr double kMaxLogStd = 2.0;

// Gaussian policy: tanh MLP mean, state-independent log-std.
struct PolicyParams {
  Network mean;
  Tensor log_std;

  std::size_t state_dim() const;
  std::size_t action_dim() const { return log_std.size(); }

  // Mean-network weights in layer order, then log-std.
  std::size_t size() const;
  std::vector<double> flat() const;
  // Log-std entries are clamped to [kMinLogStd, kMaxLogStd].
  void set_flat(std::span<const double> theta);
  void clamp_log_std();
  bool all_finite() const;

  Checkpoint to_checkpoint() const;
  static PolicyParams from_checkpoint(const Checkpoint& ckpt);
};

// Hidden layers get fresh weights from `rng`; the output layer and log-std
// start at zero, so every state maps to N(0, I).
PolicyParams policy_init(std::size_t state_dim, Rng& rng, std::size_t action_dim = 5,
                         std::span<const std::size_t> hidden = {});

Tensor policy_mean(const PolicyParams& params, const Tensor& state);
// Row-wise means for states [n, state_dim].
Tensor policy_mean_batch(const PolicyParams& params, const Tensor& states);
double log_prob(const PolicyParams& params, const Tensor& state, const Tensor& action);

struct ActionSample {
  Tensor action;
  double log_prob = 0.0;
};
ActionSample policy_sample(const PolicyParams& params, const Tensor& state, Rng& rng);

std::function<Tensor(const Tensor&)> deterministic_policy(const PolicyParams& params);

struct EpisodeRecord {
  std::size_t episode = 0;  // index within the iteration
  Tensor state;
  Tensor action;
  double reward = 0.0;
  double log_prob = 0.0;  // under the sampling policy
  std::size_t member = 0;  // CEM population member that produced the action
};

struct IterationBatch {
  std::size_t iteration = 0;
  std::vector<EpisodeRecord> episodes;
  std::size_t invalid = 0;

  std::vector<double> rewards() const;
  double mean_reward() const;
  double reward_std() const;
};

using StateFn = std::function<Tensor(std::size_t episode)>;
// Empty result marks the episode invalid (excluded from the batch).
using RewardFn = std::function<std::optional<double>(std::size_t episode, const Tensor& state, const Tensor& action)>;

// Runs n episodes in index order: state -> sample -> reward.
IterationBatch collect_iteration(const PolicyParams& params, std::size_t n, Rng& rng, const StateFn& state_fn,
                                 const RewardFn& reward_fn, std::size_t iteration = 0);
// Episode e is run by members[e % members.size()] and tagged with that member.
IterationBatch collect_iteration(std::span<const PolicyParams> members, std::size_t n, Rng& rng,
                                 const StateFn& state_fn, const RewardFn& reward_fn, std::size_t iteration = 0);

// Mean KL(old || new) over the batch states.
double mean_kl(const PolicyParams& old_params, const PolicyParams& new_params, std::span<const EpisodeRecord> episodes);

// ---- VPG ----
// (1/N) sum log pi(a|s) (r - mean r)
double vpg_surrogate(const PolicyParams& params, const IterationBatch& batch);
std::vector<double> vpg_gradient(const PolicyParams& params, const IterationBatch& batch);
PolicyParams vpg_update(const PolicyParams& params, const IterationBatch& batch, double lr);

// ---- TRPO ----
struct TrpoConfig {
  double kl_limit = 0.01;
  std::size_t cg_iterations = 10;
  double damping = 0.1;
  std::size_t backtracks = 10;
};
struct TrpoInfo {
  double kl = 0.0;
  double improvement = 0.0;
  std::size_t backtracks_used = 0;
  bool accepted = false;
};
// (1/N) sum exp(log pi(a|s) - log pi_old(a|s)) (r - mean r)
double trpo_surrogate(const PolicyParams& params, const PolicyParams& old_params, const IterationBatch& batch);
PolicyParams trpo_update(const PolicyParams& params, const IterationBatch& batch, const TrpoConfig& config = {},
                         TrpoInfo* info = nullptr);

// ---- CEM ----
struct CemState {
  std::vector<double> mean;
  std::vector<double> var;
  std::vector<std::vector<double>> population;
  double elite_fraction = 0.2;
  // Extra sampling variance extra_std^2 * max(1 - generation / extra_decay, 0).
  double extra_std = 0.0;
  double extra_decay = 100.0;
  std::size_t generation = 0;

  std::vector<double> sampling_std() const;
};
constexpr double kCemMinVar = 1e-6;
// Population drawn around `mean` with per-coordinate std `initial_std`.
CemState cem_init(std::vector<double> mean, double initial_std, std::size_t population, Rng& rng,
                  double elite_fraction = 0.2, double extra_std = 0.0, double extra_decay = 100.0);
// Redraws the population from the current mean and sampling std.
void cem_sample(CemState& state, Rng& rng);
// Refits mean and variance to the elite members (highest returns), advances
// the generation and draws the next population. `returns` holds one value per
// member; NaN excludes it.
void cem_update(CemState& state, std::span<const double> returns, Rng& rng);
// Mean episode return per member of a batch whose episodes carry member ids.
std::vector<double> member_returns(const IterationBatch& batch, std::size_t population);

// ---- REPS ----
struct RepsConfig {
  double epsilon = 0.5;
  double log_eta_min = -6.0;
  double log_eta_max = 6.0;
  std::size_t mean_steps = 100;  // gradient steps of the weighted mean regression
  double mean_lr = 1e-2;
};
struct RepsInfo {
  double eta = 0.0;
  double weight_kl = 0.0;
  bool dual_ok = true;
};
double reps_dual(std::span<const double> rewards, double eta, double epsilon);
double reps_solve_eta(std::span<const double> rewards, const RepsConfig& config, bool* ok = nullptr);
std::vector<double> reps_weights(std::span<const double> rewards, double eta);
// sum w log(N w)
double weight_kl(std::span<const double> weights);
PolicyParams reps_update(const PolicyParams& params, const IterationBatch& batch, const RepsConfig& config = {},
                         RepsInfo* info = nullptr);

}  // namespace dppt::policy

#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dppt/arm.hpp"
#include "dppt/autodiff.hpp"
#include "dppt/checkpoint.hpp"
#include "dppt/network.hpp"
#include "dppt/optim.hpp"

namespace dppt::behavior {

constexpr std::size_t kLatentDim = 5;

struct BehaviorConfig {
  std::size_t steps = 20;
  std::size_t joints = 7;
  std::size_t latent = kLatentDim;
  std::vector<std::size_t> shared = {256, 128};  // encoder layers common to both heads
  std::size_t head = 64;                         // hidden units of each head
  std::vector<std::size_t> decoder = {64, 128, 256};

  static BehaviorConfig desk() { return {}; }
  static BehaviorConfig paper();

  std::size_t trajectory_dim() const { return steps * joints; }
};

// Per-command standardization, stored with the model.
struct Scaler {
  Tensor mean;
  Tensor std;

  static Scaler fit(std::span<const arm::MotorTrajectory> data);
  std::vector<double> standardize(std::span<const double> raw) const;
  std::vector<double> unstandardize(std::span<const double> z) const;
};

struct GaussianLatent {
  Tensor mu;     // [latent]
  Tensor sigma;  // [latent], positive
};

class BehaviorModel {
 public:
  BehaviorModel() = default;
  explicit BehaviorModel(BehaviorConfig config);

  void initialize(Rng& rng);

  const BehaviorConfig& config() const { return config_; }
  const Network& shared() const { return shared_; }
  const Network& mu_head() const { return mu_head_; }
  const Network& log_sigma_head() const { return log_sigma_head_; }
  const Network& decoder() const { return decoder_; }
  const Scaler& scaler() const { return scaler_; }
  void set_scaler(Scaler s);

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  Checkpoint to_checkpoint() const;
  static BehaviorModel from_checkpoint(const Checkpoint& ckpt);

 private:
  BehaviorConfig config_;
  Network shared_;
  Network mu_head_;
  Network log_sigma_head_;
  Network decoder_;
  Scaler scaler_;
};

struct BoundModel {
  std::vector<Var> shared, mu_head, log_sigma_head, decoder;
  static BoundModel bind(Tape& tape, const BehaviorModel& model);
  std::vector<Var> all() const;
};

namespace graph {
// Standardized trajectories [n, T*J] -> (mu, log sigma), each [n, latent].
std::pair<Var, Var> encode(const BehaviorModel& model, const BoundModel& p, Var x);
// Latent points [n, latent] -> standardized trajectories [n, T*J].
Var decode(const BehaviorModel& model, const BoundModel& p, Var a);
// Mean over rows of the closed-form KL to N(0, I).
Var kl_loss(Var mu, Var log_sigma);
}  // namespace graph

GaussianLatent encode_trajectory(const BehaviorModel& model, const arm::MotorTrajectory& u);
// a = mu + sigma * eps, eps ~ N(0, I).
Tensor sample_latent(const GaussianLatent& latent, Rng& rng);
// Unclamped decoder output in command units, flattened T*J.
std::vector<double> decode_raw(const BehaviorModel& model, std::span<const double> a);
// Decoded trajectory clamped to the velocity limit.
arm::MotorTrajectory decode_action(const BehaviorModel& model, std::span<const double> a, double velocity_limit);
// 0.5 * sum(mu^2 + sigma^2 - log sigma^2 - 1)
double kl_loss(const GaussianLatent& latent);

struct TrainConfig {
  std::size_t steps = 6000;
  std::size_t batch_size = 64;
  double beta = 1.0;
  double warmup_fraction = 0.2;  // beta ramps linearly from 0 over this share of steps
  double holdout_fraction = 0.1;
  AdamConfig adam{.lr = 1e-3};
  std::size_t log_every = 100;
};

struct StepLog {
  std::size_t step = 0;
  double reconstruction = 0.0;  // per-trajectory sum of squared standardized errors
  double kl = 0.0;
  double beta = 0.0;
};

struct TrainResult {
  std::vector<StepLog> log;
  std::vector<std::size_t> holdout;  // corpus indices not used for training
  double holdout_rmse = 0.0;         // command units
  double corpus_std = 0.0;           // sqrt(mean per-command variance)
  double final_loss = 0.0;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fits the scaler on the training split, then minimizes reconstruction + beta * KL.
TrainResult train_behavior(BehaviorModel& model, std::span<const arm::MotorTrajectory> trajectories,
                           const TrainConfig& config, Rng& rng,
                           const std::function<void(const StepLog&)>& on_log = {});

// RMSE over all commands of decode(mu(u)) against u.
double reconstruction_rmse(const BehaviorModel& model, std::span<const arm::MotorTrajectory> data);
double command_std(std::span<const arm::MotorTrajectory> data);

struct CorpusStats {
  std::vector<double> mean;  // per command
  std::vector<double> std;
};
CorpusStats corpus_stats(std::span<const arm::MotorTrajectory> data);

// Decodes `count` prior samples and checks per-command mean/std against the
// corpus: |mean_s - mean_c| <= k * se_mean and |std_s - std_c| <= k * se_std.
struct PriorCoverage {
  double worst_mean_z = 0.0;  // largest |mean_s - mean_c| / se_mean over commands
  double worst_std_z = 0.0;
  bool within = false;
};
PriorCoverage prior_coverage(const BehaviorModel& model, std::span<const arm::MotorTrajectory> corpus,
                             std::size_t count, Rng& rng, double k = 3.0);

// Mean ||decode(a + d) - decode(a)|| / ||d|| over random a ~ N(0, I) and
// random directions of norm `radius`.
double latent_lipschitz(const BehaviorModel& model, double radius, std::size_t probes, Rng& rng);

struct TrajectoryCorpus {
  arm::Task task = arm::Task::reach_grasp;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<arm::MotorTrajectory> trajectories;
};

std::string config_hash(const arm::ArmConfig& config);
// Blind-policy samples; trajectory i uses its own substream of `seed`.
TrajectoryCorpus generate_corpus(arm::Task task, std::size_t count, std::uint64_t seed, const arm::ArmConfig& config);
void save_corpus(const TrajectoryCorpus& corpus, const std::filesystem::path& path);
TrajectoryCorpus load_corpus(const std::filesystem::path& path);

}  // namespace dppt::behavior

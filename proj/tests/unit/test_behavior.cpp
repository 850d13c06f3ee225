#include <doctest.h>

#include <cmath>
#include <numbers>

#include "dppt/behavior.hpp"
#include "test_util.hpp"

using namespace dppt;
using namespace dppt::behavior;

namespace {

BehaviorConfig tiny_config() {
  BehaviorConfig c;
  c.steps = 4;
  c.joints = 2;
  c.shared = {16};
  c.head = 8;
  c.decoder = {16, 16};
  return c;
}

BehaviorModel tiny_model(std::uint64_t seed) {
  BehaviorModel m(tiny_config());
  Rng rng = make_rng(seed, "tiny-behavior");
  m.initialize(rng);
  return m;
}

std::vector<arm::MotorTrajectory> random_corpus(std::size_t n, std::size_t steps, std::size_t joints,
                                                std::uint64_t seed) {
  Rng rng = make_rng(seed, "corpus");
  std::vector<arm::MotorTrajectory> out;
  for (std::size_t i = 0; i < n; ++i) {
    arm::MotorTrajectory u(steps, joints);
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < joints; ++j) u(t, j) = uniform(rng, -1.0, 1.0);
    out.push_back(std::move(u));
  }
  return out;
}

GaussianLatent latent(std::vector<double> mu, std::vector<double> sigma) {
  return {Tensor::vector(std::move(mu)), Tensor::vector(std::move(sigma))};
}

double log_normal(double x, double mu, double sigma) {
  const double z = (x - mu) / sigma;
  return -0.5 * z * z - std::log(sigma) - 0.5 * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST_CASE("closed-form KL examples") {
  CHECK(kl_loss(latent({1, 0, 0, 0, 0}, {1, 1, 1, 1, 1})) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(kl_loss(latent({0, 0, 0, 0, 0}, {1, 1, 1, 1, 1})) == 0.0);
  CHECK(kl_loss(latent({0}, {2.0})) == doctest::Approx(0.5 * (4.0 - std::log(4.0) - 1.0)).epsilon(1e-15));
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = make_rng(seed, "kl-nonneg");
    std::vector<double> mu(5), sigma(5);
    for (std::size_t d = 0; d < 5; ++d) {
      mu[d] = standard_normal(rng);
      sigma[d] = std::exp(uniform(rng, -2, 2));
    }
    CHECK(kl_loss(latent(mu, sigma)) >= 0.0);
  }
}

TEST_CASE("KL agrees with a Monte-Carlo estimate") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_rng(seed, "kl-mc");
    std::vector<double> mu(5), sigma(5);
    for (std::size_t d = 0; d < 5; ++d) {
      mu[d] = uniform(rng, -1.5, 1.5);
      sigma[d] = std::exp(uniform(rng, -1.0, 0.5));
    }
    const GaussianLatent q = latent(mu, sigma);
    double est = 0.0;
    const std::size_t n = 200000;
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor a = sample_latent(q, rng);
      for (std::size_t d = 0; d < 5; ++d) est += log_normal(a[d], mu[d], sigma[d]) - log_normal(a[d], 0.0, 1.0);
    }
    est /= static_cast<double>(n);
    CHECK(std::abs(est - kl_loss(q)) <= 0.01 * kl_loss(q));
  }
}

TEST_CASE("KL graph gradient matches finite differences") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(seed, "kl-grad");
    Tensor mu({3, 5}), ls({3, 5});
    for (double& v : mu.values()) v = standard_normal(rng);
    for (double& v : ls.values()) v = uniform(rng, -1, 1);
    Tape tape;
    Var m = tape.leaf(mu), s = tape.leaf(ls);
    Var kl = graph::kl_loss(m, s);
    tape.backward(kl);

    auto value = [](const Tensor& a, const Tensor& b) {
      Tape t(false);
      return graph::kl_loss(t.constant(a), t.constant(b)).value()[0];
    };
    double expected = 0.0;
    for (std::size_t r = 0; r < 3; ++r) {
      std::vector<double> mr(5), sr(5);
      for (std::size_t d = 0; d < 5; ++d) {
        mr[d] = mu[r * 5 + d];
        sr[d] = std::exp(ls[r * 5 + d]);
      }
      expected += kl_loss(latent(mr, sr)) / 3.0;
    }
    CHECK(kl.value()[0] == doctest::Approx(expected).epsilon(1e-12));

    for (std::size_t i = 0; i < 15; ++i) {
      const double eps = 1e-5;
      Tensor up = mu, down = mu;
      up[i] += eps;
      down[i] -= eps;
      CHECK(std::abs((value(up, ls) - value(down, ls)) / (2 * eps) - tape.grad(m)[i]) <= 1e-6);
      Tensor lup = ls, ldown = ls;
      lup[i] += eps;
      ldown[i] -= eps;
      CHECK(std::abs((value(mu, lup) - value(mu, ldown)) / (2 * eps) - tape.grad(s)[i]) <= 1e-6);
    }
  }
}

TEST_CASE("latent sampling") {
  Rng rng = make_rng(0, "sample");
  const GaussianLatent point = latent({0.3, -1, 2, 0, 5}, {0, 0, 0, 0, 0});
  CHECK(sample_latent(point, rng) == point.mu);

  const GaussianLatent q = latent({0.5, -1.0, 0.0, 2.0, -0.25}, {1.0, 0.5, 2.0, 0.1, 1.5});
  std::vector<double> mean(5, 0.0), var(5, 0.0);
  const std::size_t n = 100000;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor a = sample_latent(q, rng);
    for (std::size_t d = 0; d < 5; ++d) {
      mean[d] += a[d] / n;
      var[d] += (a[d] - q.mu[d]) * (a[d] - q.mu[d]) / n;
    }
  }
  for (std::size_t d = 0; d < 5; ++d) {
    CHECK(std::abs(mean[d] - q.mu[d]) <= 4 * q.sigma[d] / std::sqrt(double(n)));
    CHECK(std::sqrt(var[d]) == doctest::Approx(q.sigma[d]).epsilon(0.02));
  }
  CHECK_THROWS_AS(sample_latent(latent({0, 0}, {1}), rng), ShapeError);
}

TEST_CASE("decoder output shape and clamp") {
  BehaviorModel m(BehaviorConfig::desk());
  Rng rng = make_rng(1, "desk");
  m.initialize(rng);
  m.set_scaler(Scaler{Tensor({140}, 0.0), Tensor({140}, 10.0)});
  const std::vector<double> a = {3, -3, 3, -3, 3};
  CHECK(decode_raw(m, a).size() == 140);
  const arm::MotorTrajectory u = decode_action(m, a, 1.5);
  CHECK(u.steps() == 20);
  CHECK(u.joints() == 7);
  CHECK(u.within(1.5));
  CHECK_THROWS_AS(decode_raw(m, std::vector<double>{0, 0}), ShapeError);
  CHECK(BehaviorConfig::paper().latent == 5);
}

TEST_CASE("scaler standardization") {
  const auto corpus = random_corpus(50, 4, 2, 0);
  const Scaler s = Scaler::fit(corpus);
  std::vector<double> mean(8, 0.0), sq(8, 0.0);
  for (const auto& u : corpus) {
    const auto z = s.standardize(u.flat());
    for (std::size_t i = 0; i < 8; ++i) {
      mean[i] += z[i] / 50;
      sq[i] += z[i] * z[i] / 50;
    }
    const auto back = s.unstandardize(z);
    for (std::size_t i = 0; i < 8; ++i) CHECK(back[i] == doctest::Approx(u.flat()[i]).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(std::abs(mean[i]) <= 1e-12);
    CHECK(sq[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
  const std::vector<arm::MotorTrajectory> flat(3, arm::MotorTrajectory(4, 2, 0.5));
  for (double v : Scaler::fit(flat).std.values()) CHECK(v > 0.0);
}

TEST_CASE("training reduces reconstruction error on a small corpus") {
  const auto corpus = random_corpus(8, 4, 2, 1);
  BehaviorModel m = tiny_model(1);
  TrainConfig cfg;
  cfg.steps = 1500;
  cfg.beta = 0.0;
  cfg.holdout_fraction = 0.0;
  cfg.adam.lr = 3e-3;
  m.set_scaler(Scaler::fit(corpus));
  const double before = reconstruction_rmse(m, corpus);
  Rng rng = make_rng(1, "train");
  const TrainResult r = train_behavior(m, corpus, cfg, rng);
  CHECK(r.holdout.empty());
  const double after = reconstruction_rmse(m, corpus);
  CHECK(after <= 0.1 * before);
  CHECK(after <= 0.1 * command_std(corpus));
}

TEST_CASE("training is deterministic and keeps a holdout") {
  const auto corpus = random_corpus(40, 4, 2, 2);
  TrainConfig cfg;
  cfg.steps = 50;
  cfg.batch_size = 8;
  BehaviorModel a = tiny_model(2), b = tiny_model(2);
  Rng ra = make_rng(2, "train"), rb = make_rng(2, "train");
  const TrainResult x = train_behavior(a, corpus, cfg, ra), y = train_behavior(b, corpus, cfg, rb);
  CHECK(x.holdout == y.holdout);
  CHECK(x.holdout.size() == 4);
  CHECK(x.final_loss == y.final_loss);
  CHECK(x.holdout_rmse == y.holdout_rmse);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) CHECK(*a.parameters()[i] == *b.parameters()[i]);

  const std::vector<arm::MotorTrajectory> one(1, corpus[0]);
  CHECK_THROWS_AS(train_behavior(a, one, cfg, ra), std::invalid_argument);
}

TEST_CASE("checkpoint round trip") {
  const auto corpus = random_corpus(10, 4, 2, 3);
  BehaviorModel m = tiny_model(3);
  m.set_scaler(Scaler::fit(corpus));
  const BehaviorModel back = BehaviorModel::from_checkpoint(m.to_checkpoint());
  const std::vector<double> a = {0.1, -0.4, 0.9, 0.0, 1.2};
  CHECK(decode_raw(back, a) == decode_raw(m, a));
  const GaussianLatent q1 = encode_trajectory(m, corpus[4]), q2 = encode_trajectory(back, corpus[4]);
  CHECK(q1.mu == q2.mu);
  CHECK(q1.sigma == q2.sigma);
  for (double s : q1.sigma.values()) CHECK(s > 0.0);
}

TEST_CASE("corpus generation and persistence") {
  const arm::ArmConfig arm_cfg;
  const TrajectoryCorpus a = generate_corpus(arm::Task::throw_ball, 30, 9, arm_cfg);
  const TrajectoryCorpus b = generate_corpus(arm::Task::throw_ball, 30, 9, arm_cfg);
  REQUIRE(a.trajectories.size() == 30);
  CHECK(a.trajectories == b.trajectories);
  CHECK(a.config_hash == config_hash(arm_cfg));
  for (const auto& u : a.trajectories) CHECK(u.within(arm_cfg.velocity_limit));

  const auto dir = test_util::scratch_dir("corpus");
  save_corpus(a, dir / "c.json");
  const TrajectoryCorpus back = load_corpus(dir / "c.json");
  CHECK(back.task == a.task);
  CHECK(back.seed == a.seed);
  CHECK(back.config_hash == a.config_hash);
  CHECK(back.trajectories == a.trajectories);

  arm::ArmConfig other;
  other.dt = 0.05;
  CHECK(config_hash(other) != config_hash(arm_cfg));
}

TEST_CASE("corpus statistics") {
  const auto corpus = random_corpus(100, 4, 2, 4);
  const CorpusStats s = corpus_stats(corpus);
  REQUIRE(s.mean.size() == 8);
  double var = 0.0;
  for (double v : s.std) var += v * v / 8;
  CHECK(command_std(corpus) == doctest::Approx(std::sqrt(var)).epsilon(1e-12));
}

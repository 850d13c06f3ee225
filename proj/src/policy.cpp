#include "dppt/policy.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "dppt/optim.hpp"

namespace dppt::policy {

namespace {

constexpr std::size_t kDefaultHidden[] = {64, 64};

Tensor stack_rows(std::span<const EpisodeRecord> eps, bool actions) {
  if (eps.empty()) throw std::invalid_argument("policy update: empty batch");
  const std::size_t d = actions ? eps.front().action.size() : eps.front().state.size();
  Tensor out({eps.size(), d});
  for (std::size_t i = 0; i < eps.size(); ++i) {
    const Tensor& src = actions ? eps[i].action : eps[i].state;
    if (src.size() != d) throw ShapeError("policy batch: inconsistent dimensions");
    std::copy_n(src.data(), d, out.data() + i * d);
  }
  return out;
}

std::vector<double> advantages(const IterationBatch& batch) {
  std::vector<double> r = batch.rewards();
  const double b = batch.mean_reward();
  for (double& v : r) v -= b;
  return r;
}

// Per-row log pi(a|s) of a diagonal Gaussian, [n, 1].
Var log_prob_rows(Var mu, Var log_std, const Tensor& actions) {
  Tape& tape = mu.tape();
  const std::size_t n = actions.dim(0), d = actions.dim(1);
  Var ls = ops::add_bias(tape.constant(Tensor({n, d})), log_std);
  Var z = ops::mul(ops::sub(tape.constant(actions), mu), ops::exp(ops::scale(ls, -1.0)));
  Var per = ops::sub(ops::scale(ops::square(z), -0.5), ls);
  Var rows = ops::matmul(per, tape.constant(Tensor({d, 1}, 1.0)));
  return ops::add_constant(rows, -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi));
}

struct BoundPolicy {
  std::vector<Var> mean;
  Var log_std;
};

BoundPolicy bind(Tape& tape, const PolicyParams& p) { return {p.mean.bind(tape), tape.leaf(p.log_std)}; }

std::vector<double> flat_grad(const Tape& tape, const BoundPolicy& b) {
  std::vector<double> g;
  for (const Var& v : b.mean) {
    const Tensor& t = tape.grad(v);
    g.insert(g.end(), t.values().begin(), t.values().end());
  }
  const Tensor& t = tape.grad(b.log_std);
  g.insert(g.end(), t.values().begin(), t.values().end());
  return g;
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

std::size_t mean_param_count(const PolicyParams& p) { return p.mean.parameter_count(); }

}  // namespace

std::size_t PolicyParams::state_dim() const { return mean.layers().front().fan_in; }

std::size_t PolicyParams::size() const { return mean.parameter_count() + log_std.size(); }

std::vector<double> PolicyParams::flat() const {
  std::vector<double> out;
  out.reserve(size());
  for (const Tensor& t : mean.parameters()) out.insert(out.end(), t.values().begin(), t.values().end());
  out.insert(out.end(), log_std.values().begin(), log_std.values().end());
  return out;
}

void PolicyParams::set_flat(std::span<const double> theta) {
  if (theta.size() != size()) {
    throw ShapeError("policy parameter vector has " + std::to_string(theta.size()) + " entries, expected " +
                     std::to_string(size()));
  }
  std::size_t k = 0;
  for (Tensor& t : mean.parameters()) {
    std::copy_n(theta.data() + k, t.size(), t.data());
    k += t.size();
  }
  std::copy_n(theta.data() + k, log_std.size(), log_std.data());
  clamp_log_std();
}

void PolicyParams::clamp_log_std() {
  for (double& v : log_std.values()) v = std::clamp(v, kMinLogStd, kMaxLogStd);
}

bool PolicyParams::all_finite() const {
  for (const Tensor& t : mean.parameters()) {
    if (!t.all_finite()) return false;
  }
  return log_std.all_finite();
}

Checkpoint PolicyParams::to_checkpoint() const {
  Checkpoint ck("policy");
  std::vector<std::size_t> hidden;
  for (const LayerSpec& l : mean.layers()) {
    if (l.kind == LayerKind::dense) hidden.push_back(l.fan_out);
  }
  hidden.pop_back();
  ck.meta() = {{"state_dim", state_dim()}, {"action_dim", action_dim()}, {"hidden", hidden}};
  const auto names = mean.parameter_names("mean.");
  for (std::size_t i = 0; i < names.size(); ++i) ck.add(names[i], mean.parameters()[i]);
  ck.add("log_std", log_std);
  return ck;
}

PolicyParams PolicyParams::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "policy") throw FormatError("checkpoint kind '" + ck.kind() + "' is not policy");
  const auto hidden = ck.meta().at("hidden").get<std::vector<std::size_t>>();
  PolicyParams p;
  p.mean = Network(mlp_layers(ck.meta().at("state_dim").get<std::size_t>(), hidden,
                              ck.meta().at("action_dim").get<std::size_t>(), LayerKind::tanh));
  const auto names = p.mean.parameter_names("mean.");
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& t = ck.get(names[i]);
    if (t.shape() != p.mean.parameters()[i].shape()) throw FormatError("shape mismatch for " + names[i]);
    p.mean.parameters()[i] = t;
  }
  p.log_std = ck.get("log_std");
  if (p.log_std.size() != ck.meta().at("action_dim").get<std::size_t>()) throw FormatError("log_std size mismatch");
  return p;
}

PolicyParams policy_init(std::size_t state_dim, Rng& rng, std::size_t action_dim, std::span<const std::size_t> hidden) {
  if (state_dim == 0 || action_dim == 0) throw std::invalid_argument("policy_init: dimensions must be positive");
  if (hidden.empty()) hidden = kDefaultHidden;
  PolicyParams p;
  p.mean = Network(mlp_layers(state_dim, hidden, action_dim, LayerKind::tanh));
  p.mean.initialize(rng);
  auto& params = p.mean.parameters();
  params[params.size() - 2].fill(0.0);
  params[params.size() - 1].fill(0.0);
  p.log_std = Tensor({action_dim});
  return p;
}

Tensor policy_mean_batch(const PolicyParams& params, const Tensor& states) {
  if (states.rank() != 2 || states.dim(1) != params.state_dim()) {
    throw ShapeError("policy: states " + shape_string(states.shape()) + ", expected [n," +
                     std::to_string(params.state_dim()) + "]");
  }
  return params.mean.forward(states);
}

Tensor policy_mean(const PolicyParams& params, const Tensor& state) {
  if (state.size() != params.state_dim()) {
    throw ShapeError("policy: state has " + std::to_string(state.size()) + " entries, expected " +
                     std::to_string(params.state_dim()));
  }
  return policy_mean_batch(params, state.reshaped({1, state.size()})).reshaped({params.action_dim()});
}

double log_prob(const PolicyParams& params, const Tensor& state, const Tensor& action) {
  const Tensor mu = policy_mean(params, state);
  if (action.size() != mu.size()) throw ShapeError("log_prob: action dimension mismatch");
  double lp = -0.5 * static_cast<double>(mu.size()) * std::log(2.0 * std::numbers::pi);
  for (std::size_t d = 0; d < mu.size(); ++d) {
    const double z = (action[d] - mu[d]) * std::exp(-params.log_std[d]);
    lp += -0.5 * z * z - params.log_std[d];
  }
  return lp;
}

ActionSample policy_sample(const PolicyParams& params, const Tensor& state, Rng& rng) {
  ActionSample s;
  s.action = policy_mean(params, state);
  for (std::size_t d = 0; d < s.action.size(); ++d) s.action[d] += std::exp(params.log_std[d]) * standard_normal(rng);
  s.log_prob = log_prob(params, state, s.action);
  return s;
}

std::function<Tensor(const Tensor&)> deterministic_policy(const PolicyParams& params) {
  return [params](const Tensor& s) { return policy_mean(params, s); };
}

std::vector<double> IterationBatch::rewards() const {
  std::vector<double> r;
  r.reserve(episodes.size());
  for (const auto& e : episodes) r.push_back(e.reward);
  return r;
}

double IterationBatch::mean_reward() const {
  if (episodes.empty()) return 0.0;
  double s = 0.0;
  for (const auto& e : episodes) s += e.reward;
  return s / static_cast<double>(episodes.size());
}

double IterationBatch::reward_std() const {
  if (episodes.size() < 2) return 0.0;
  const double m = mean_reward();
  double s = 0.0;
  for (const auto& e : episodes) s += (e.reward - m) * (e.reward - m);
  return std::sqrt(s / static_cast<double>(episodes.size()));
}

IterationBatch collect_iteration(const PolicyParams& params, std::size_t n, Rng& rng, const StateFn& state_fn,
                                 const RewardFn& reward_fn, std::size_t iteration) {
  return collect_iteration(std::span<const PolicyParams>(&params, 1), n, rng, state_fn, reward_fn, iteration);
}

IterationBatch collect_iteration(std::span<const PolicyParams> members, std::size_t n, Rng& rng,
                                 const StateFn& state_fn, const RewardFn& reward_fn, std::size_t iteration) {
  if (members.empty()) throw std::invalid_argument("collect_iteration: no policy");
  IterationBatch batch;
  batch.iteration = iteration;
  for (std::size_t e = 0; e < n; ++e) {
    EpisodeRecord rec;
    rec.episode = e;
    rec.member = e % members.size();
    rec.state = state_fn(e);
    ActionSample s = policy_sample(members[rec.member], rec.state, rng);
    rec.action = std::move(s.action);
    rec.log_prob = s.log_prob;
    const auto r = reward_fn(e, rec.state, rec.action);
    if (!r || !std::isfinite(*r)) {
      ++batch.invalid;
      continue;
    }
    rec.reward = *r;
    batch.episodes.push_back(std::move(rec));
  }
  return batch;
}

double mean_kl(const PolicyParams& old_params, const PolicyParams& new_params, std::span<const EpisodeRecord> episodes) {
  const Tensor states = stack_rows(episodes, false);
  const Tensor m0 = policy_mean_batch(old_params, states), m1 = policy_mean_batch(new_params, states);
  const std::size_t n = states.dim(0), d = old_params.action_dim();
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      const double s0 = std::exp(2.0 * old_params.log_std[k]), s1 = std::exp(2.0 * new_params.log_std[k]);
      const double dm = m0[i * d + k] - m1[i * d + k];
      kl += new_params.log_std[k] - old_params.log_std[k] + (s0 + dm * dm) / (2.0 * s1) - 0.5;
    }
  }
  return kl / static_cast<double>(n);
}

double vpg_surrogate(const PolicyParams& params, const IterationBatch& batch) {
  const auto adv = advantages(batch);
  double s = 0.0;
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    s += log_prob(params, batch.episodes[i].state, batch.episodes[i].action) * adv[i];
  }
  return s / static_cast<double>(batch.episodes.size());
}

std::vector<double> vpg_gradient(const PolicyParams& params, const IterationBatch& batch) {
  const auto adv = advantages(batch);
  const std::size_t n = batch.episodes.size();
  Tape tape;
  BoundPolicy b = bind(tape, params);
  Var mu = params.mean.forward(tape, tape.constant(stack_rows(batch.episodes, false)), b.mean);
  Var lp = log_prob_rows(mu, b.log_std, stack_rows(batch.episodes, true));
  Tensor w({n, 1});
  for (std::size_t i = 0; i < n; ++i) w[i] = adv[i] / static_cast<double>(n);
  tape.backward(ops::sum(ops::mul(lp, tape.constant(std::move(w)))));
  return flat_grad(tape, b);
}

PolicyParams vpg_update(const PolicyParams& params, const IterationBatch& batch, double lr) {
  const auto g = vpg_gradient(params, batch);
  std::vector<double> theta = params.flat();
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += lr * g[i];
  PolicyParams out = params;
  out.set_flat(theta);
  return out;
}

double trpo_surrogate(const PolicyParams& params, const PolicyParams& old_params, const IterationBatch& batch) {
  const auto adv = advantages(batch);
  double s = 0.0;
  for (std::size_t i = 0; i < batch.episodes.size(); ++i) {
    const auto& e = batch.episodes[i];
    s += std::exp(log_prob(params, e.state, e.action) - log_prob(old_params, e.state, e.action)) * adv[i];
  }
  return s / static_cast<double>(batch.episodes.size());
}

PolicyParams trpo_update(const PolicyParams& params, const IterationBatch& batch, const TrpoConfig& config,
                         TrpoInfo* info) {
  TrpoInfo local;
  TrpoInfo& out_info = info ? *info : local;
  out_info = {};
  const std::size_t n = batch.episodes.size();
  const std::size_t d = params.action_dim();
  const std::size_t pm = mean_param_count(params);
  const std::size_t p = params.size();

  const std::vector<double> g = vpg_gradient(params, batch);
  if (dot(g, g) == 0.0) return params;

  // Jacobian of the mean outputs w.r.t. mean-network parameters, one row per (episode, output).
  Eigen::MatrixXd jac(n * d, pm);
  {
    Tape tape;
    BoundPolicy b = bind(tape, params);
    Var mu = params.mean.forward(tape, tape.constant(stack_rows(batch.episodes, false)), b.mean);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        Tensor seed({n, d});
        seed[i * d + k] = 1.0;
        tape.backward(mu, seed);
        const auto row = flat_grad(tape, b);
        for (std::size_t j = 0; j < pm; ++j) jac(static_cast<Eigen::Index>(i * d + k), static_cast<Eigen::Index>(j)) = row[j];
      }
    }
  }
  Eigen::VectorXd inv_var(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) inv_var[static_cast<Eigen::Index>(i * d + k)] = std::exp(-2.0 * params.log_std[k]);
  }
  const auto fvp = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(p));
    const Eigen::VectorXd jv = jac * v.head(static_cast<Eigen::Index>(pm));
    out.head(static_cast<Eigen::Index>(pm)) = jac.transpose() * (inv_var.cwiseProduct(jv)) / static_cast<double>(n);
    out.tail(static_cast<Eigen::Index>(d)) = 2.0 * v.tail(static_cast<Eigen::Index>(d));
    return Eigen::VectorXd(out + config.damping * v);
  };

  const Eigen::VectorXd gv = Eigen::Map<const Eigen::VectorXd>(g.data(), static_cast<Eigen::Index>(p));
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
  Eigen::VectorXd r = gv, dir = gv;
  double rr = r.dot(r);
  for (std::size_t it = 0; it < config.cg_iterations && rr > 1e-20; ++it) {
    const Eigen::VectorXd fd = fvp(dir);
    const double alpha = rr / dir.dot(fd);
    x += alpha * dir;
    r -= alpha * fd;
    const double rr_new = r.dot(r);
    dir = r + (rr_new / rr) * dir;
    rr = rr_new;
  }
  const double shs = x.dot(fvp(x));
  if (!(shs > 0.0) || !std::isfinite(shs)) return params;
  const Eigen::VectorXd full = std::sqrt(2.0 * config.kl_limit / shs) * x;

  const std::vector<double> theta = params.flat();
  double frac = 1.0;
  for (std::size_t k = 0; k < config.backtracks; ++k, frac *= 0.5) {
    std::vector<double> cand = theta;
    for (std::size_t i = 0; i < p; ++i) cand[i] += frac * full[static_cast<Eigen::Index>(i)];
    PolicyParams next = params;
    next.set_flat(cand);
    const double kl = mean_kl(params, next, batch.episodes);
    const double improvement = trpo_surrogate(next, params, batch);
    if (next.all_finite() && kl <= config.kl_limit && improvement > 0.0) {
      out_info = {kl, improvement, k, true};
      return next;
    }
  }
  out_info.backtracks_used = config.backtracks;
  return params;
}

std::vector<double> CemState::sampling_std() const {
  const double mult = extra_decay > 0.0 ? std::max(0.0, 1.0 - static_cast<double>(generation) / extra_decay) : 0.0;
  std::vector<double> out(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) out[i] = std::sqrt(var[i] + extra_std * extra_std * mult);
  return out;
}

CemState cem_init(std::vector<double> mean, double initial_std, std::size_t population, Rng& rng,
                  double elite_fraction, double extra_std, double extra_decay) {
  if (population < 4) throw std::invalid_argument("CEM population must be at least 4");
  if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) throw std::invalid_argument("CEM elite fraction must be in (0, 1]");
  if (!(extra_std >= 0.0)) throw std::invalid_argument("CEM extra std must be non-negative");
  CemState s;
  s.var.assign(mean.size(), std::max(kCemMinVar, initial_std * initial_std));
  s.mean = std::move(mean);
  s.elite_fraction = elite_fraction;
  s.extra_std = extra_std;
  s.extra_decay = extra_decay;
  s.population.resize(population);
  cem_sample(s, rng);
  return s;
}

void cem_sample(CemState& state, Rng& rng) {
  const std::vector<double> sd = state.sampling_std();
  for (auto& m : state.population) {
    m = state.mean;
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += sd[i] * standard_normal(rng);
  }
}

void cem_update(CemState& state, std::span<const double> returns, Rng& rng) {
  const std::size_t pop = state.population.size();
  if (pop < 4) throw std::invalid_argument("CEM population must be at least 4");
  if (returns.size() != pop) throw std::invalid_argument("CEM: one return per population member required");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < pop; ++i) {
    if (std::isfinite(returns[i])) valid.push_back(i);
  }
  if (!valid.empty()) {
    std::stable_sort(valid.begin(), valid.end(), [&](std::size_t a, std::size_t b) { return returns[a] > returns[b]; });
    const std::size_t elites = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(state.elite_fraction * static_cast<double>(valid.size()))), 1, valid.size());
    const std::size_t dim = state.mean.size();
    std::vector<double> mean(dim, 0.0), var(dim, 0.0);
    for (std::size_t e = 0; e < elites; ++e) {
      for (std::size_t i = 0; i < dim; ++i) mean[i] += state.population[valid[e]][i];
    }
    for (double& m : mean) m /= static_cast<double>(elites);
    for (std::size_t e = 0; e < elites; ++e) {
      for (std::size_t i = 0; i < dim; ++i) {
        const double dv = state.population[valid[e]][i] - mean[i];
        var[i] += dv * dv;
      }
    }
    for (double& v : var) v = std::max(kCemMinVar, v / static_cast<double>(elites));
    state.mean = std::move(mean);
    state.var = std::move(var);
  }
  ++state.generation;
  cem_sample(state, rng);
}

std::vector<double> member_returns(const IterationBatch& batch, std::size_t population) {
  std::vector<double> sum(population, 0.0), count(population, 0.0);
  for (const auto& e : batch.episodes) {
    if (e.member >= population) throw std::out_of_range("episode member id outside population");
    sum[e.member] += e.reward;
    count[e.member] += 1.0;
  }
  std::vector<double> out(population);
  for (std::size_t i = 0; i < population; ++i) {
    out[i] = count[i] > 0.0 ? sum[i] / count[i] : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

double reps_dual(std::span<const double> rewards, double eta, double epsilon) {
  const double rmax = *std::max_element(rewards.begin(), rewards.end());
  double s = 0.0;
  for (double r : rewards) s += std::exp((r - rmax) / eta);
  return eta * epsilon + eta * std::log(s / static_cast<double>(rewards.size())) + rmax;
}

double reps_solve_eta(std::span<const double> rewards, const RepsConfig& config, bool* ok) {
  if (rewards.empty()) throw std::invalid_argument("REPS: empty reward set");
  const auto f = [&](double log_eta) { return reps_dual(rewards, std::exp(log_eta), config.epsilon); };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = config.log_eta_min, b = config.log_eta_max;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && b - a > 1e-12; ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  const double log_eta = 0.5 * (a + b);
  const bool good = std::isfinite(f(log_eta));
  if (ok) *ok = good;
  return good ? std::exp(log_eta) : std::exp(config.log_eta_min);
}

std::vector<double> reps_weights(std::span<const double> rewards, double eta) {
  const double rmax = *std::max_element(rewards.begin(), rewards.end());
  std::vector<double> w(rewards.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += (w[i] = std::exp((rewards[i] - rmax) / eta));
  for (double& v : w) v /= s;
  return w;
}

double weight_kl(std::span<const double> weights) {
  const double n = static_cast<double>(weights.size());
  double kl = 0.0;
  for (double w : weights) {
    if (w > 0.0) kl += w * std::log(n * w);
  }
  return kl;
}

PolicyParams reps_update(const PolicyParams& params, const IterationBatch& batch, const RepsConfig& config,
                         RepsInfo* info) {
  const std::vector<double> rewards = batch.rewards();
  bool ok = true;
  const double eta = reps_solve_eta(rewards, config, &ok);
  const std::vector<double> w = reps_weights(rewards, eta);
  if (info) *info = {eta, weight_kl(w), ok};

  const std::size_t n = rewards.size(), d = params.action_dim();
  const Tensor states = stack_rows(batch.episodes, false);
  const Tensor actions = stack_rows(batch.episodes, true);
  const Tensor mu_old = policy_mean_batch(params, states);
  const double uniform = 1.0 / static_cast<double>(n);

  // Regression targets whose loss gradient at the current parameters equals
  // that of sum (w_i - 1/N) ||a_i - mu(s_i)||^2.
  Tensor targets = mu_old;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = static_cast<double>(n) * (w[i] - uniform);
    for (std::size_t k = 0; k < d; ++k) targets[i * d + k] += c * (actions[i * d + k] - mu_old[i * d + k]);
  }
  Tensor inv_var({n, d});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) inv_var[i * d + k] = std::exp(-2.0 * params.log_std[k]) / static_cast<double>(n);
  }

  PolicyParams out = params;
  AdamState adam;
  const AdamConfig adam_cfg{.lr = config.mean_lr};
  for (std::size_t step = 0; step < config.mean_steps; ++step) {
    Tape tape;
    std::vector<Var> bound = out.mean.bind(tape);
    Var mu = out.mean.forward(tape, tape.constant(states), bound);
    Var diff = ops::sub(mu, tape.constant(targets));
    tape.backward(ops::sum(ops::mul(ops::square(diff), tape.constant(inv_var))));
    std::vector<Tensor> grads;
    bool zero = true;
    for (const Var& v : bound) {
      grads.push_back(tape.grad(v));
      zero = zero && std::all_of(grads.back().values().begin(), grads.back().values().end(),
                                 [](double x) { return x == 0.0; });
    }
    if (zero) break;
    std::vector<Tensor*> ptrs;
    for (Tensor& t : out.mean.parameters()) ptrs.push_back(&t);
    if (!adam_step(ptrs, grads, adam, adam_cfg)) break;
  }

  for (std::size_t k = 0; k < d; ++k) {
    double var = std::exp(2.0 * params.log_std[k]);
    for (std::size_t i = 0; i < n; ++i) {
      const double dev = actions[i * d + k] - mu_old[i * d + k];
      var += (w[i] - uniform) * dev * dev;
    }
    var = std::max(var, std::exp(2.0 * kMinLogStd));
    out.log_std[k] = 0.5 * std::log(var);
  }
  out.clamp_log_std();
  return out;
}

}  // namespace dppt::policy

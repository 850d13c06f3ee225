#include "dppt/behavior.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace dppt::behavior {

using nlohmann::json;

namespace {

// Floor for per-command std; commands that never vary standardize to zero.
constexpr double kMinStd = 1e-3;

void check_trajectory(const BehaviorConfig& c, const arm::MotorTrajectory& u) {
  if (u.steps() != c.steps || u.joints() != c.joints) {
    throw std::invalid_argument("trajectory is " + std::to_string(u.steps()) + "x" + std::to_string(u.joints()) +
                                ", model expects " + std::to_string(c.steps) + "x" + std::to_string(c.joints));
  }
}

Tensor standardized_rows(const BehaviorModel& model, std::span<const arm::MotorTrajectory> data,
                         std::span<const std::size_t> rows) {
  const std::size_t d = model.config().trajectory_dim();
  Tensor x({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto z = model.scaler().standardize(data[rows[r]].flat());
    std::copy(z.begin(), z.end(), x.data() + r * d);
  }
  return x;
}

void load_network(Network& net, const Checkpoint& ck, const std::string& prefix) {
  const auto names = net.parameter_names(prefix);
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& t = ck.get(names[i]);
    if (t.shape() != net.parameters()[i].shape()) throw FormatError("shape mismatch for " + names[i]);
    net.parameters()[i] = t;
  }
}

void save_network(const Network& net, Checkpoint& ck, const std::string& prefix) {
  const auto names = net.parameter_names(prefix);
  for (std::size_t i = 0; i < names.size(); ++i) ck.add(names[i], net.parameters()[i]);
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

BehaviorConfig BehaviorConfig::paper() {
  BehaviorConfig c;
  c.shared = {1000, 500};
  c.head = 250;
  c.decoder = {250, 500, 1000};
  return c;
}

Scaler Scaler::fit(std::span<const arm::MotorTrajectory> data) {
  if (data.empty()) throw std::invalid_argument("Scaler::fit: empty data");
  const std::size_t d = data.front().flat().size();
  Scaler s{Tensor({d}), Tensor({d})};
  for (const auto& u : data) {
    if (u.flat().size() != d) throw std::invalid_argument("Scaler::fit: mixed trajectory sizes");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += u.flat()[i];
  }
  const double n = static_cast<double>(data.size());
  for (double& m : s.mean.values()) m /= n;
  for (const auto& u : data) {
    for (std::size_t i = 0; i < d; ++i) s.std[i] += (u.flat()[i] - s.mean[i]) * (u.flat()[i] - s.mean[i]);
  }
  for (double& v : s.std.values()) v = std::max(kMinStd, std::sqrt(v / n));
  return s;
}

std::vector<double> Scaler::standardize(std::span<const double> raw) const {
  if (raw.size() != mean.size()) throw ShapeError("Scaler: dimension mismatch");
  std::vector<double> z(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) z[i] = (raw[i] - mean[i]) / std[i];
  return z;
}

std::vector<double> Scaler::unstandardize(std::span<const double> z) const {
  if (z.size() != mean.size()) throw ShapeError("Scaler: dimension mismatch");
  std::vector<double> raw(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) raw[i] = z[i] * std[i] + mean[i];
  return raw;
}

BehaviorModel::BehaviorModel(BehaviorConfig config) : config_(std::move(config)) {
  if (config_.latent == 0 || config_.trajectory_dim() == 0 || config_.shared.empty()) {
    throw std::invalid_argument("BehaviorModel: invalid dimensions");
  }
  std::vector<LayerSpec> shared;
  std::size_t in = config_.trajectory_dim();
  for (std::size_t h : config_.shared) {
    shared.push_back(LayerSpec::dense(in, h));
    shared.push_back(LayerSpec::tanh());
    in = h;
  }
  shared_ = Network(std::move(shared));
  const std::size_t head_hidden[] = {config_.head};
  mu_head_ = Network(mlp_layers(in, head_hidden, config_.latent, LayerKind::tanh));
  log_sigma_head_ = Network(mlp_layers(in, head_hidden, config_.latent, LayerKind::tanh));
  decoder_ = Network(mlp_layers(config_.latent, config_.decoder, config_.trajectory_dim(), LayerKind::tanh));
  const std::size_t d = config_.trajectory_dim();
  scaler_ = {Tensor({d}, 0.0), Tensor({d}, 1.0)};
}

void BehaviorModel::initialize(Rng& rng) {
  shared_.initialize(rng);
  mu_head_.initialize(rng);
  log_sigma_head_.initialize(rng);
  decoder_.initialize(rng);
}

void BehaviorModel::set_scaler(Scaler s) {
  if (s.mean.size() != config_.trajectory_dim() || s.std.size() != config_.trajectory_dim()) {
    throw ShapeError("BehaviorModel: scaler dimension mismatch");
  }
  scaler_ = std::move(s);
}

std::vector<Tensor*> BehaviorModel::parameters() {
  std::vector<Tensor*> out;
  for (Network* n : {&shared_, &mu_head_, &log_sigma_head_, &decoder_}) {
    for (Tensor& t : n->parameters()) out.push_back(&t);
  }
  return out;
}

std::vector<const Tensor*> BehaviorModel::parameters() const {
  std::vector<const Tensor*> out;
  for (const Network* n : {&shared_, &mu_head_, &log_sigma_head_, &decoder_}) {
    for (const Tensor& t : n->parameters()) out.push_back(&t);
  }
  return out;
}

std::size_t BehaviorModel::parameter_count() const {
  return shared_.parameter_count() + mu_head_.parameter_count() + log_sigma_head_.parameter_count() +
         decoder_.parameter_count();
}

Checkpoint BehaviorModel::to_checkpoint() const {
  Checkpoint ck("behavior");
  ck.meta() = {{"steps", config_.steps},   {"joints", config_.joints},   {"latent", config_.latent},
               {"shared", config_.shared}, {"head", config_.head},       {"decoder", config_.decoder}};
  save_network(shared_, ck, "shared.");
  save_network(mu_head_, ck, "mu.");
  save_network(log_sigma_head_, ck, "log_sigma.");
  save_network(decoder_, ck, "decoder.");
  ck.add("scaler.mean", scaler_.mean);
  ck.add("scaler.std", scaler_.std);
  return ck;
}

BehaviorModel BehaviorModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind() != "behavior") throw FormatError("checkpoint kind '" + ck.kind() + "' is not behavior");
  const json& m = ck.meta();
  BehaviorConfig c;
  c.steps = m.at("steps").get<std::size_t>();
  c.joints = m.at("joints").get<std::size_t>();
  c.latent = m.at("latent").get<std::size_t>();
  c.shared = m.at("shared").get<std::vector<std::size_t>>();
  c.head = m.at("head").get<std::size_t>();
  c.decoder = m.at("decoder").get<std::vector<std::size_t>>();
  BehaviorModel model(c);
  load_network(model.shared_, ck, "shared.");
  load_network(model.mu_head_, ck, "mu.");
  load_network(model.log_sigma_head_, ck, "log_sigma.");
  load_network(model.decoder_, ck, "decoder.");
  model.set_scaler({ck.get("scaler.mean"), ck.get("scaler.std")});
  return model;
}

BoundModel BoundModel::bind(Tape& tape, const BehaviorModel& model) {
  return {model.shared().bind(tape), model.mu_head().bind(tape), model.log_sigma_head().bind(tape),
          model.decoder().bind(tape)};
}

std::vector<Var> BoundModel::all() const {
  std::vector<Var> out;
  for (const auto* v : {&shared, &mu_head, &log_sigma_head, &decoder}) out.insert(out.end(), v->begin(), v->end());
  return out;
}

namespace graph {

std::pair<Var, Var> encode(const BehaviorModel& model, const BoundModel& p, Var x) {
  Tape& tape = x.tape();
  Var h = model.shared().forward(tape, x, p.shared);
  return {model.mu_head().forward(tape, h, p.mu_head), model.log_sigma_head().forward(tape, h, p.log_sigma_head)};
}

Var decode(const BehaviorModel& model, const BoundModel& p, Var a) {
  return model.decoder().forward(a.tape(), a, p.decoder);
}

Var kl_loss(Var mu, Var log_sigma) {
  const double rows = static_cast<double>(mu.shape()[0]);
  // sigma^2 - 2 log sigma + mu^2 - 1, summed then halved.
  Var var = ops::exp(ops::scale(log_sigma, 2.0));
  Var terms = ops::add(ops::sub(var, ops::scale(log_sigma, 2.0)), ops::square(mu));
  return ops::scale(ops::add_constant(ops::scale(ops::sum(terms), 1.0 / rows), -static_cast<double>(mu.shape()[1])),
                    0.5);
}

}  // namespace graph

GaussianLatent encode_trajectory(const BehaviorModel& model, const arm::MotorTrajectory& u) {
  check_trajectory(model.config(), u);
  Tape tape(false);
  BoundModel p = BoundModel::bind(tape, model);
  const auto z = model.scaler().standardize(u.flat());
  auto [mu, log_sigma] = graph::encode(model, p, tape.constant(Tensor({1, z.size()}, z)));
  GaussianLatent out{mu.value().reshaped({model.config().latent}), log_sigma.value().reshaped({model.config().latent})};
  for (double& s : out.sigma.values()) s = std::exp(s);
  return out;
}

Tensor sample_latent(const GaussianLatent& latent, Rng& rng) {
  if (latent.mu.size() != latent.sigma.size()) throw ShapeError("sample_latent: mu/sigma size mismatch");
  Tensor a = latent.mu;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double eps = standard_normal(rng);
    a[i] += latent.sigma[i] * eps;
  }
  return a;
}

std::vector<double> decode_raw(const BehaviorModel& model, std::span<const double> a) {
  if (a.size() != model.config().latent) {
    throw ShapeError("decode: action has " + std::to_string(a.size()) + " entries, expected " +
                     std::to_string(model.config().latent));
  }
  Tape tape(false);
  BoundModel p = BoundModel::bind(tape, model);
  Var out = graph::decode(model, p, tape.constant(Tensor({1, a.size()}, std::vector<double>(a.begin(), a.end()))));
  return model.scaler().unstandardize(out.value().values());
}

arm::MotorTrajectory decode_action(const BehaviorModel& model, std::span<const double> a, double velocity_limit) {
  arm::MotorTrajectory u(model.config().steps, model.config().joints, decode_raw(model, a));
  u.clamp(velocity_limit);
  return u;
}

double kl_loss(const GaussianLatent& latent) {
  double kl = 0.0;
  for (std::size_t d = 0; d < latent.mu.size(); ++d) {
    const double s2 = latent.sigma[d] * latent.sigma[d];
    kl += latent.mu[d] * latent.mu[d] + s2 - std::log(s2) - 1.0;
  }
  return 0.5 * kl;
}

TrainResult train_behavior(BehaviorModel& model, std::span<const arm::MotorTrajectory> trajectories,
                           const TrainConfig& config, Rng& rng, const std::function<void(const StepLog&)>& on_log) {
  if (trajectories.size() < 2) throw std::invalid_argument("train_behavior: need at least 2 trajectories");
  for (const auto& u : trajectories) check_trajectory(model.config(), u);

  std::vector<std::size_t> order(trajectories.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t held = static_cast<std::size_t>(std::floor(config.holdout_fraction * trajectories.size()));
  held = std::min(held, trajectories.size() - 1);
  TrainResult result;
  result.holdout.assign(order.begin(), order.begin() + held);
  std::vector<std::size_t> train(order.begin() + held, order.end());

  std::vector<arm::MotorTrajectory> train_set;
  for (std::size_t i : train) train_set.push_back(trajectories[i]);
  model.set_scaler(Scaler::fit(train_set));

  const std::size_t batch = std::min(config.batch_size, train.size());
  const std::size_t latent = model.config().latent;
  const std::size_t warmup = static_cast<std::size_t>(config.warmup_fraction * config.steps);
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
  AdamState adam;
  StepLog acc;
  std::size_t acc_n = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<std::size_t> rows(batch);
    if (batch == train.size()) {
      rows = train;
    } else {
      for (auto& r : rows) r = train[pick(rng)];
    }
    Tensor eps({batch, latent});
    for (double& e : eps.values()) e = standard_normal(rng);
    const double beta = warmup == 0 ? config.beta
                                    : config.beta * std::min(1.0, static_cast<double>(step) / static_cast<double>(warmup));

    Tape tape;
    BoundModel p = BoundModel::bind(tape, model);
    Var x = tape.constant(standardized_rows(model, trajectories, rows));
    auto [mu, log_sigma] = graph::encode(model, p, x);
    Var a = ops::add(mu, ops::mul(ops::exp(log_sigma), tape.constant(std::move(eps))));
    Var recon = graph::decode(model, p, a);
    Var rec = ops::scale(ops::sum(ops::square(ops::sub(recon, x))), 1.0 / static_cast<double>(batch));
    Var kl = graph::kl_loss(mu, log_sigma);
    Var loss = ops::add(rec, ops::scale(kl, beta));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      throw DivergenceError("behavior training diverged at step " + std::to_string(step));
    }
    tape.backward(loss);
    std::vector<Tensor> grads;
    for (const Var& v : p.all()) grads.push_back(tape.grad(v));
    const auto params = model.parameters();
    if (!adam_step(params, grads, adam, config.adam)) {
      throw DivergenceError("behavior training produced a non-finite gradient at step " + std::to_string(step));
    }
    acc.reconstruction += rec.value()[0];
    acc.kl += kl.value()[0];
    ++acc_n;
    result.final_loss = lv;
    const bool last = step + 1 == config.steps;
    if ((config.log_every && (step + 1) % config.log_every == 0) || last) {
      StepLog entry{step + 1, acc.reconstruction / acc_n, acc.kl / acc_n, beta};
      result.log.push_back(entry);
      if (on_log) on_log(entry);
      acc = {};
      acc_n = 0;
    }
  }

  std::vector<arm::MotorTrajectory> held_set;
  for (std::size_t i : result.holdout) held_set.push_back(trajectories[i]);
  result.holdout_rmse = held_set.empty() ? 0.0 : reconstruction_rmse(model, held_set);
  result.corpus_std = command_std(trajectories);
  return result;
}

double reconstruction_rmse(const BehaviorModel& model, std::span<const arm::MotorTrajectory> data) {
  if (data.empty()) throw std::invalid_argument("reconstruction_rmse: empty data");
  double sq = 0.0;
  std::size_t n = 0;
  for (const auto& u : data) {
    const GaussianLatent z = encode_trajectory(model, u);
    const auto raw = decode_raw(model, z.mu.values());
    for (std::size_t i = 0; i < raw.size(); ++i) sq += (raw[i] - u.flat()[i]) * (raw[i] - u.flat()[i]);
    n += raw.size();
  }
  return std::sqrt(sq / static_cast<double>(n));
}

CorpusStats corpus_stats(std::span<const arm::MotorTrajectory> data) {
  const Scaler s = Scaler::fit(data);
  CorpusStats out{std::vector<double>(s.mean.values().begin(), s.mean.values().end()), {}};
  const double n = static_cast<double>(data.size());
  out.std.assign(out.mean.size(), 0.0);
  for (const auto& u : data) {
    for (std::size_t i = 0; i < out.mean.size(); ++i) out.std[i] += (u.flat()[i] - out.mean[i]) * (u.flat()[i] - out.mean[i]);
  }
  for (double& v : out.std) v = std::sqrt(v / n);
  return out;
}

double command_std(std::span<const arm::MotorTrajectory> data) {
  const CorpusStats s = corpus_stats(data);
  double var = 0.0;
  for (double v : s.std) var += v * v;
  return std::sqrt(var / static_cast<double>(s.std.size()));
}

PriorCoverage prior_coverage(const BehaviorModel& model, std::span<const arm::MotorTrajectory> corpus,
                             std::size_t count, Rng& rng, double k) {
  if (count < 2) throw std::invalid_argument("prior_coverage: need at least 2 samples");
  const CorpusStats ref = corpus_stats(corpus);
  std::vector<arm::MotorTrajectory> samples;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> a(model.config().latent);
    for (double& v : a) v = standard_normal(rng);
    samples.push_back(arm::MotorTrajectory(model.config().steps, model.config().joints, decode_raw(model, a)));
  }
  const CorpusStats got = corpus_stats(samples);
  // Commands that barely vary in the corpus get a floor on the standard error.
  const double floor = 0.01 * command_std(corpus);
  const double n = static_cast<double>(count);
  PriorCoverage out;
  for (std::size_t i = 0; i < ref.mean.size(); ++i) {
    const double se_mean = std::max(floor, ref.std[i] / std::sqrt(n));
    const double se_std = std::max(floor, ref.std[i] / std::sqrt(2.0 * (n - 1.0)));
    out.worst_mean_z = std::max(out.worst_mean_z, std::abs(got.mean[i] - ref.mean[i]) / se_mean);
    out.worst_std_z = std::max(out.worst_std_z, std::abs(got.std[i] - ref.std[i]) / se_std);
  }
  out.within = out.worst_mean_z <= k && out.worst_std_z <= k;
  return out;
}

double latent_lipschitz(const BehaviorModel& model, double radius, std::size_t probes, Rng& rng) {
  if (probes == 0 || !(radius > 0.0)) throw std::invalid_argument("latent_lipschitz: need probes and a positive radius");
  const std::size_t dim = model.config().latent;
  double total = 0.0;
  for (std::size_t p = 0; p < probes; ++p) {
    std::vector<double> a(dim), d(dim);
    for (double& v : a) v = standard_normal(rng);
    double len = 0.0;
    for (double& v : d) {
      v = standard_normal(rng);
      len += v * v;
    }
    len = std::sqrt(len);
    std::vector<double> b = a;
    for (std::size_t i = 0; i < dim; ++i) b[i] += radius * d[i] / len;
    const auto ua = decode_raw(model, a), ub = decode_raw(model, b);
    double sq = 0.0;
    for (std::size_t i = 0; i < ua.size(); ++i) sq += (ua[i] - ub[i]) * (ua[i] - ub[i]);
    total += std::sqrt(sq) / radius;
  }
  return total / static_cast<double>(probes);
}

std::string config_hash(const arm::ArmConfig& c) {
  json doc = {{"joints", c.joint_count}, {"links", c.link_lengths}, {"vmax", c.velocity_limit},
              {"dt", c.dt},             {"T", c.horizon},           {"release", c.release_step}};
  json limits = json::array();
  for (const auto& l : c.joint_limits) limits.push_back({l.lower, l.upper});
  doc["limits"] = limits;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(doc.dump())));
  return buf;
}

TrajectoryCorpus generate_corpus(arm::Task task, std::size_t count, std::uint64_t seed, const arm::ArmConfig& config) {
  config.validate();
  TrajectoryCorpus corpus{task, seed, config_hash(config), {}};
  corpus.trajectories.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng = make_rng(seed, "blind-policy", i);
    corpus.trajectories.push_back(arm::blind_policy_sample(task, rng, config));
  }
  return corpus;
}

void save_corpus(const TrajectoryCorpus& corpus, const std::filesystem::path& path) {
  json trajs = json::array();
  for (const auto& u : corpus.trajectories) trajs.push_back(u.flat());
  const std::size_t steps = corpus.trajectories.empty() ? 0 : corpus.trajectories.front().steps();
  const std::size_t joints = corpus.trajectories.empty() ? 0 : corpus.trajectories.front().joints();
  json doc = {{"format", "dppt.trajectories"},
              {"version", 1},
              {"task", arm::to_string(corpus.task)},
              {"seed", corpus.seed},
              {"config_hash", corpus.config_hash},
              {"steps", steps},
              {"joints", joints},
              {"trajectories", std::move(trajs)}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump();
}

TrajectoryCorpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const json doc = json::parse(in);
  if (doc.value("format", "") != "dppt.trajectories") throw FormatError(path.string() + " is not a trajectory corpus");
  TrajectoryCorpus corpus;
  corpus.task = arm::task_from_string(doc.at("task").get<std::string>());
  corpus.seed = doc.at("seed").get<std::uint64_t>();
  corpus.config_hash = doc.value("config_hash", "");
  const std::size_t steps = doc.at("steps").get<std::size_t>(), joints = doc.at("joints").get<std::size_t>();
  for (const json& t : doc.at("trajectories")) {
    corpus.trajectories.emplace_back(steps, joints, t.get<std::vector<double>>());
  }
  return corpus;
}

}  // namespace dppt::behavior

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dppt/behavior.hpp"
#include "dppt/experiment.hpp"
#include "dppt/perception.hpp"

namespace py = pybind11;
using namespace dppt;
using nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::span<const double>(a.data(), static_cast<std::size_t>(a.size())));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

arm::Task task_of(const std::string& name) { return arm::task_from_string(name); }

std::string run(const std::string& config_json) {
  const auto cfg = experiments::config_from_json(json::parse(config_json));
  const auto models = experiments::load_models(cfg);
  const auto res = experiments::run_experiment(cfg, models);
  json curve = json::array();
  for (const auto& s : res.curve) {
    curve.push_back({{"iteration", s.iteration},
                     {"mean_reward", s.mean_reward},
                     {"std_reward", s.std_reward},
                     {"valid_episodes", s.valid_episodes},
                     {"invalid_episodes", s.invalid_episodes}});
  }
  return json{{"curve", curve},
              {"total_episodes", res.total_episodes},
              {"invalid_episodes", res.invalid_episodes},
              {"policy", res.policy.flat()}}
      .dump();
}

std::string evaluate(const std::string& config_json, const std::string& policy_path) {
  const auto cfg = experiments::config_from_json(json::parse(config_json));
  const auto models = experiments::load_models(cfg);
  const auto params = policy::PolicyParams::from_checkpoint(Checkpoint::load(policy_path));
  return experiments::evaluate_policy(params, cfg, models).to_json().dump();
}

}  // namespace

PYBIND11_MODULE(_dppt, m) {
  m.doc() = "Predictive policy training on a simulated planar arm";

  m.def("forward_kinematics", [](const std::vector<double>& angles) {
    arm::ArmConfig cfg = arm::ArmConfig::with_joints(angles.size());
    const arm::Vec2 p = arm::forward_kinematics(angles, cfg);
    return std::pair{p.x, p.y};
  }, py::arg("angles"));

  m.def("rollout", [](const std::string& task, const std::vector<std::vector<double>>& velocities) {
    const arm::ArmConfig cfg;
    std::vector<double> flat;
    for (const auto& row : velocities) {
      if (row.size() != cfg.joint_count) throw std::invalid_argument("each velocity row needs one entry per joint");
      flat.insert(flat.end(), row.begin(), row.end());
    }
    const arm::MotorTrajectory u(velocities.size(), cfg.joint_count, flat);
    return arm::to_json(arm::rollout(arm::initial_state(task_of(task), cfg), u, cfg)).dump();
  }, py::arg("task"), py::arg("velocities"));

  m.def("reach_reward", [](std::pair<double, double> p, std::pair<double, double> target) {
    return rewards::reach_reward_continuous({p.first, p.second}, {target.first, target.second});
  }, py::arg("p"), py::arg("target"));
  m.def("discretize_reward", [](double r) { return rewards::discretize_reward(r); }, py::arg("r"));
  m.def("throw_reward", [](double landing_x, double target_x) {
    const auto v = rewards::throw_reward(landing_x, target_x);
    return std::pair{v.value, v.tag};
  }, py::arg("landing_x"), py::arg("target_x"));

  m.def("kl_divergence", [](const std::vector<double>& mu, const std::vector<double>& sigma) {
    if (mu.size() != sigma.size()) throw std::invalid_argument("mu and sigma differ in length");
    behavior::GaussianLatent q{Tensor({mu.size()}, std::span<const double>(mu)),
                               Tensor({sigma.size()}, std::span<const double>(sigma))};
    return behavior::kl_loss(q);
  }, py::arg("mu"), py::arg("sigma"));

  m.def("spatial_softmax", [](const Array& maps, double alpha) {
    return to_array(perception::spatial_softmax(to_tensor(maps), alpha));
  }, py::arg("maps"), py::arg("alpha"));
  m.def("feature_points", [](const Array& probs) {
    const Tensor pts = perception::feature_points(to_tensor(probs));
    return to_array(pts.reshaped({pts.size() / 2, 2}));
  }, py::arg("probs"));

  m.def("generate_corpus", [](const std::string& task, std::size_t count, std::uint64_t seed, const std::string& path) {
    behavior::save_corpus(behavior::generate_corpus(task_of(task), count, seed, arm::ArmConfig{}), path);
  }, py::arg("task"), py::arg("count"), py::arg("seed"), py::arg("path"));

  m.def("train_behavior", [](const std::string& corpus_path, const std::string& out, std::size_t steps,
                             std::uint64_t seed) {
    const auto corpus = behavior::load_corpus(corpus_path);
    behavior::BehaviorModel model(behavior::BehaviorConfig::desk());
    Rng init = make_rng(seed, "behavior-init");
    model.initialize(init);
    behavior::TrainConfig cfg;
    cfg.steps = steps;
    Rng train = make_rng(seed, "behavior-train");
    py::gil_scoped_release release;
    const auto res = behavior::train_behavior(model, corpus.trajectories, cfg, train);
    model.to_checkpoint().save(out);
    return std::pair{res.holdout_rmse, res.corpus_std};
  }, py::arg("corpus"), py::arg("out"), py::arg("steps") = 6000, py::arg("seed") = 0);

  m.def("run_experiment", [](const std::string& config_json) {
    py::gil_scoped_release release;
    return run(config_json);
  }, py::arg("config_json"));
  m.def("evaluate_policy", [](const std::string& config_json, const std::string& policy_path) {
    py::gil_scoped_release release;
    return evaluate(config_json, policy_path);
  }, py::arg("config_json"), py::arg("policy_path"));
}

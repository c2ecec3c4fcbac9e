#include "logo/config.hpp"
#include "logo/dataset.hpp"
#include "logo/envs.hpp"
#include "logo/harness.hpp"
#include "logo/policy.hpp"
#include "logo/stats.hpp"
#include "logo/verify.hpp"
#include "logo/world_model.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace logo;

namespace {

// Stacks one field of every transition into a (rows x cols) array.
template <class F>
Eigen::MatrixXf stack(const Dataset& d, int cols, F field) {
  Eigen::MatrixXf m(static_cast<Eigen::Index>(d.size()), cols);
  for (std::size_t r = 0; r < d.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = field(d.transitions[r]).transpose();
  return m;
}

Eigen::VectorXf concat(const std::vector<Eigen::VectorXf>& parts) {
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::VectorXf out(n);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.segment(at, p.size()) = p;
    at += p.size();
  }
  return out;
}

py::dict dataset_arrays(const Dataset& d) {
  const EnvSpec& s = d.spec;
  py::dict out;
  out["state"] = stack(d, s.state_dim(), [](const Transition& t) { return t.state; });
  out["next_state"] = stack(d, s.state_dim(), [](const Transition& t) { return t.next_state; });
  out["obs"] = stack(d, s.joint_obs_dim(), [](const Transition& t) { return concat(t.obs); });
  out["next_obs"] = stack(d, s.joint_obs_dim(), [](const Transition& t) { return concat(t.next_obs); });
  out["actions"] = stack(d, s.joint_action_dim(), [](const Transition& t) { return concat(t.actions); });
  Eigen::VectorXf reward(static_cast<Eigen::Index>(d.size()));
  Eigen::VectorXi done(reward.size()), episode(reward.size());
  for (std::size_t r = 0; r < d.size(); ++r) {
    const auto k = static_cast<Eigen::Index>(r);
    reward(k) = d.transitions[r].reward;
    done(k) = d.transitions[r].done;
    episode(k) = d.transitions[r].episode;
  }
  out["reward"] = reward;
  out["done"] = done;
  out["episode"] = episode;
  return out;
}

std::vector<ad::Matrix<float>> split_cols(const Eigen::MatrixXf& m, int parts) {
  if (parts <= 0 || m.cols() % parts != 0) throw std::invalid_argument("column count does not split evenly across agents");
  const Eigen::Index w = m.cols() / parts;
  std::vector<ad::Matrix<float>> out;
  for (int i = 0; i < parts; ++i) out.emplace_back(m.middleCols(i * w, w));
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Local-to-global world models for offline multi-agent RL";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MissingArtifactError>(m, "MissingArtifactError", PyExc_FileNotFoundError);
  py::register_exception<EnvMismatchError>(m, "EnvMismatchError", PyExc_ValueError);

  py::class_<EnvSpec>(m, "EnvSpec")
      .def(py::init<>())
      .def_readwrite("n_agents", &EnvSpec::n_agents)
      .def_readwrite("episode_cap", &EnvSpec::episode_cap)
      .def_readwrite("gamma", &EnvSpec::gamma)
      .def_readwrite("sensing_radius", &EnvSpec::sensing_radius)
      .def_property_readonly("state_dim", &EnvSpec::state_dim)
      .def_property_readonly("obs_dim", &EnvSpec::obs_dim)
      .def_property_readonly("action_dim", &EnvSpec::action_dim);

  py::class_<EnvState>(m, "EnvState").def_readonly("s", &EnvState::s).def_readonly("step", &EnvState::step);
  py::class_<StepResult>(m, "StepResult")
      .def_readonly("state", &StepResult::state)
      .def_readonly("obs", &StepResult::obs)
      .def_readonly("reward", &StepResult::reward)
      .def_readonly("done", &StepResult::done)
      .def_readonly("clipped", &StepResult::clipped);

  py::class_<ParticleEnv>(m, "ParticleEnv")
      .def(py::init<EnvSpec>(), py::arg("spec") = EnvSpec{})
      .def("reset", &ParticleEnv::reset, py::arg("seed"))
      .def("step", &ParticleEnv::step, py::arg("state"), py::arg("actions"))
      .def("reward", &ParticleEnv::reward, py::arg("s"));

  py::class_<Dataset>(m, "Dataset")
      .def("__len__", &Dataset::size)
      .def_readonly("spec", &Dataset::spec)
      .def("episode_returns", &Dataset::episode_returns)
      .def("arrays", &dataset_arrays, "Every field stacked into numpy arrays, one row per transition.");

  m.def(
      "collect",
      [](const std::string& tier, int episodes, std::uint64_t seed, const EnvSpec& spec) {
        return collect(spec, BehaviorSpec{provenance_from_string(tier)}, episodes, seed);
      },
      py::arg("tier"), py::arg("episodes"), py::arg("seed"), py::arg("spec") = EnvSpec{});
  m.def("save_dataset", &save_dataset, py::arg("dataset"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));
  m.def("split", &split, py::arg("dataset"), py::arg("val_fraction"), py::arg("seed"));

  py::class_<WorldModelConfig>(m, "WorldModelConfig")
      .def(py::init<>())
      .def_readwrite("hidden", &WorldModelConfig::hidden)
      .def_readwrite("steps", &WorldModelConfig::steps)
      .def_readwrite("learning_rate", &WorldModelConfig::learning_rate)
      .def_readwrite("batch_size", &WorldModelConfig::batch_size)
      .def_readwrite("validate_every", &WorldModelConfig::validate_every)
      .def_readwrite("seed", &WorldModelConfig::seed);

  py::class_<WorldModel>(m, "WorldModel")
      .def_static("load", &WorldModel::load, py::arg("path"))
      .def("save", &WorldModel::save, py::arg("path"))
      .def(
          "predict",
          [](const WorldModel& model, const Eigen::MatrixXf& obs, const Eigen::MatrixXf& actions,
             const Eigen::MatrixXf& state) {
            const int n = model.spec().n_agents;
            const Prediction p = predict_next(model, ModelInput{split_cols(obs, n), split_cols(actions, n), state});
            py::dict out;
            out["next_state"] = Eigen::MatrixXf(p.next_state);
            out["reward"] = Eigen::MatrixXf(p.reward);
            out["aux_state"] = Eigen::MatrixXf(p.aux_state);
            out["uncertainty"] = Eigen::VectorXf(p.uncertainty);
            return out;
          },
          py::arg("obs"), py::arg("actions"), py::arg("state"),
          "Joint obs (rows x n*obs_dim), joint actions (rows x n*action_dim) and states.");

  py::class_<WorldModelTrainResult>(m, "WorldModelTrainResult")
      .def_readonly("model", &WorldModelTrainResult::model)
      .def_readonly("clip_constant", &WorldModelTrainResult::clip_constant);
  m.def("train_world_model", &train_world_model, py::arg("train"), py::arg("val"), py::arg("config"));
  m.def("one_step_state_mse", &one_step_state_mse, py::arg("model"), py::arg("data"));

  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) { return stats::spearman(x, y); });
  m.def("ci95", [](const std::vector<double>& x) { return stats::ci95(x); });

  m.def(
      "run_command",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = run_command(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a CLI command; returns (exit_code, stdout, stderr).");

  py::class_<CheckLine>(m, "CheckLine")
      .def_readonly("name", &CheckLine::name)
      .def_readonly("passed", &CheckLine::pass)
      .def_readonly("detail", &CheckLine::detail)
      .def("__repr__", &format_check);
  m.def("verify_theorem1", &verify_theorem1, py::arg("seed"), py::arg("trials") = 1000);
}

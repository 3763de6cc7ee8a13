#include "ocgvf/env/python_envs.hpp"

#include <string>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/env/preprocess.hpp"

#if OCGVF_HAVE_PYTHON
#include <pybind11/embed.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

namespace py = pybind11;
#endif

namespace ocgvf::env {

namespace {

std::string package_for(const std::string& env_id) {
  if (env_id == "minigrid_dynamic_obstacles") return "minigrid";
  return "procgen";
}

[[maybe_unused]] DependencyError missing(const std::string& env_id,
                                         const std::string& detail) {
  const std::string pkg = package_for(env_id);
  return DependencyError("environment '" + env_id +
                         "' needs the Python package '" + pkg +
                         "' (pip install " + pkg + "): " + detail);
}

}  // namespace

#if OCGVF_HAVE_PYTHON

namespace {

void ensure_interpreter() {
  static py::scoped_interpreter* interp = nullptr;
  if (!interp && !Py_IsInitialized()) {
    interp = new py::scoped_interpreter();  // lives for the whole process
  }
}

Image image_from_array(py::array arr, int target) {
  auto a = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>(
      std::move(arr));
  if (a.ndim() != 3 || a.shape(2) != 3) {
    throw ShapeError("python env returned a non-HxWx3 frame");
  }
  Image raw;
  raw.h = static_cast<int>(a.shape(0));
  raw.w = static_cast<int>(a.shape(1));
  raw.rgb.assign(a.data(), a.data() + a.size());
  return preprocess(raw, target, target);
}

class PythonEnv final : public Env, public LevelScheduled {
 public:
  explicit PythonEnv(EnvSpec spec) : spec_(std::move(spec)) {
    ensure_interpreter();
    if (!spec_.level_sequence.empty()) {
      schedule_ = LevelSchedule::sequence(spec_.level_sequence,
                                          spec_.level_switch_episodes);
    } else if (spec_.num_levels > 0) {
      schedule_ = LevelSchedule::sampler(spec_.num_levels);
    } else {
      schedule_ = LevelSchedule::fixed(std::max(spec_.fixed_level, 0));
    }
    try {
      if (is_procgen()) {
        gym_ = py::module_::import("gym");
        py::module_::import("procgen");
      } else {
        gym_ = py::module_::import("gymnasium");
        py::module_::import("minigrid");
        rebuild_minigrid();
      }
    } catch (py::error_already_set& e) {
      throw missing(spec_.env_id, e.what());
    }
  }

  std::string id() const override { return spec_.env_id; }
  int obs_height() const override { return spec_.resolution; }
  int obs_width() const override { return spec_.resolution; }

  int num_actions() const override {
    if (!env_) {
      // Procgen environments are built lazily on first reset; the whole
      // family exposes 15 discrete actions.
      return is_procgen() ? 15 : actions_;
    }
    return actions_;
  }

  Image reset(uint64_t seed) override {
    core::Rng rng(seed);
    const int level = schedule_.level_for_episode(episode_, rng);
    ++episode_;
    try {
      if (is_procgen()) {
        if (!env_ || level != current_level_) rebuild_procgen(level);
        py::object out = env_.attr("reset")();
        return to_image(out);
      }
      py::object out =
          env_.attr("reset")(py::arg("seed") = static_cast<int64_t>(seed));
      (void)out;
      return image_from_array(env_.attr("render")(), spec_.resolution);
    } catch (py::error_already_set& e) {
      throw std::runtime_error(std::string("python env reset failed: ") +
                               e.what());
    }
  }

  StepOut step(int action) override {
    try {
      py::tuple out = env_.attr("step")(action);
      StepOut r;
      if (out.size() == 5) {
        r.reward = out[1].cast<double>();
        r.done = out[2].cast<bool>() || out[3].cast<bool>();
        r.obs = is_procgen()
                    ? image_from_array(out[0].cast<py::array>(), spec_.resolution)
                    : image_from_array(env_.attr("render")(), spec_.resolution);
      } else {
        r.obs = image_from_array(out[0].cast<py::array>(), spec_.resolution);
        r.reward = out[1].cast<double>();
        r.done = out[2].cast<bool>();
      }
      return r;
    } catch (py::error_already_set& e) {
      throw std::runtime_error(std::string("python env step failed: ") +
                               e.what());
    }
  }

  void set_level_sequence(const std::vector<int>& levels,
                          const std::vector<int>& switch_episodes) override {
    schedule_ = LevelSchedule::sequence(levels, switch_episodes);
    episode_ = 0;
  }

  int current_level() const override { return current_level_; }

 private:
  bool is_procgen() const { return spec_.env_id != "minigrid_dynamic_obstacles"; }

  Image to_image(py::object obs) {
    return image_from_array(obs.cast<py::array>(), spec_.resolution);
  }

  void rebuild_procgen(int level) {
    env_ = gym_.attr("make")(
        "procgen:procgen-" + spec_.env_id + "-v0",
        py::arg("start_level") = level, py::arg("num_levels") = 1,
        py::arg("distribution_mode") = spec_.distribution);
    actions_ = env_.attr("action_space").attr("n").cast<int>();
    current_level_ = level;
  }

  void rebuild_minigrid() {
    env_ = gym_.attr("make")("MiniGrid-Dynamic-Obstacles-8x8-v0",
                             py::arg("render_mode") = "rgb_array");
    actions_ = env_.attr("action_space").attr("n").cast<int>();
  }

  EnvSpec spec_;
  LevelSchedule schedule_ = LevelSchedule::fixed(0);
  py::object gym_, env_;
  int actions_ = 0;
  int current_level_ = -1;
  int64_t episode_ = 0;
};

}  // namespace

std::unique_ptr<Env> make_python_env(const EnvSpec& spec) {
  return std::make_unique<PythonEnv>(spec);
}

#else  // !OCGVF_HAVE_PYTHON

std::unique_ptr<Env> make_python_env(const EnvSpec& spec) {
  throw missing(spec.env_id, "built without an embedded Python interpreter");
}

#endif

}  // namespace ocgvf::env

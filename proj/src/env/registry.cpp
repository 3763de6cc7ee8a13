#include "ocgvf/env/registry.hpp"

#include <algorithm>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/env/collect_objects.hpp"
#include "ocgvf/env/python_envs.hpp"

namespace ocgvf::env {

LevelSchedule LevelSchedule::fixed(int level) {
  if (level < 0) throw ConfigError("fixed level must be non-negative");
  LevelSchedule s;
  s.levels_ = {level};
  return s;
}

LevelSchedule LevelSchedule::sampler(int num_levels) {
  if (num_levels <= 0) throw ConfigError("sampler needs a positive level count");
  LevelSchedule s;
  s.num_levels_ = num_levels;
  return s;
}

LevelSchedule LevelSchedule::sequence(std::vector<int> levels,
                                      std::vector<int> switch_episodes) {
  if (levels.empty()) throw ConfigError("level sequence must not be empty");
  if (switch_episodes.size() != levels.size() - 1) {
    throw ConfigError("level sequence needs one switch episode per transition");
  }
  if (!std::is_sorted(switch_episodes.begin(), switch_episodes.end())) {
    throw ConfigError("level switch episodes must be sorted");
  }
  LevelSchedule s;
  s.levels_ = std::move(levels);
  s.switch_episodes_ = std::move(switch_episodes);
  return s;
}

int LevelSchedule::level_for_episode(int64_t episode, core::Rng& rng) const {
  if (num_levels_ > 0) {
    return static_cast<int>(rng.uniform_int(num_levels_));
  }
  size_t idx = 0;
  while (idx < switch_episodes_.size() && episode >= switch_episodes_[idx]) {
    ++idx;
  }
  return levels_[idx];
}

std::vector<std::string> known_env_ids() {
  return {"collect_objects", "minigrid_dynamic_obstacles", "coinrun",
          "starpilot"};
}

std::unique_ptr<Env> make_env(const EnvSpec& spec) {
  if (spec.env_id == "collect_objects") {
    CollectObjectsOptions opts;
    opts.mode = parse_mode(spec.mode);
    opts.max_steps = spec.max_steps;
    opts.resolution = spec.resolution;
    opts.respawn_period = spec.respawn_period;
    opts.include_green = spec.include_green;
    return std::make_unique<CollectObjectsEnv>(opts);
  }
  const auto known = known_env_ids();
  if (std::find(known.begin(), known.end(), spec.env_id) == known.end()) {
    throw ConfigError("unknown env_id: " + spec.env_id);
  }
  if (spec.resolution != 32 && spec.resolution != 64) {
    throw ConfigError("external environments support resolution 32 or 64");
  }
  return make_python_env(spec);
}

}  // namespace ocgvf::env

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocgvf/core/rng.hpp"
#include "ocgvf/env/env.hpp"

namespace ocgvf::env {

// Which level an episode plays, for procedurally generated environments.
class LevelSchedule {
 public:
  static LevelSchedule fixed(int level);
  static LevelSchedule sampler(int num_levels);  // uniform over [0, n)
  static LevelSchedule sequence(std::vector<int> levels,
                                std::vector<int> switch_episodes);

  // Stateless lookup: episodes past the last switch stay on the last level.
  int level_for_episode(int64_t episode, core::Rng& rng) const;
  bool is_sampler() const { return num_levels_ > 0; }

 private:
  LevelSchedule() = default;
  int num_levels_ = 0;
  std::vector<int> levels_;
  std::vector<int> switch_episodes_;
};

struct EnvSpec {
  std::string env_id = "collect_objects";
  int resolution = 32;
  // collect_objects
  std::string mode = "stationary";
  int max_steps = 100;
  int respawn_period = 1;
  bool include_green = true;
  // external environments
  int fixed_level = -1;
  int num_levels = 0;
  std::vector<int> level_sequence;
  std::vector<int> level_switch_episodes;
  std::string distribution = "easy";
};

// Implemented by environments with procedural level control.
class LevelScheduled {
 public:
  virtual ~LevelScheduled() = default;
  virtual void set_level_sequence(const std::vector<int>& levels,
                                  const std::vector<int>& switch_episodes) = 0;
  virtual int current_level() const = 0;
};

std::unique_ptr<Env> make_env(const EnvSpec& spec);

// Known env_id values (documented in README).
std::vector<std::string> known_env_ids();

}  // namespace ocgvf::env

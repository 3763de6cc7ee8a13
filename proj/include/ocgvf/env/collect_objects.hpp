#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "ocgvf/core/rng.hpp"
#include "ocgvf/env/env.hpp"

namespace ocgvf::env {

// Four connected rooms on an 11x11 grid, one doorway per adjacent room pair.
// The agent collects colored blocks: red pays +5, blue pays +10 but only
// after red, green pays nothing. Blue collected after red ends the episode.

enum class ObjColor { red, blue, green };

struct Cell {
  int row = -1, col = -1;
  bool operator==(const Cell&) const = default;
};

struct ObjectSpec {
  ObjColor color = ObjColor::red;
  Cell cell;  // row < 0 means "place randomly at reset"
};

struct TaskSpec {
  std::vector<ObjectSpec> add;
  std::vector<ObjColor> remove;
  std::optional<int> respawn_period;
};

struct GridLayout {
  static constexpr int kSize = 11;
  bool wall(int row, int col) const;
  int room(int row, int col) const;      // 0..3, -1 for walls and doorways
  int corridor(int row, int col) const;  // 0..3, -1 otherwise
  std::array<Cell, 4> corridor_cells() const;
  std::vector<Cell> room_cells(int room_id) const;
  std::vector<Cell> free_cells() const;  // all non-wall cells
  Cell start_cell() const { return {9, 1}; }
};

enum class Mode { stationary, nonstationary, transfer };
Mode parse_mode(const std::string& s);

struct CollectObjectsOptions {
  Mode mode = Mode::stationary;
  int max_steps = 100;
  int resolution = 32;
  int respawn_period = 1;
  bool include_green = true;
  std::vector<ObjectSpec> objects;  // empty: default red/blue/green layout
};

std::vector<ObjectSpec> default_objects(bool include_green);

class CollectObjectsEnv final : public Env {
 public:
  explicit CollectObjectsEnv(CollectObjectsOptions opts = {});

  std::string id() const override { return "collect_objects"; }
  int obs_height() const override { return opts_.resolution; }
  int obs_width() const override { return opts_.resolution; }
  int num_actions() const override { return 4; }

  Image reset(uint64_t seed) override { return reset(seed, opts_.mode); }
  Image reset(uint64_t seed, Mode mode);
  StepOut step(int action) override;
  const StepInfo* last_info() const override { return &info_; }

  void set_task(const TaskSpec& task);

  // Pure rendering for synthetic states (value heatmaps). Does not touch
  // episode state. Throws if agent_cell is a wall.
  Image render_at(Cell agent_cell, const std::vector<ObjectSpec>& objects) const;
  Image render_at(Cell agent_cell) const;  // current uncollected objects

  const GridLayout& layout() const { return layout_; }
  const CollectObjectsOptions& options() const { return opts_; }
  bool red_collected() const { return red_collected_; }
  Cell agent_cell() const { return agent_; }
  // Uncollected objects as specs (positions resolved).
  std::vector<ObjectSpec> live_objects() const;

 private:
  struct Obj {
    ObjColor color;
    Cell cell;
    int home_room;  // -1: anywhere
    bool collected = false;
    bool random_placed;
  };

  void validate_spec_cell(const ObjectSpec& s) const;
  void place_objects(core::Rng& rng, bool resample_random);
  Image render_state() const;

  CollectObjectsOptions opts_;
  GridLayout layout_;
  std::vector<ObjectSpec> task_objects_;
  std::vector<Obj> objects_;
  Cell agent_;
  int step_count_ = 0;
  bool done_ = true;
  bool red_collected_ = false;
  int64_t episode_index_ = 0;  // completed resets
  StepInfo info_;
  std::vector<Cell> nonstat_positions_;  // persisted between respawns
};

}  // namespace ocgvf::env

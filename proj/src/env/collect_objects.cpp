#include "ocgvf/env/collect_objects.hpp"

#include <algorithm>
#include <stdexcept>

#include "ocgvf/core/errors.hpp"

namespace ocgvf::env {

namespace {

constexpr int kN = GridLayout::kSize;

constexpr std::array<Cell, 4> kCorridors = {
    Cell{2, 5}, Cell{8, 5}, Cell{5, 2}, Cell{5, 8}};

struct Palette {
  static constexpr std::array<uint8_t, 3> background = {64, 64, 64};
  static constexpr std::array<uint8_t, 3> wall = {0, 0, 0};
  static constexpr std::array<uint8_t, 3> agent = {255, 255, 255};
  static constexpr std::array<uint8_t, 3> red = {255, 0, 0};
  static constexpr std::array<uint8_t, 3> blue = {0, 0, 255};
  static constexpr std::array<uint8_t, 3> green = {0, 255, 0};
};

std::array<uint8_t, 3> color_of(ObjColor c) {
  switch (c) {
    case ObjColor::red: return Palette::red;
    case ObjColor::blue: return Palette::blue;
    case ObjColor::green: return Palette::green;
  }
  return Palette::background;
}

}  // namespace

bool GridLayout::wall(int row, int col) const {
  if (row < 0 || row >= kN || col < 0 || col >= kN) return true;
  if (row == 0 || row == kN - 1 || col == 0 || col == kN - 1) return true;
  if (corridor(row, col) >= 0) return false;
  if (col == 5) return true;
  if (row == 5) return true;
  return false;
}

int GridLayout::corridor(int row, int col) const {
  for (size_t i = 0; i < kCorridors.size(); ++i) {
    if (kCorridors[i] == Cell{row, col}) return static_cast<int>(i);
  }
  return -1;
}

int GridLayout::room(int row, int col) const {
  if (wall(row, col) || corridor(row, col) >= 0) return -1;
  const int top = row < 5 ? 0 : 2;
  return top + (col < 5 ? 0 : 1);
}

std::array<Cell, 4> GridLayout::corridor_cells() const { return kCorridors; }

std::vector<Cell> GridLayout::room_cells(int room_id) const {
  std::vector<Cell> out;
  for (int r = 0; r < kN; ++r) {
    for (int c = 0; c < kN; ++c) {
      if (room(r, c) == room_id) out.push_back({r, c});
    }
  }
  return out;
}

std::vector<Cell> GridLayout::free_cells() const {
  std::vector<Cell> out;
  for (int r = 0; r < kN; ++r) {
    for (int c = 0; c < kN; ++c) {
      if (!wall(r, c)) out.push_back({r, c});
    }
  }
  return out;
}

Mode parse_mode(const std::string& s) {
  if (s == "stationary") return Mode::stationary;
  if (s == "nonstationary") return Mode::nonstationary;
  if (s == "transfer") return Mode::transfer;
  throw ConfigError("unknown environment mode: " + s);
}

std::vector<ObjectSpec> default_objects(bool include_green) {
  std::vector<ObjectSpec> out = {{ObjColor::red, {2, 2}},
                                 {ObjColor::blue, {2, 8}}};
  if (include_green) out.push_back({ObjColor::green, {7, 7}});
  return out;
}

CollectObjectsEnv::CollectObjectsEnv(CollectObjectsOptions opts)
    : opts_(std::move(opts)) {
  if (opts_.resolution < kN) {
    throw ConfigError("resolution must be at least the grid size");
  }
  if (opts_.max_steps <= 0) throw ConfigError("max_steps must be positive");
  if (opts_.respawn_period <= 0) {
    throw ConfigError("respawn_period must be positive");
  }
  task_objects_ = opts_.objects.empty() ? default_objects(opts_.include_green)
                                        : opts_.objects;
  for (const auto& s : task_objects_) validate_spec_cell(s);
}

void CollectObjectsEnv::validate_spec_cell(const ObjectSpec& s) const {
  if (s.cell.row < 0) return;  // random placement
  if (layout_.room(s.cell.row, s.cell.col) < 0) {
    throw ConfigError("object cell (" + std::to_string(s.cell.row) + "," +
                      std::to_string(s.cell.col) +
                      ") must be a room cell off walls and doorways");
  }
}

void CollectObjectsEnv::set_task(const TaskSpec& task) {
  for (ObjColor c : task.remove) {
    std::erase_if(task_objects_,
                  [c](const ObjectSpec& s) { return s.color == c; });
  }
  for (const auto& s : task.add) {
    validate_spec_cell(s);
    task_objects_.push_back(s);
  }
  if (task.respawn_period) {
    if (*task.respawn_period <= 0) {
      throw ConfigError("respawn_period must be positive");
    }
    opts_.respawn_period = *task.respawn_period;
  }
  nonstat_positions_.clear();
}

void CollectObjectsEnv::place_objects(core::Rng& rng, bool resample_random) {
  objects_.clear();
  std::vector<Cell> taken;
  taken.push_back(layout_.start_cell());
  auto is_taken = [&](const Cell& c) {
    return std::find(taken.begin(), taken.end(), c) != taken.end();
  };
  auto sample_from = [&](const std::vector<Cell>& pool) {
    std::vector<Cell> open;
    for (const Cell& c : pool) {
      if (!is_taken(c)) open.push_back(c);
    }
    if (open.empty()) throw ConfigError("no free cell left for object");
    return open[rng.uniform_int(static_cast<int64_t>(open.size()))];
  };

  const bool nonstat = opts_.mode == Mode::nonstationary;
  const bool reuse = nonstat && !resample_random &&
                     nonstat_positions_.size() == task_objects_.size();

  std::vector<Cell> placed;
  for (size_t i = 0; i < task_objects_.size(); ++i) {
    const ObjectSpec& s = task_objects_[i];
    Obj o;
    o.color = s.color;
    o.random_placed = s.cell.row < 0;
    o.home_room = o.random_placed ? -1 : layout_.room(s.cell.row, s.cell.col);
    if (reuse) {
      o.cell = nonstat_positions_[i];
    } else if (nonstat || o.random_placed) {
      std::vector<Cell> pool;
      if (o.home_room >= 0) {
        pool = layout_.room_cells(o.home_room);
      } else {
        for (int r = 0; r < 4; ++r) {
          auto cells = layout_.room_cells(r);
          pool.insert(pool.end(), cells.begin(), cells.end());
        }
      }
      o.cell = sample_from(pool);
    } else {
      o.cell = s.cell;
      if (is_taken(o.cell)) throw ConfigError("objects must occupy distinct cells");
    }
    taken.push_back(o.cell);
    placed.push_back(o.cell);
    objects_.push_back(o);
  }
  if (nonstat) nonstat_positions_ = placed;
}

Image CollectObjectsEnv::reset(uint64_t seed, Mode mode) {
  opts_.mode = mode;
  core::Rng rng(seed);
  const bool resample =
      (episode_index_ % opts_.respawn_period) == 0 ||
      nonstat_positions_.size() != task_objects_.size();
  ++episode_index_;
  place_objects(rng, resample);
  agent_ = layout_.start_cell();
  step_count_ = 0;
  done_ = false;
  red_collected_ = false;
  info_ = {};
  info_.corridor = layout_.corridor(agent_.row, agent_.col);
  return render_state();
}

StepOut CollectObjectsEnv::step(int action) {
  if (done_) throw std::logic_error("step called after episode end");
  if (action < 0 || action >= 4) {
    throw std::invalid_argument("action must be in [0,4)");
  }
  static constexpr int kDr[4] = {-1, 1, 0, 0};
  static constexpr int kDc[4] = {0, 0, -1, 1};
  const Cell target{agent_.row + kDr[action], agent_.col + kDc[action]};
  if (!layout_.wall(target.row, target.col)) agent_ = target;

  info_ = {};
  double reward = 0.0;
  for (auto& o : objects_) {
    if (o.collected || !(o.cell == agent_)) continue;
    switch (o.color) {
      case ObjColor::red:
        reward += 5.0;
        red_collected_ = true;
        info_.red_pickup = true;
        o.collected = true;
        break;
      case ObjColor::blue:
        if (red_collected_) {
          reward += 10.0;
          done_ = true;
        }
        o.collected = true;
        break;
      case ObjColor::green:
        o.collected = true;
        break;
    }
  }
  ++step_count_;
  if (step_count_ >= opts_.max_steps) done_ = true;
  info_.corridor = layout_.corridor(agent_.row, agent_.col);
  return {render_state(), reward, done_};
}

std::vector<ObjectSpec> CollectObjectsEnv::live_objects() const {
  std::vector<ObjectSpec> out;
  for (const auto& o : objects_) {
    if (!o.collected) out.push_back({o.color, o.cell});
  }
  return out;
}

Image CollectObjectsEnv::render_at(Cell agent_cell,
                                   const std::vector<ObjectSpec>& objects) const {
  if (layout_.wall(agent_cell.row, agent_cell.col)) {
    throw ConfigError("render_at: agent cell is a wall");
  }
  const int res = opts_.resolution;
  Image img;
  img.h = img.w = res;
  img.rgb.resize(static_cast<size_t>(res) * res * 3);
  for (int y = 0; y < res; ++y) {
    const int r = y * kN / res;
    for (int x = 0; x < res; ++x) {
      const int c = x * kN / res;
      std::array<uint8_t, 3> px = Palette::background;
      if (layout_.wall(r, c)) px = Palette::wall;
      for (const auto& o : objects) {
        if (o.cell == Cell{r, c}) px = color_of(o.color);
      }
      if (agent_cell == Cell{r, c}) px = Palette::agent;
      const size_t base = (static_cast<size_t>(y) * res + x) * 3;
      img.rgb[base] = px[0];
      img.rgb[base + 1] = px[1];
      img.rgb[base + 2] = px[2];
    }
  }
  return img;
}

Image CollectObjectsEnv::render_at(Cell agent_cell) const {
  return render_at(agent_cell, live_objects());
}

Image CollectObjectsEnv::render_state() const { return render_at(agent_); }

}  // namespace ocgvf::env

#pragma once

#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <vector>

#include "ocgvf/core/rng.hpp"
#include "ocgvf/env/env.hpp"

namespace ocgvf::replay {

// Frames are shared between neighbouring transitions (s_next of step t is s
// of step t+1), halving observation memory at full capacity.
using ObsPtr = std::shared_ptr<const env::Image>;

struct Transition {
  ObsPtr s;
  ObsPtr s_next;
  int action = 0;
  double reward = 0.0;
  bool done = false;
  int64_t episode_id = 0;
  int32_t step_index = 0;
  env::StepInfo info;  // side-channel facts, used by handcrafted cumulants
};

// Consecutive transitions from a single episode, oldest first.
struct UnrollSegment {
  std::vector<Transition> transitions;
};

// FIFO transition store with two sampling modes: i.i.d. minibatches for TD
// updates and contiguous segments for slot training and meta-updates.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int64_t capacity);

  // Evicts the oldest transition when full. Rejects out-of-order step
  // indices within an episode.
  void add(Transition t);

  int64_t size() const { return size_; }
  int64_t capacity() const { return capacity_; }

  // Uniform with replacement; nullopt when fewer than n transitions stored.
  std::optional<std::vector<Transition>> sample_batch(int64_t n,
                                                      core::Rng& rng) const;

  // Uniform over all valid start positions: d consecutive same-episode
  // transitions that do not cross a done boundary. nullopt when none exist.
  std::optional<UnrollSegment> sample_unroll(int64_t d, core::Rng& rng) const;

  // index 0 is the oldest stored transition.
  const Transition& at(int64_t index) const;

  // Round-trips contents and frame sharing; capacity must match on load.
  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  int64_t first_abs() const { return total_added_ - size_; }
  const Transition& slot(int64_t abs) const {
    return buf_[static_cast<size_t>(abs % capacity_)];
  }
  bool valid_start(int64_t abs_last, int64_t d) const;

  int64_t capacity_;
  int64_t size_ = 0;
  int64_t total_added_ = 0;
  std::vector<Transition> buf_;
  // Backward run length: how many consecutive-step same-episode transitions
  // end at this slot (counting itself). Written once at add time.
  std::vector<int32_t> run_;
};

}  // namespace ocgvf::replay

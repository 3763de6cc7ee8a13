#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ocgvf::env {

// Channels-last RGB frame. Values are exact uint8; the agent converts to
// reals in [0,1] by dividing by 255 at tensor assembly.
struct Image {
  int h = 0, w = 0;
  std::vector<uint8_t> rgb;  // h*w*3

  bool operator==(const Image&) const = default;
};

struct StepOut {
  Image obs;
  double reward = 0.0;
  bool done = false;
};

// Side-channel facts about the latest transition, used by the handcrafted
// cumulant source. Only environments that can know them provide this.
struct StepInfo {
  bool red_pickup = false;
  int corridor = -1;  // doorway cell index 0..3, -1 if not on one
};

class Env {
 public:
  virtual ~Env() = default;
  virtual std::string id() const = 0;
  virtual int obs_height() const = 0;
  virtual int obs_width() const = 0;
  virtual int num_actions() const = 0;
  virtual Image reset(uint64_t seed) = 0;
  virtual StepOut step(int action) = 0;
  virtual const StepInfo* last_info() const { return nullptr; }
};

}  // namespace ocgvf::env

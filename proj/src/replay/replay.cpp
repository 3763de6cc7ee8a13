#include "ocgvf/replay/replay.hpp"

#include <map>
#include <stdexcept>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::replay {

namespace {

bool contiguous(const Transition& prev, const Transition& cur) {
  return prev.episode_id == cur.episode_id &&
         cur.step_index == prev.step_index + 1 && !prev.done;
}

constexpr int kRejectionTries = 64;

}  // namespace

ReplayBuffer::ReplayBuffer(int64_t capacity) : capacity_(capacity) {
  if (capacity <= 0) throw ConfigError("replay capacity must be positive");
  buf_.resize(static_cast<size_t>(capacity));
  run_.resize(static_cast<size_t>(capacity), 0);
}

void ReplayBuffer::add(Transition t) {
  if (!t.s || !t.s_next) {
    throw std::invalid_argument("transition frames must be set");
  }
  int32_t run = 1;
  if (total_added_ > 0) {
    const Transition& prev = slot(total_added_ - 1);
    if (prev.episode_id == t.episode_id && t.step_index <= prev.step_index) {
      throw std::invalid_argument(
          "step_index must increase within an episode");
    }
    if (contiguous(prev, t)) {
      run = run_[static_cast<size_t>((total_added_ - 1) % capacity_)] + 1;
    }
  }
  const size_t pos = static_cast<size_t>(total_added_ % capacity_);
  buf_[pos] = std::move(t);
  run_[pos] = run;
  ++total_added_;
  if (size_ < capacity_) ++size_;
}

const Transition& ReplayBuffer::at(int64_t index) const {
  if (index < 0 || index >= size_) {
    throw std::out_of_range("replay index out of range");
  }
  return slot(first_abs() + index);
}

std::optional<std::vector<Transition>> ReplayBuffer::sample_batch(
    int64_t n, core::Rng& rng) const {
  if (n <= 0) throw std::invalid_argument("batch size must be positive");
  if (size_ < n) return std::nullopt;
  std::vector<Transition> out;
  out.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    out.push_back(slot(first_abs() + rng.uniform_int(size_)));
  }
  return out;
}

bool ReplayBuffer::valid_start(int64_t abs_last, int64_t d) const {
  return run_[static_cast<size_t>(abs_last % capacity_)] >= d;
}

std::optional<UnrollSegment> ReplayBuffer::sample_unroll(
    int64_t d, core::Rng& rng) const {
  if (d <= 0) throw std::invalid_argument("segment length must be positive");
  if (size_ < d) return std::nullopt;
  // abs_last ranges over possible segment end positions.
  const int64_t lo = first_abs() + d - 1;
  const int64_t hi = total_added_ - 1;
  int64_t chosen = -1;
  for (int t = 0; t < kRejectionTries; ++t) {
    const int64_t j = lo + rng.uniform_int(hi - lo + 1);
    if (valid_start(j, d)) {
      chosen = j;
      break;
    }
  }
  if (chosen < 0) {
    // Sparse or empty valid set: enumerate it exactly.
    std::vector<int64_t> valid;
    for (int64_t j = lo; j <= hi; ++j) {
      if (valid_start(j, d)) valid.push_back(j);
    }
    if (valid.empty()) return std::nullopt;
    chosen = valid[static_cast<size_t>(
        rng.uniform_int(static_cast<int64_t>(valid.size())))];
  }
  UnrollSegment seg;
  seg.transitions.reserve(static_cast<size_t>(d));
  for (int64_t j = chosen - d + 1; j <= chosen; ++j) {
    seg.transitions.push_back(slot(j));
  }
  return seg;
}

void ReplayBuffer::save(std::ostream& os) const {
  using core::write_i64;
  using core::write_pod_vec;
  using core::write_u64;
  write_i64(os, capacity_);
  write_i64(os, size_);
  // Deduplicated frame table preserves sharing across a reload.
  std::map<const env::Image*, int64_t> ids;
  std::vector<const env::Image*> frames;
  auto intern = [&](const ObsPtr& p) {
    auto [it, fresh] = ids.try_emplace(p.get(), frames.size());
    if (fresh) frames.push_back(p.get());
    return it->second;
  };
  std::vector<std::pair<int64_t, int64_t>> refs;
  refs.reserve(static_cast<size_t>(size_));
  for (int64_t i = 0; i < size_; ++i) {
    const Transition& t = slot(first_abs() + i);
    refs.emplace_back(intern(t.s), intern(t.s_next));
  }
  write_i64(os, static_cast<int64_t>(frames.size()));
  for (const env::Image* f : frames) {
    write_i64(os, f->h);
    write_i64(os, f->w);
    write_pod_vec(os, f->rgb);
  }
  for (int64_t i = 0; i < size_; ++i) {
    const Transition& t = slot(first_abs() + i);
    write_i64(os, refs[static_cast<size_t>(i)].first);
    write_i64(os, refs[static_cast<size_t>(i)].second);
    write_i64(os, t.action);
    core::write_f64(os, t.reward);
    write_u64(os, t.done ? 1 : 0);
    write_i64(os, t.episode_id);
    write_i64(os, t.step_index);
    write_u64(os, t.info.red_pickup ? 1 : 0);
    write_i64(os, t.info.corridor);
  }
}

void ReplayBuffer::load(std::istream& is) {
  using core::read_i64;
  using core::read_pod_vec;
  using core::read_u64;
  const int64_t cap = read_i64(is);
  if (cap != capacity_) {
    throw ConfigError("replay checkpoint capacity mismatch");
  }
  const int64_t n = read_i64(is);
  const int64_t num_frames = read_i64(is);
  std::vector<ObsPtr> frames;
  frames.reserve(static_cast<size_t>(num_frames));
  for (int64_t i = 0; i < num_frames; ++i) {
    auto img = std::make_shared<env::Image>();
    img->h = static_cast<int>(read_i64(is));
    img->w = static_cast<int>(read_i64(is));
    img->rgb = read_pod_vec<uint8_t>(is);
    frames.push_back(std::move(img));
  }
  size_ = 0;
  total_added_ = 0;
  std::fill(run_.begin(), run_.end(), 0);
  for (int64_t i = 0; i < n; ++i) {
    Transition t;
    t.s = frames.at(static_cast<size_t>(read_i64(is)));
    t.s_next = frames.at(static_cast<size_t>(read_i64(is)));
    t.action = static_cast<int>(read_i64(is));
    t.reward = core::read_f64(is);
    t.done = read_u64(is) != 0;
    t.episode_id = read_i64(is);
    t.step_index = static_cast<int32_t>(read_i64(is));
    t.info.red_pickup = read_u64(is) != 0;
    t.info.corridor = static_cast<int>(read_i64(is));
    add(std::move(t));
  }
}

}  // namespace ocgvf::replay

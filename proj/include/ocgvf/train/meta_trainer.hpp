#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ocgvf/agent/agent_network.hpp"
#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/tensor.hpp"
#include "ocgvf/env/env.hpp"
#include "ocgvf/nn/adam.hpp"
#include "ocgvf/qnet/question_network.hpp"
#include "ocgvf/replay/replay.hpp"
#include "ocgvf/slots/slot_module.hpp"

// Training orchestration. Per environment step, one Adam update of the value
// and control parameters on gvf_loss + ddqn_loss over a fresh iid minibatch.
// Per episode, one meta-update of the question parameters eta: the control
// loss is differentiated through an SGD-form rebuild of the tracked parameter
// subset over the recorded minibatches, so the gradient reaches eta through
// the inner GVF updates (second order). The rebuild is truncated to the last
// unroll_steps inner updates.

namespace ocgvf::train {

enum class CumulantSource {
  none,         // plain DDQN, no GVF heads
  meta_slots,   // question MLP on slot vectors, eta meta-learned
  meta_conv,    // question conv net on raw frames, eta meta-learned
  random_net,   // frozen randomly initialized conv question network
  iid_uniform,  // fresh U[-1,1] per state and head
  handcrafted,  // environment events (gridworld only)
};

bool is_meta_source(CumulantSource s);

struct EvalStats {
  double mean = 0.0;
  double se = 0.0;  // standard error of the mean over eval episodes
};

struct TrainerConfig {
  int train_episodes = 5000;
  int batch_size = 32;
  int target_period = 100;  // in gradient updates
  int64_t replay_capacity = 100000;
  double epsilon_begin = 1.0;
  double epsilon_end = 0.01;
  double epsilon_steps = 0.8;  // fraction of train_episodes annealed over
  double discount = 0.99;
  double learning_rate = 1e-4;       // alpha2: inner updates
  double meta_learning_rate = 1e-4;  // alpha3: eta updates
  int eval_episodes = 100;
  int evaluate_every = 50;
  int unroll_steps = 10;
  int warm_start = 1000;    // buffer size before the first gradient update
  int checkpoint_every = 0;  // episodes; 0 disables the checkpoint hook
  bool include_gvf_in_meta_loss = false;
  bool cumulants_from_next = false;  // cumulants from s' instead of s
  bool slot_pretrain = false;  // run the whole slot budget before episode 1
  CumulantSource cumulant_source = CumulantSource::none;
  // Parameter subset rebuilt in the meta path. The encoder is constant
  // unless listed ("enc."), which the unfused aux variants need: there the
  // shared representation is the only path from eta to the control loss.
  std::vector<std::string> tracked_prefixes = {"gvf.", "proj."};

  void validate() const;
};

// Exploration rate for a 0-based episode index: linear anneal, then constant.
double epsilon_at(const TrainerConfig& cfg, int64_t episode);

struct TrainSetup {
  agent::NetConfig net;
  TrainerConfig trainer;
  std::optional<slots::SlotConfig> slots;      // meta_slots only
  std::optional<qnet::QuestionConfig> question;
  // Invoked twice (train env, eval env). May be empty: update primitives and
  // checkpointing work without an environment; rollouts and eval do not.
  std::function<std::unique_ptr<env::Env>()> env_factory;
  uint64_t seed = 0;
};

// One traced inner update: the minibatch, the tracked parameter values
// before the update, and cached constants for the rebuild.
template <typename T>
struct InnerRecord {
  std::vector<replay::Transition> batch;
  std::map<std::string, std::vector<T>> tracked_before;
  std::vector<T> phi_s, phi_next;  // [B*feature_dim]; empty if enc tracked
  std::vector<T> slot_vecs;        // [B*K*slot_dim], meta_slots only
  std::vector<T> ddqn_targets;     // [B], the real update's TD targets
};

template <typename T>
class MetaTrainer {
 public:
  explicit MetaTrainer(const TrainSetup& setup);

  // One Adam step on gvf_loss + ddqn_loss over a fresh iid minibatch, traced
  // for the meta path. False with state untouched while the buffer is below
  // the warm-start threshold.
  bool inner_update();

  // Steps eta on the control loss differentiated through the traced inner
  // updates, then clears the trace. No-op (false) when the trace is empty or
  // no meta source is configured; skips the eta step but still clears the
  // trace when the buffer cannot provide an unroll segment.
  bool meta_update();

  // The meta objective as a pure function of eta given the frozen trace:
  // the control loss on the segment summed over the traced steps, each
  // evaluated at the rebuilt fast weights. Exposed for the
  // finite-difference oracle.
  core::Tensor<T> meta_objective(const replay::UnrollSegment& segment) const;

  // [B, K] cumulants for a batch. The graph reaches eta only when
  // build_graph is set; the inner update passes false (cumulants are
  // constants there).
  core::Tensor<T> cumulants_for(const std::vector<replay::Transition>& batch,
                                bool build_graph);

  // Rolls out n training episodes, appending one JSON line per episode.
  void train_episodes(int n, std::ostream* log = nullptr);
  // Trains up to trainer.train_episodes total episodes.
  void run_training(std::ostream* log = nullptr);
  EvalStats evaluate();
  int greedy_action(const env::Image& obs) const;

  // Whole-state checkpoint (parameters, optimizers, replay, RNG streams,
  // counters). Only legal between episodes: the trace must be empty.
  void save(std::ostream& os) const;
  void load(std::istream& is);

  const TrainerConfig& config() const { return cfg_; }
  const agent::NetConfig& net_config() const { return net_.cfg; }
  nn::ParamSet<T>& online() { return net_.online; }
  const nn::ParamSet<T>& online() const { return net_.online; }
  const nn::ParamSet<T>& target_params() const { return net_.target; }
  replay::ReplayBuffer& replay() { return replay_; }
  qnet::QuestionNetwork<T>* question() {
    return qnet_ ? &*qnet_ : nullptr;
  }
  const qnet::QuestionNetwork<T>* question() const {
    return qnet_ ? &*qnet_ : nullptr;
  }
  slots::SlotModule<T>* slot_module() { return slots_ ? &*slots_ : nullptr; }
  bool is_meta() const { return is_meta_source(cfg_.cumulant_source); }
  const std::vector<std::string>& tracked_names() const {
    return tracked_names_;
  }
  int64_t episode() const { return episode_; }
  int64_t global_step() const { return global_step_; }
  int64_t updates_done() const { return updates_done_; }
  size_t trace_size() const { return trace_.size(); }
  double last_gvf_loss() const { return last_gvf_loss_; }
  double last_ddqn_loss() const { return last_ddqn_loss_; }

  // Time source for the wall_time log field; injectable so determinism
  // tests can pin it.
  void set_clock(std::function<double()> clock) { clock_ = std::move(clock); }
  void set_checkpoint_hook(std::function<void(int64_t)> hook) {
    checkpoint_hook_ = std::move(hook);
  }

 private:
  struct BatchTensors {
    core::Tensor<T> obs_s, obs_next, rewards, dones;
    std::vector<int32_t> actions;
  };
  // Segment constants shared by every per-step meta evaluation.
  struct SegmentEval {
    BatchTensors bt;
    core::Tensor<T> phi_s, phi_next;  // empty when the encoder is tracked
    core::Tensor<T> q_next_target;
    core::Tensor<T> cumulants;  // only with include_gvf_in_meta_loss
  };
  BatchTensors batch_tensors(
      const std::vector<replay::Transition>& batch) const;
  core::Tensor<T> slot_vectors(const core::Tensor<T>& obs) const;
  core::Tensor<T> rebuild_step_loss(
      const InnerRecord<T>& rec,
      const std::map<std::string, core::Tensor<T>>& fast) const;
  SegmentEval make_segment_eval(const replay::UnrollSegment& segment) const;
  core::Tensor<T> segment_loss(
      const SegmentEval& se,
      const std::map<std::string, core::Tensor<T>>& fast) const;
  void run_one_episode(std::ostream* log);
  void slot_step_from_replay();
  void slot_pretrain_phase();
  void check_finite(double value, const char* where,
                    const std::vector<replay::Transition>& batch);
  void abort_with_dump(const char* where,
                       const std::vector<replay::Transition>& batch);

  TrainerConfig cfg_;
  agent::DoubleNet<T> net_;
  nn::Adam<T> opt_;
  std::optional<qnet::QuestionNetwork<T>> qnet_;
  std::optional<nn::Adam<T>> eta_opt_;
  std::optional<slots::SlotModule<T>> slots_;
  std::unique_ptr<env::Env> env_, eval_env_;
  replay::ReplayBuffer replay_;
  std::deque<InnerRecord<T>> trace_;
  std::vector<std::string> tracked_names_;
  bool track_encoder_ = false;
  core::Rng rng_env_, rng_action_, rng_replay_, rng_slot_, rng_eval_,
      rng_cum_;
  int64_t episode_ = 0;          // completed training episodes
  int64_t env_episode_seq_ = 0;  // replay episode ids, incl. pretrain rollouts
  int64_t global_step_ = 0;
  int64_t updates_done_ = 0;
  double wall_accum_ = 0.0;
  double mark_ = 0.0;  // last clock reading, reset at train_episodes entry
  double last_gvf_loss_ = 0.0, last_ddqn_loss_ = 0.0;
  // per-episode log accumulators, reset by the episode runner
  double ep_gvf_sum_ = 0.0, ep_ddqn_sum_ = 0.0, ep_recon_sum_ = 0.0;
  int64_t ep_updates_ = 0, ep_slot_steps_ = 0;
  std::ostream* log_ = nullptr;
  std::function<double()> clock_;
  std::function<void(int64_t)> checkpoint_hook_;
};

extern template class MetaTrainer<float>;
extern template class MetaTrainer<double>;

}  // namespace ocgvf::train

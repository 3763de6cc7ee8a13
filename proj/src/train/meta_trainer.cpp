#include "ocgvf/train/meta_trainer.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::train {

using core::Tensor;

bool is_meta_source(CumulantSource s) {
  return s == CumulantSource::meta_slots || s == CumulantSource::meta_conv;
}

void TrainerConfig::validate() const {
  if (train_episodes <= 0) throw ConfigError("train_episodes must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (target_period <= 0) throw ConfigError("target_period must be positive");
  if (replay_capacity <= 0) {
    throw ConfigError("replay_capacity must be positive");
  }
  if (epsilon_begin < 0 || epsilon_begin > 1 || epsilon_end < 0 ||
      epsilon_end > 1) {
    throw ConfigError("epsilon bounds must lie in [0, 1]");
  }
  if (epsilon_steps <= 0 || epsilon_steps > 1) {
    throw ConfigError("epsilon_steps is a fraction in (0, 1]");
  }
  if (discount < 0 || discount > 1) {
    throw ConfigError("discount must lie in [0, 1]");
  }
  if (learning_rate <= 0 || meta_learning_rate <= 0) {
    throw ConfigError("learning rates must be positive");
  }
  if (eval_episodes <= 0) throw ConfigError("eval_episodes must be positive");
  if (evaluate_every <= 0) throw ConfigError("evaluate_every must be positive");
  if (unroll_steps <= 0) throw ConfigError("unroll_steps must be positive");
  if (warm_start < 0) throw ConfigError("warm_start must be non-negative");
  if (checkpoint_every < 0) {
    throw ConfigError("checkpoint_every must be non-negative");
  }
}

double epsilon_at(const TrainerConfig& cfg, int64_t episode) {
  const double span = cfg.epsilon_steps * cfg.train_episodes;
  const double f =
      std::min(1.0, static_cast<double>(episode) / std::max(span, 1e-12));
  return cfg.epsilon_begin + (cfg.epsilon_end - cfg.epsilon_begin) * f;
}

namespace {

double steady_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

template <typename T>
agent::DoubleNet<T> make_net(const agent::NetConfig& cfg, uint64_t seed) {
  auto rng = core::Rng(seed).child(1);
  return agent::DoubleNet<T>(cfg, rng);
}

bool name_has_prefix(const std::string& name, const std::string& prefix) {
  return name.size() >= prefix.size() &&
         name.compare(0, prefix.size(), prefix) == 0;
}

}  // namespace

template <typename T>
MetaTrainer<T>::MetaTrainer(const TrainSetup& setup)
    : cfg_(setup.trainer),
      net_(make_net<T>(setup.net, setup.seed)),
      opt_(net_.online.tensors(), nn::AdamConfig{cfg_.learning_rate}),
      replay_(setup.trainer.replay_capacity),
      rng_env_(core::Rng(setup.seed).child(4)),
      rng_action_(core::Rng(setup.seed).child(5)),
      rng_replay_(core::Rng(setup.seed).child(6)),
      rng_slot_(core::Rng(setup.seed).child(7)),
      rng_eval_(core::Rng(setup.seed).child(8)),
      rng_cum_(core::Rng(setup.seed).child(9)),
      clock_(steady_seconds) {
  cfg_.validate();
  const auto src = cfg_.cumulant_source;
  if (src == CumulantSource::none && setup.net.has_gvfs()) {
    throw ConfigError("GVF heads configured without a cumulant source");
  }
  if (src != CumulantSource::none && !setup.net.has_gvfs()) {
    throw ConfigError("cumulant source configured without GVF heads");
  }

  if (src == CumulantSource::meta_slots) {
    if (!setup.question ||
        setup.question->kind != qnet::QuestionKind::slots) {
      throw ConfigError("meta_slots requires a slot-kind question network");
    }
    if (!setup.slots) throw ConfigError("meta_slots requires a slot module");
    if (setup.question->num_gvfs != setup.net.num_gvfs) {
      throw ConfigError("question num_gvfs must match the GVF head count");
    }
    if (setup.slots->num_slots != setup.net.num_gvfs) {
      throw ConfigError("one slot per GVF: num_slots must equal num_gvfs");
    }
    if (setup.slots->slot_dim != setup.question->slot_dim) {
      throw ConfigError("slot_dim mismatch between slot module and question");
    }
    if (setup.slots->resolution != setup.net.height ||
        setup.slots->resolution != setup.net.width ||
        setup.slots->channels != setup.net.channels) {
      throw ConfigError("slot module and agent observation shapes differ");
    }
    if (!setup.slots->learned_init) {
      throw ConfigError(
          "cumulants must be deterministic per state: use learned slot init");
    }
  } else if (src == CumulantSource::meta_conv ||
             src == CumulantSource::random_net) {
    if (!setup.question || setup.question->kind != qnet::QuestionKind::conv) {
      throw ConfigError("this cumulant source requires a conv question "
                        "network");
    }
    if (setup.question->num_gvfs != setup.net.num_gvfs) {
      throw ConfigError("question num_gvfs must match the GVF head count");
    }
    if (setup.question->height != setup.net.height ||
        setup.question->width != setup.net.width ||
        setup.question->channels != setup.net.channels) {
      throw ConfigError("question network and agent observation shapes "
                        "differ");
    }
    if (setup.slots) {
      throw ConfigError("slot module is only consumed by meta_slots");
    }
  } else {
    if (setup.question) throw ConfigError("question network would be unused");
    if (setup.slots) throw ConfigError("slot module would be unused");
  }
  if (src == CumulantSource::handcrafted && setup.net.num_gvfs != 5) {
    throw ConfigError("handcrafted cumulants define exactly five signals");
  }

  if (setup.question) {
    auto rng = core::Rng(setup.seed).child(2);
    qnet_.emplace(*setup.question, rng);
  }
  if (is_meta()) {
    eta_opt_.emplace(qnet_->params().tensors(),
                     nn::AdamConfig{cfg_.meta_learning_rate});
  }
  if (setup.slots) {
    auto rng = core::Rng(setup.seed).child(3);
    slots_.emplace(*setup.slots, rng);
  }

  tracked_names_ = net_.online.names_prefixed(cfg_.tracked_prefixes);
  track_encoder_ = std::any_of(
      tracked_names_.begin(), tracked_names_.end(),
      [](const std::string& n) { return name_has_prefix(n, "enc."); });
  if (is_meta() && tracked_names_.empty()) {
    throw ConfigError("meta-learning requires a non-empty tracked subset");
  }

  if (setup.env_factory) {
    env_ = setup.env_factory();
    eval_env_ = setup.env_factory();
    if (!env_ || !eval_env_) throw ConfigError("env_factory returned null");
    if (src == CumulantSource::handcrafted &&
        env_->id() != "collect_objects") {
      throw ConfigError("handcrafted cumulants are defined for "
                        "collect_objects only");
    }
    if (env_->num_actions() != setup.net.num_actions) {
      throw ConfigError("num_actions mismatch between env and network");
    }
    if (env_->obs_height() != setup.net.height ||
        env_->obs_width() != setup.net.width || setup.net.channels != 3) {
      throw ConfigError("observation shape mismatch between env and network");
    }
  }
}

// --- batch assembly ---

template <typename T>
typename MetaTrainer<T>::BatchTensors MetaTrainer<T>::batch_tensors(
    const std::vector<replay::Transition>& batch) const {
  if (batch.empty()) throw ShapeError("batch_tensors: empty batch");
  const int b = static_cast<int>(batch.size());
  std::vector<const env::Image*> fs, fn;
  fs.reserve(batch.size());
  fn.reserve(batch.size());
  std::vector<T> rewards(batch.size()), dones(batch.size());
  BatchTensors out;
  out.actions.reserve(batch.size());
  for (size_t i = 0; i < batch.size(); ++i) {
    fs.push_back(batch[i].s.get());
    fn.push_back(batch[i].s_next.get());
    rewards[i] = static_cast<T>(batch[i].reward);
    dones[i] = batch[i].done ? T(1) : T(0);
    out.actions.push_back(static_cast<int32_t>(batch[i].action));
  }
  out.obs_s = agent::obs_to_tensor<T>(fs);
  out.obs_next = agent::obs_to_tensor<T>(fn);
  out.rewards = Tensor<T>::from({b}, std::move(rewards));
  out.dones = Tensor<T>::from({b}, std::move(dones));
  return out;
}

template <typename T>
Tensor<T> MetaTrainer<T>::slot_vectors(const Tensor<T>& obs) const {
  core::NoGradGuard<T> off;
  return slots_->slots_for(obs, nullptr);
}

// --- cumulants ---

template <typename T>
Tensor<T> MetaTrainer<T>::cumulants_for(
    const std::vector<replay::Transition>& batch, bool build_graph) {
  const int b = static_cast<int>(batch.size());
  const int k = net_.cfg.num_gvfs;
  const auto src = cfg_.cumulant_source;
  if (src == CumulantSource::none) {
    throw ConfigError("cumulants_for: no cumulant source configured");
  }

  if (src == CumulantSource::iid_uniform) {
    std::vector<T> c(static_cast<size_t>(b) * k);
    for (auto& v : c) v = static_cast<T>(rng_cum_.uniform(-1.0, 1.0));
    return Tensor<T>::from({b, k}, std::move(c));
  }
  if (src == CumulantSource::handcrafted) {
    std::vector<T> c(static_cast<size_t>(b) * k, T(0));
    for (int i = 0; i < b; ++i) {
      const env::StepInfo& info = batch[static_cast<size_t>(i)].info;
      if (info.red_pickup) c[static_cast<size_t>(i) * k] = T(1);
      if (info.corridor >= 0 && info.corridor < k - 1) {
        c[static_cast<size_t>(i) * k + 1 + info.corridor] = T(1);
      }
    }
    return Tensor<T>::from({b, k}, std::move(c));
  }

  std::vector<const env::Image*> frames;
  frames.reserve(batch.size());
  for (const auto& t : batch) {
    frames.push_back(cfg_.cumulants_from_next ? t.s_next.get() : t.s.get());
  }
  const auto obs = agent::obs_to_tensor<T>(frames);

  std::optional<core::NoGradGuard<T>> guard;
  if (!build_graph || src == CumulantSource::random_net) guard.emplace();
  if (src == CumulantSource::meta_slots) {
    return qnet_->cumulants_from_slots(slot_vectors(obs));
  }
  return qnet_->cumulants_from_obs(obs);
}

// --- inner update ---

template <typename T>
bool MetaTrainer<T>::inner_update() {
  const int64_t need =
      std::max<int64_t>(cfg_.warm_start, cfg_.batch_size);
  if (replay_.size() < need) return false;
  auto batch = *replay_.sample_batch(cfg_.batch_size, rng_replay_);
  const auto bt = batch_tensors(batch);
  const T gamma = static_cast<T>(cfg_.discount);
  const auto& ncfg = net_.cfg;
  const nn::ParamView<T> view(net_.online);

  InnerRecord<T> rec;
  const bool tracing = is_meta();
  if (tracing) {
    rec.batch = batch;
    for (const auto& name : tracked_names_) {
      rec.tracked_before.emplace(name, net_.online.at(name).vec());
    }
  }

  // Cumulants enter the real update as constants; only the meta rebuild
  // differentiates them.
  Tensor<T> cums, slot_vecs;
  if (cfg_.cumulant_source == CumulantSource::meta_slots) {
    core::NoGradGuard<T> off;
    slot_vecs =
        slot_vectors(cfg_.cumulants_from_next ? bt.obs_next : bt.obs_s);
    cums = qnet_->cumulants_from_slots(slot_vecs);
  } else if (cfg_.cumulant_source != CumulantSource::none) {
    cums = cumulants_for(batch, false);
  }

  auto phi_s = agent::features(ncfg, view, bt.obs_s);
  Tensor<T> phi_n;
  {
    core::NoGradGuard<T> off;
    phi_n = agent::features(ncfg, view, bt.obs_next);
  }

  Tensor<T> loss, v_s, v_n;
  double gvf_item = 0.0;
  if (ncfg.has_gvfs()) {
    v_s = agent::gvf_values(ncfg, view, phi_s);
    {
      core::NoGradGuard<T> off;
      v_n = agent::gvf_values(ncfg, view, phi_n);
    }
    loss = agent::gvf_loss(ncfg, cums, v_s, v_n, bt.actions, bt.dones, gamma);
    gvf_item = static_cast<double>(loss.item());
  }

  auto q_s = agent::q_values(ncfg, view, agent::fuse(ncfg, view, v_s, phi_s));
  Tensor<T> q_no, q_nt;
  {
    core::NoGradGuard<T> off;
    q_no = agent::q_values(ncfg, view, agent::fuse(ncfg, view, v_n, phi_n));
    q_nt = agent::q_from_obs(ncfg, nn::ParamView<T>(net_.target), bt.obs_next);
  }
  auto dl = agent::ddqn_loss(q_s, q_no, q_nt, bt.actions, bt.rewards,
                             bt.dones, gamma);
  const double ddqn_item = static_cast<double>(dl.item());
  loss = loss.defined() ? core::add(loss, dl) : dl;

  check_finite(gvf_item, "inner_update/gvf_loss", batch);
  check_finite(ddqn_item, "inner_update/ddqn_loss", batch);
  last_gvf_loss_ = gvf_item;
  last_ddqn_loss_ = ddqn_item;

  auto grads = core::grad(loss, net_.online.tensors());
  opt_.step(grads);
  ++updates_done_;
  ep_gvf_sum_ += gvf_item;
  ep_ddqn_sum_ += ddqn_item;
  ++ep_updates_;
  if (agent::should_sync(updates_done_, cfg_.target_period)) net_.sync();

  if (tracing) {
    if (!track_encoder_) {
      rec.phi_s = phi_s.vec();
      rec.phi_next = phi_n.vec();
    }
    if (cfg_.cumulant_source == CumulantSource::meta_slots) {
      rec.slot_vecs = slot_vecs.vec();
    }
    {
      // The TD target vector the update trained against, kept constant in
      // the rebuild.
      core::NoGradGuard<T> off;
      auto greedy = core::argmax_rows(q_no);
      auto boot = core::scale(core::add_const(core::neg(bt.dones), T(1)),
                              gamma);
      auto y = core::add(bt.rewards,
                         core::mul(boot, core::select_actions(q_nt, greedy)));
      rec.ddqn_targets = y.vec();
    }
    trace_.push_back(std::move(rec));
    while (static_cast<int64_t>(trace_.size()) > cfg_.unroll_steps) {
      trace_.pop_front();
    }
  }
  return true;
}

// --- meta update ---

template <typename T>
Tensor<T> MetaTrainer<T>::rebuild_step_loss(
    const InnerRecord<T>& rec,
    const std::map<std::string, Tensor<T>>& fast) const {
  const nn::ParamView<T> view(net_.online, fast);
  const auto bt = batch_tensors(rec.batch);
  const auto& ncfg = net_.cfg;
  const T gamma = static_cast<T>(cfg_.discount);
  const int b = static_cast<int>(rec.batch.size());

  Tensor<T> phi_s, phi_n;
  if (track_encoder_) {
    phi_s = agent::features(ncfg, view, bt.obs_s);
    phi_n = agent::features(ncfg, view, bt.obs_next);
  } else {
    phi_s = Tensor<T>::from({b, ncfg.feature_dim()}, rec.phi_s);
    phi_n = Tensor<T>::from({b, ncfg.feature_dim()}, rec.phi_next);
  }

  Tensor<T> cums;
  if (cfg_.cumulant_source == CumulantSource::meta_slots) {
    auto sv = Tensor<T>::from(
        {b, ncfg.num_gvfs, qnet_->config().slot_dim}, rec.slot_vecs);
    cums = qnet_->cumulants_from_slots(sv);
  } else {
    cums = qnet_->cumulants_from_obs(cfg_.cumulants_from_next ? bt.obs_next
                                                              : bt.obs_s);
  }

  auto v_s = agent::gvf_values(ncfg, view, phi_s);
  auto v_n = agent::gvf_values(ncfg, view, phi_n);
  auto loss =
      agent::gvf_loss(ncfg, cums, v_s, v_n, bt.actions, bt.dones, gamma);

  // The control term the real update also descended, against the recorded
  // TD targets.
  auto q_s = agent::q_values(ncfg, view, agent::fuse(ncfg, view, v_s, phi_s));
  auto y = Tensor<T>::from({b}, rec.ddqn_targets);
  return core::add(loss,
                   core::mse(core::select_actions(q_s, bt.actions), y));
}

template <typename T>
typename MetaTrainer<T>::SegmentEval MetaTrainer<T>::make_segment_eval(
    const replay::UnrollSegment& segment) const {
  if (segment.transitions.empty()) {
    throw ShapeError("meta_objective: empty segment");
  }
  SegmentEval se;
  se.bt = batch_tensors(segment.transitions);
  {
    core::NoGradGuard<T> off;
    const nn::ParamView<T> view(net_.online);
    if (!track_encoder_) {
      se.phi_s = agent::features(net_.cfg, view, se.bt.obs_s);
      se.phi_next = agent::features(net_.cfg, view, se.bt.obs_next);
    }
    se.q_next_target = agent::q_from_obs(
        net_.cfg, nn::ParamView<T>(net_.target), se.bt.obs_next);
  }
  if (cfg_.include_gvf_in_meta_loss) {
    const auto& obs = cfg_.cumulants_from_next ? se.bt.obs_next : se.bt.obs_s;
    if (cfg_.cumulant_source == CumulantSource::meta_slots) {
      se.cumulants = qnet_->cumulants_from_slots(slot_vectors(obs));
    } else {
      se.cumulants = qnet_->cumulants_from_obs(obs);
    }
  }
  return se;
}

template <typename T>
Tensor<T> MetaTrainer<T>::segment_loss(
    const SegmentEval& se, const std::map<std::string, Tensor<T>>& fast) const {
  const nn::ParamView<T> view(net_.online, fast);
  const auto& ncfg = net_.cfg;
  const T gamma = static_cast<T>(cfg_.discount);

  Tensor<T> phi_s =
      track_encoder_ ? agent::features(ncfg, view, se.bt.obs_s) : se.phi_s;
  Tensor<T> v_s;
  if (ncfg.fused() || cfg_.include_gvf_in_meta_loss) {
    v_s = agent::gvf_values(ncfg, view, phi_s);
  }
  auto q_s = agent::q_values(ncfg, view, agent::fuse(ncfg, view, v_s, phi_s));

  Tensor<T> q_no, phi_n, v_n;
  {
    core::NoGradGuard<T> off;
    phi_n = track_encoder_ ? agent::features(ncfg, view, se.bt.obs_next)
                           : se.phi_next;
    if (ncfg.fused() || cfg_.include_gvf_in_meta_loss) {
      v_n = agent::gvf_values(ncfg, view, phi_n);
    }
    q_no = agent::q_values(ncfg, view, agent::fuse(ncfg, view, v_n, phi_n));
  }
  auto loss = agent::ddqn_loss(q_s, q_no, se.q_next_target, se.bt.actions,
                               se.bt.rewards, se.bt.dones, gamma);
  if (cfg_.include_gvf_in_meta_loss) {
    loss = core::add(loss,
                     agent::gvf_loss(ncfg, se.cumulants, v_s, v_n,
                                     se.bt.actions, se.bt.dones, gamma));
  }
  return loss;
}

template <typename T>
Tensor<T> MetaTrainer<T>::meta_objective(
    const replay::UnrollSegment& segment) const {
  if (!is_meta()) throw ConfigError("meta_objective: no meta source");
  if (trace_.empty()) throw ConfigError("meta_objective: empty trace");

  // Fast weights start from the tracked values before the oldest traced
  // update; the chain below re-derives each traced step in SGD form so the
  // whole path stays differentiable with respect to eta.
  std::map<std::string, Tensor<T>> fast;
  std::vector<Tensor<T>> order;
  order.reserve(tracked_names_.size());
  for (const auto& name : tracked_names_) {
    auto t = Tensor<T>::from(net_.online.at(name).shape(),
                             trace_.front().tracked_before.at(name));
    t.set_requires_grad(true);
    fast[name] = t;
    order.push_back(t);
  }

  const auto se = make_segment_eval(segment);
  Tensor<T> total;
  for (const auto& rec : trace_) {
    auto inner = rebuild_step_loss(rec, fast);
    auto gs = core::grad(inner, order, /*create_graph=*/true);
    for (size_t i = 0; i < tracked_names_.size(); ++i) {
      auto next = core::sub(
          fast[tracked_names_[i]],
          core::scale(gs[i], static_cast<T>(cfg_.learning_rate)));
      fast[tracked_names_[i]] = next;
      order[i] = next;
    }
    auto step = segment_loss(se, fast);
    total = total.defined() ? core::add(total, step) : step;
  }
  return total;
}

template <typename T>
bool MetaTrainer<T>::meta_update() {
  if (!is_meta() || trace_.empty()) return false;
  auto segment = replay_.sample_unroll(cfg_.unroll_steps, rng_replay_);
  if (!segment) {
    // No unrolled data to evaluate on; the next episode starts a fresh trace.
    trace_.clear();
    return false;
  }
  auto obj = meta_objective(*segment);
  check_finite(static_cast<double>(obj.item()), "meta_update",
               segment->transitions);
  auto grads = core::grad(obj, qnet_->params().tensors());
  eta_opt_->step(grads);
  trace_.clear();
  return true;
}

// --- rollouts ---

template <typename T>
int MetaTrainer<T>::greedy_action(const env::Image& obs) const {
  core::NoGradGuard<T> off;
  const auto x = agent::obs_to_tensor<T>({&obs});
  const auto q =
      agent::q_from_obs(net_.cfg, nn::ParamView<T>(net_.online), x);
  return core::argmax_rows(q)[0];
}

template <typename T>
void MetaTrainer<T>::slot_step_from_replay() {
  if (!slots_ || slots_->exhausted()) return;
  const int sb = slots_->config().batch_size;
  if (replay_.size() < sb) return;
  auto batch = *replay_.sample_batch(sb, rng_slot_);
  std::vector<const env::Image*> frames;
  frames.reserve(batch.size());
  for (const auto& t : batch) frames.push_back(t.s.get());
  const auto imgs = agent::obs_to_tensor<T>(frames);
  const T rl = slots_->train_step(imgs, &rng_slot_);
  check_finite(static_cast<double>(rl), "slot_train_step", batch);
  ep_recon_sum_ += static_cast<double>(rl);
  ++ep_slot_steps_;
}

template <typename T>
void MetaTrainer<T>::slot_pretrain_phase() {
  if (!slots_ || slots_->exhausted()) return;
  const int sb = slots_->config().batch_size;
  while (!slots_->exhausted()) {
    if (replay_.size() < sb) {
      // Object discovery trains on frames from random behavior.
      auto first = env_->reset(rng_env_.next_u64());
      auto cur = std::make_shared<env::Image>(std::move(first));
      const int64_t ep_id = env_episode_seq_++;
      bool done = false;
      int32_t t = 0;
      while (!done) {
        const int a =
            static_cast<int>(rng_action_.uniform_int(env_->num_actions()));
        auto out = env_->step(a);
        auto nxt = std::make_shared<env::Image>(std::move(out.obs));
        const env::StepInfo info =
            env_->last_info() ? *env_->last_info() : env::StepInfo{};
        replay_.add({cur, nxt, a, out.reward, out.done, ep_id, t, info});
        done = out.done;
        ++t;
        ++global_step_;
        cur = std::move(nxt);
      }
      continue;
    }
    slot_step_from_replay();
  }
}

template <typename T>
void MetaTrainer<T>::run_one_episode(std::ostream* log) {
  const double eps = epsilon_at(cfg_, episode_);
  ep_gvf_sum_ = ep_ddqn_sum_ = ep_recon_sum_ = 0.0;
  ep_updates_ = ep_slot_steps_ = 0;

  auto first = env_->reset(rng_env_.next_u64());
  auto cur = std::make_shared<env::Image>(std::move(first));
  const int64_t ep_id = env_episode_seq_++;
  double ep_return = 0.0;
  bool done = false;
  int32_t t = 0;
  while (!done) {
    int a;
    if (rng_action_.uniform() < eps) {
      a = static_cast<int>(rng_action_.uniform_int(env_->num_actions()));
    } else {
      a = greedy_action(*cur);
    }
    auto out = env_->step(a);
    auto nxt = std::make_shared<env::Image>(std::move(out.obs));
    const env::StepInfo info =
        env_->last_info() ? *env_->last_info() : env::StepInfo{};
    replay_.add({cur, nxt, a, out.reward, out.done, ep_id, t, info});
    ep_return += out.reward;
    done = out.done;
    ++t;
    ++global_step_;
    if (!cfg_.slot_pretrain) slot_step_from_replay();
    inner_update();
    cur = std::move(nxt);
  }
  meta_update();
  ++episode_;

  const bool do_eval = episode_ % cfg_.evaluate_every == 0;
  EvalStats es{};
  if (do_eval) es = evaluate();

  const double now = clock_();
  wall_accum_ += now - mark_;
  mark_ = now;

  if (log != nullptr) {
    nlohmann::ordered_json row;
    row["episode"] = episode_;
    row["global_step"] = global_step_;
    row["train_return"] = ep_return;
    row["eval_return_mean"] =
        do_eval ? nlohmann::ordered_json(es.mean) : nullptr;
    row["eval_return_se"] = do_eval ? nlohmann::ordered_json(es.se) : nullptr;
    row["gvf_loss"] = (ep_updates_ > 0 && net_.cfg.has_gvfs())
                          ? nlohmann::ordered_json(ep_gvf_sum_ / ep_updates_)
                          : nullptr;
    row["ddqn_loss"] = ep_updates_ > 0
                           ? nlohmann::ordered_json(ep_ddqn_sum_ / ep_updates_)
                           : nullptr;
    row["recon_loss"] =
        ep_slot_steps_ > 0
            ? nlohmann::ordered_json(ep_recon_sum_ / ep_slot_steps_)
            : nullptr;
    row["epsilon"] = eps;
    row["wall_time"] = wall_accum_;
    *log << row.dump() << "\n";
  }

  if (checkpoint_hook_ && cfg_.checkpoint_every > 0 &&
      episode_ % cfg_.checkpoint_every == 0) {
    checkpoint_hook_(episode_);
  }
}

template <typename T>
void MetaTrainer<T>::train_episodes(int n, std::ostream* log) {
  if (!env_) throw ConfigError("train_episodes: no environment configured");
  log_ = log;
  mark_ = clock_();
  if (cfg_.slot_pretrain) slot_pretrain_phase();
  for (int i = 0; i < n; ++i) run_one_episode(log);
  log_ = nullptr;
}

template <typename T>
void MetaTrainer<T>::run_training(std::ostream* log) {
  train_episodes(static_cast<int>(cfg_.train_episodes - episode_), log);
}

template <typename T>
EvalStats MetaTrainer<T>::evaluate() {
  if (!eval_env_) throw ConfigError("evaluate: no environment configured");
  const int n = cfg_.eval_episodes;
  std::vector<double> returns(static_cast<size_t>(n));
  for (int e = 0; e < n; ++e) {
    env::Image cur = eval_env_->reset(rng_eval_.next_u64());
    double r = 0.0;
    bool done = false;
    while (!done) {
      auto out = eval_env_->step(greedy_action(cur));
      r += out.reward;
      done = out.done;
      cur = std::move(out.obs);
    }
    returns[static_cast<size_t>(e)] = r;
  }
  EvalStats es;
  for (double r : returns) es.mean += r;
  es.mean /= n;
  if (n > 1) {
    double ss = 0.0;
    for (double r : returns) ss += (r - es.mean) * (r - es.mean);
    es.se = std::sqrt(ss / (n - 1)) / std::sqrt(static_cast<double>(n));
  }
  return es;
}

// --- diagnostics ---

template <typename T>
void MetaTrainer<T>::check_finite(
    double value, const char* where,
    const std::vector<replay::Transition>& batch) {
  if (!std::isfinite(value)) abort_with_dump(where, batch);
}

template <typename T>
void MetaTrainer<T>::abort_with_dump(
    const char* where, const std::vector<replay::Transition>& batch) {
  nlohmann::ordered_json dump;
  dump["event"] = "non_finite_loss";
  dump["where"] = where;
  dump["episode"] = episode_;
  dump["global_step"] = global_step_;
  dump["updates_done"] = updates_done_;
  nlohmann::ordered_json norms;
  std::map<std::string, double> sums;
  for (const auto& p : net_.online.all()) {
    const auto dot = p.name.find('.');
    auto& s = sums[p.name.substr(0, dot)];
    for (const T v : p.value.vec()) {
      s += static_cast<double>(v) * static_cast<double>(v);
    }
  }
  for (const auto& [group, ss] : sums) norms[group] = std::sqrt(ss);
  dump["param_norms"] = norms;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& tr : batch) {
    rows.push_back({{"action", tr.action},
                    {"reward", tr.reward},
                    {"done", tr.done},
                    {"episode_id", tr.episode_id},
                    {"step_index", tr.step_index}});
  }
  dump["batch"] = rows;
  std::ostream& os = log_ != nullptr ? *log_ : std::cerr;
  os << dump.dump() << "\n";
  os.flush();
  throw NumericsError(std::string(where) +
                      ": non-finite loss, diagnostics dumped");
}

// --- checkpointing ---

template <typename T>
void MetaTrainer<T>::save(std::ostream& os) const {
  if (!trace_.empty()) {
    throw ConfigError("save: trace must be empty (checkpoint between "
                      "episodes)");
  }
  core::write_string(os, "ocgvf.train.v1");
  net_.online.save(os);
  net_.target.save(os);
  opt_.save(os);
  core::write_u64(os, qnet_ ? 1 : 0);
  if (qnet_) qnet_->save(os);
  core::write_u64(os, eta_opt_ ? 1 : 0);
  if (eta_opt_) eta_opt_->save(os);
  core::write_u64(os, slots_ ? 1 : 0);
  if (slots_) slots_->save(os);
  replay_.save(os);
  for (const core::Rng* r : {&rng_env_, &rng_action_, &rng_replay_,
                             &rng_slot_, &rng_eval_, &rng_cum_}) {
    core::write_string(os, r->state_str());
  }
  core::write_i64(os, episode_);
  core::write_i64(os, env_episode_seq_);
  core::write_i64(os, global_step_);
  core::write_i64(os, updates_done_);
  core::write_f64(os, wall_accum_);
}

template <typename T>
void MetaTrainer<T>::load(std::istream& is) {
  if (core::read_string(is) != "ocgvf.train.v1") {
    throw ConfigError("checkpoint version mismatch");
  }
  net_.online.load(is);
  net_.target.load(is);
  opt_.load(is);
  if (core::read_u64(is) != (qnet_ ? 1u : 0u)) {
    throw ConfigError("checkpoint question-network topology mismatch");
  }
  if (qnet_) qnet_->load(is);
  if (core::read_u64(is) != (eta_opt_ ? 1u : 0u)) {
    throw ConfigError("checkpoint meta-optimizer topology mismatch");
  }
  if (eta_opt_) eta_opt_->load(is);
  if (core::read_u64(is) != (slots_ ? 1u : 0u)) {
    throw ConfigError("checkpoint slot-module topology mismatch");
  }
  if (slots_) slots_->load(is);
  replay_.load(is);
  for (core::Rng* r : {&rng_env_, &rng_action_, &rng_replay_, &rng_slot_,
                       &rng_eval_, &rng_cum_}) {
    r->restore(core::read_string(is));
  }
  episode_ = core::read_i64(is);
  env_episode_seq_ = core::read_i64(is);
  global_step_ = core::read_i64(is);
  updates_done_ = core::read_i64(is);
  wall_accum_ = core::read_f64(is);
  trace_.clear();
}

template class MetaTrainer<float>;
template class MetaTrainer<double>;

}  // namespace ocgvf::train

#pragma once

#include <string>
#include <vector>

#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/tensor.hpp"
#include "ocgvf/env/env.hpp"
#include "ocgvf/nn/param.hpp"

namespace ocgvf::agent {

// Predictions per GVF head: a state value or one value per action.
enum class GvfKind { state, action };

struct NetConfig {
  int height = 32, width = 32, channels = 3;
  int num_actions = 4;
  int num_gvfs = 5;
  int projection_dim = 64;
  int gvf_hidden = 32;
  std::vector<int> hidden_arch = {64, 32};
  std::vector<int> conv_filters = {16, 32, 64};  // conv-pool-conv-pool-conv
  GvfKind gvf_kind = GvfKind::state;
  bool fuse_gvfs = true;   // project GVF outputs into the control features
  bool layer_norm = true;  // normalize the control features

  bool has_gvfs() const { return num_gvfs > 0; }
  bool fused() const { return has_gvfs() && fuse_gvfs; }
  int gvf_out_dim() const {
    return gvf_kind == GvfKind::action ? num_actions : 1;
  }
  int feature_dim() const {
    return (height / 4) * (width / 4) * conv_filters.back();
  }
  int fused_dim() const {
    return (fused() ? projection_dim : 0) + feature_dim();
  }
  void validate() const;
};

// Parameter names are hierarchical: enc.*, gvf.<k>.*, proj.*, ln.*, q.*.
// The value partition (enc/gvf/proj/ln) and the control partition (q) are
// addressed by prefix.
template <typename T>
nn::ParamSet<T> init_agent_params(const NetConfig& cfg, core::Rng& rng);
std::vector<std::string> theta_prefixes();
std::vector<std::string> w_prefixes();

// Online/target parameter pair with hard sync.
template <typename T>
struct DoubleNet {
  NetConfig cfg;
  nn::ParamSet<T> online;
  nn::ParamSet<T> target;

  DoubleNet(const NetConfig& c, core::Rng& rng)
      : cfg(c),
        online(init_agent_params<T>(c, rng)),
        target(init_agent_params<T>(c, rng)) {
    sync();
  }
  void sync() { target.copy_from(online); }
};

// True on the update counts where the target must be refreshed.
bool should_sync(int64_t updates_done, int target_period);

// --- Forward passes ---
// obs is [B, C, H, W]; frames are converted with obs_to_tensor below.
template <typename T>
core::Tensor<T> features(const NetConfig& cfg, const nn::ParamView<T>& p,
                         const core::Tensor<T>& obs);  // [B, feature_dim]
template <typename T>
core::Tensor<T> gvf_values(const NetConfig& cfg, const nn::ParamView<T>& p,
                           const core::Tensor<T>& phi);  // [B, K*out_dim]
template <typename T>
core::Tensor<T> fuse(const NetConfig& cfg, const nn::ParamView<T>& p,
                     const core::Tensor<T>& v,
                     const core::Tensor<T>& phi);  // [B, fused_dim]
template <typename T>
core::Tensor<T> q_values(const NetConfig& cfg, const nn::ParamView<T>& p,
                         const core::Tensor<T>& chi);  // [B, A]
template <typename T>
core::Tensor<T> q_from_obs(const NetConfig& cfg, const nn::ParamView<T>& p,
                           const core::Tensor<T>& obs);

// --- Losses ---
// Mean squared TD error over batch and heads. v_next is bootstrapped as a
// constant (semi-gradient); cumulants keep their graph so meta-gradients
// reach the question network.
template <typename T>
core::Tensor<T> gvf_state_loss(const core::Tensor<T>& cumulants,  // [B, K]
                               const core::Tensor<T>& v_s,        // [B, K]
                               const core::Tensor<T>& v_next,     // [B, K]
                               const core::Tensor<T>& done,       // [B]
                               T gamma);
// Action-value heads: behavior action's prediction, max-action bootstrap.
template <typename T>
core::Tensor<T> gvf_action_loss(const NetConfig& cfg,
                                const core::Tensor<T>& cumulants,  // [B, K]
                                const core::Tensor<T>& q_s,     // [B, K*A]
                                const core::Tensor<T>& q_next,  // [B, K*A]
                                const std::vector<int32_t>& actions,
                                const core::Tensor<T>& done, T gamma);
// Dispatches on cfg.gvf_kind.
template <typename T>
core::Tensor<T> gvf_loss(const NetConfig& cfg, const core::Tensor<T>& cumulants,
                         const core::Tensor<T>& gvf_s,
                         const core::Tensor<T>& gvf_next,
                         const std::vector<int32_t>& actions,
                         const core::Tensor<T>& done, T gamma);

// y = r + gamma * (1 - done) * Q_target(s', argmax_a Q_online(s', a)).
template <typename T>
core::Tensor<T> ddqn_loss(const core::Tensor<T>& q_s,            // [B, A]
                          const core::Tensor<T>& q_next_online,  // [B, A]
                          const core::Tensor<T>& q_next_target,  // [B, A]
                          const std::vector<int32_t>& actions,
                          const core::Tensor<T>& rewards,  // [B]
                          const core::Tensor<T>& done,     // [B]
                          T gamma);

// --- Batch assembly ---
// Stacks frames into [B, 3, H, W] with values byte/255.
template <typename T>
core::Tensor<T> obs_to_tensor(const std::vector<const env::Image*>& frames);

}  // namespace ocgvf::agent

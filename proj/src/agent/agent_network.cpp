#include "ocgvf/agent/agent_network.hpp"

#include "ocgvf/core/errors.hpp"

namespace ocgvf::agent {

using core::Tensor;

void NetConfig::validate() const {
  if (height <= 0 || width <= 0 || channels <= 0) {
    throw ConfigError("observation dimensions must be positive");
  }
  if (height % 4 != 0 || width % 4 != 0) {
    throw ConfigError("resolution must be divisible by 4 (two stride-2 pools)");
  }
  if (conv_filters.size() != 3) {
    throw ConfigError("encoder expects exactly three conv layers");
  }
  if (num_actions <= 0) throw ConfigError("num_actions must be positive");
  if (num_gvfs < 0) throw ConfigError("num_gvfs must be non-negative");
  if (hidden_arch.empty()) throw ConfigError("hidden_arch must not be empty");
  if (fused() && projection_dim <= 0) {
    throw ConfigError("projection_dim must be positive when fusing");
  }
  if (has_gvfs() && gvf_hidden <= 0) {
    throw ConfigError("gvf_hidden must be positive");
  }
}

std::vector<std::string> theta_prefixes() {
  return {"enc.", "gvf.", "proj.", "ln."};
}

std::vector<std::string> w_prefixes() { return {"q."}; }

bool should_sync(int64_t updates_done, int target_period) {
  if (target_period <= 0) throw ConfigError("target_period must be positive");
  return updates_done > 0 && updates_done % target_period == 0;
}

template <typename T>
nn::ParamSet<T> init_agent_params(const NetConfig& cfg, core::Rng& rng) {
  cfg.validate();
  nn::ParamSet<T> ps;
  auto linear_pair = [&](const std::string& stem, int in, int out) {
    ps.add(stem + ".w", nn::fanin_uniform<T>(rng, {in, out}, in));
    ps.add(stem + ".b", Tensor<T>::zeros({out}));
  };

  int in_c = cfg.channels;
  for (size_t i = 0; i < cfg.conv_filters.size(); ++i) {
    const int oc = cfg.conv_filters[i];
    const std::string stem = "enc.c" + std::to_string(i + 1);
    ps.add(stem + ".w",
           nn::fanin_uniform<T>(rng, {oc, in_c, 3, 3}, int64_t{in_c} * 9));
    ps.add(stem + ".b", Tensor<T>::zeros({oc}));
    in_c = oc;
  }

  for (int k = 0; k < cfg.num_gvfs; ++k) {
    const std::string stem = "gvf." + std::to_string(k);
    linear_pair(stem + ".l1", cfg.feature_dim(), cfg.gvf_hidden);
    linear_pair(stem + ".l2", cfg.gvf_hidden, cfg.gvf_out_dim());
  }

  if (cfg.fused()) {
    linear_pair("proj", cfg.num_gvfs * cfg.gvf_out_dim(), cfg.projection_dim);
  }
  if (cfg.layer_norm) {
    ps.add("ln.g", Tensor<T>::ones({cfg.fused_dim()}));
    ps.add("ln.b", Tensor<T>::zeros({cfg.fused_dim()}));
  }

  int in = cfg.fused_dim();
  for (size_t i = 0; i < cfg.hidden_arch.size(); ++i) {
    linear_pair("q.l" + std::to_string(i + 1), in, cfg.hidden_arch[i]);
    in = cfg.hidden_arch[i];
  }
  linear_pair("q.l" + std::to_string(cfg.hidden_arch.size() + 1), in,
              cfg.num_actions);
  return ps;
}

template <typename T>
Tensor<T> features(const NetConfig& cfg, const nn::ParamView<T>& p,
                   const Tensor<T>& obs) {
  if (obs.rank() != 4 || obs.dim(1) != cfg.channels ||
      obs.dim(2) != cfg.height || obs.dim(3) != cfg.width) {
    throw ShapeError("features: obs must be [B," +
                           std::to_string(cfg.channels) + "," +
                           std::to_string(cfg.height) + "," +
                           std::to_string(cfg.width) + "], got " +
                           core::shape_str(obs.shape()));
  }
  const int b = obs.dim(0);
  int h = cfg.height, w = cfg.width, in_c = cfg.channels;
  Tensor<T> x = obs;
  for (size_t i = 0; i < cfg.conv_filters.size(); ++i) {
    const int oc = cfg.conv_filters[i];
    const std::string stem = "enc.c" + std::to_string(i + 1);
    const auto g = core::same_conv_geom(b, in_c, h, w, oc, 3, 1);
    x = core::relu(core::conv2d_bias(x, p[stem + ".w"], p[stem + ".b"], g));
    if (i + 1 < cfg.conv_filters.size()) {
      x = core::maxpool2(x);
      h /= 2;
      w /= 2;
    }
    in_c = oc;
  }
  return core::reshape(x, {b, cfg.feature_dim()});
}

template <typename T>
Tensor<T> gvf_values(const NetConfig& cfg, const nn::ParamView<T>& p,
                     const Tensor<T>& phi) {
  if (!cfg.has_gvfs()) throw ConfigError("gvf_values: no GVF heads configured");
  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<size_t>(cfg.num_gvfs));
  for (int k = 0; k < cfg.num_gvfs; ++k) {
    const std::string stem = "gvf." + std::to_string(k);
    auto h = core::relu(
        core::linear(phi, p[stem + ".l1.w"], p[stem + ".l1.b"]));
    heads.push_back(core::linear(h, p[stem + ".l2.w"], p[stem + ".l2.b"]));
  }
  return core::concat_cols(heads);
}

template <typename T>
Tensor<T> fuse(const NetConfig& cfg, const nn::ParamView<T>& p,
               const Tensor<T>& v, const Tensor<T>& phi) {
  Tensor<T> cat;
  if (cfg.fused()) {
    auto psi = core::linear(v, p["proj.w"], p["proj.b"]);
    cat = core::concat_cols<T>({psi, phi});
  } else {
    cat = phi;
  }
  if (!cfg.layer_norm) return cat;
  return core::layer_norm(cat, p["ln.g"], p["ln.b"]);
}

template <typename T>
Tensor<T> q_values(const NetConfig& cfg, const nn::ParamView<T>& p,
                   const Tensor<T>& chi) {
  Tensor<T> x = chi;
  for (size_t i = 0; i < cfg.hidden_arch.size(); ++i) {
    const std::string stem = "q.l" + std::to_string(i + 1);
    x = core::relu(core::linear(x, p[stem + ".w"], p[stem + ".b"]));
  }
  const std::string stem = "q.l" + std::to_string(cfg.hidden_arch.size() + 1);
  return core::linear(x, p[stem + ".w"], p[stem + ".b"]);
}

template <typename T>
Tensor<T> q_from_obs(const NetConfig& cfg, const nn::ParamView<T>& p,
                     const Tensor<T>& obs) {
  auto phi = features(cfg, p, obs);
  if (cfg.fused()) {
    auto v = gvf_values(cfg, p, phi);
    return q_values(cfg, p, fuse(cfg, p, v, phi));
  }
  return q_values(cfg, p, fuse(cfg, p, Tensor<T>(), phi));
}

namespace {

// gamma * (1 - done), shaped [B].
template <typename T>
Tensor<T> bootstrap_scale(const Tensor<T>& done, T gamma) {
  return core::scale(core::add_const(core::neg(done), T(1)), gamma);
}

}  // namespace

template <typename T>
Tensor<T> gvf_state_loss(const Tensor<T>& cumulants, const Tensor<T>& v_s,
                         const Tensor<T>& v_next, const Tensor<T>& done,
                         T gamma) {
  const int k = v_s.dim(1);
  auto boot = core::expand_to_cols(bootstrap_scale(done, gamma), k);
  auto target = core::add(cumulants, core::mul(boot, v_next.detach()));
  return core::mse(v_s, target);
}

template <typename T>
Tensor<T> gvf_action_loss(const NetConfig& cfg, const Tensor<T>& cumulants,
                          const Tensor<T>& q_s, const Tensor<T>& q_next,
                          const std::vector<int32_t>& actions,
                          const Tensor<T>& done, T gamma) {
  const int b = q_s.dim(0);
  const int a = cfg.num_actions;
  auto boot = bootstrap_scale(done, gamma);
  auto q_next_const = q_next.detach();
  std::vector<Tensor<T>> preds, targets;
  for (int k = 0; k < cfg.num_gvfs; ++k) {
    auto qk = core::slice_cols(q_s, k * a, a);
    auto qk_next = core::slice_cols(q_next_const, k * a, a);
    preds.push_back(
        core::reshape(core::select_actions(qk, actions), {b, 1}));
    auto bootk = core::mul(boot, core::max_rows(qk_next));
    targets.push_back(core::add(core::slice_cols(cumulants, k, 1),
                                core::reshape(bootk, {b, 1})));
  }
  return core::mse(core::concat_cols(preds), core::concat_cols(targets));
}

template <typename T>
Tensor<T> gvf_loss(const NetConfig& cfg, const Tensor<T>& cumulants,
                   const Tensor<T>& gvf_s, const Tensor<T>& gvf_next,
                   const std::vector<int32_t>& actions, const Tensor<T>& done,
                   T gamma) {
  if (cfg.gvf_kind == GvfKind::action) {
    return gvf_action_loss(cfg, cumulants, gvf_s, gvf_next, actions, done,
                           gamma);
  }
  return gvf_state_loss(cumulants, gvf_s, gvf_next, done, gamma);
}

template <typename T>
Tensor<T> ddqn_loss(const Tensor<T>& q_s, const Tensor<T>& q_next_online,
                    const Tensor<T>& q_next_target,
                    const std::vector<int32_t>& actions,
                    const Tensor<T>& rewards, const Tensor<T>& done, T gamma) {
  const auto greedy = core::argmax_rows(q_next_online);
  auto qt = core::select_actions(q_next_target.detach(), greedy);
  auto y = core::add(rewards, core::mul(bootstrap_scale(done, gamma), qt));
  auto qa = core::select_actions(q_s, actions);
  return core::mse(qa, y.detach());
}

template <typename T>
Tensor<T> obs_to_tensor(const std::vector<const env::Image*>& frames) {
  if (frames.empty()) throw ShapeError("obs_to_tensor: empty batch");
  const int b = static_cast<int>(frames.size());
  const int h = frames[0]->h, w = frames[0]->w;
  std::vector<T> data(static_cast<size_t>(b) * 3 * h * w);
  for (int i = 0; i < b; ++i) {
    const env::Image& img = *frames[static_cast<size_t>(i)];
    if (img.h != h || img.w != w ||
        img.rgb.size() != static_cast<size_t>(h) * w * 3) {
      throw ShapeError("obs_to_tensor: inconsistent frame sizes");
    }
    T* dst = data.data() + static_cast<size_t>(i) * 3 * h * w;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          dst[(static_cast<size_t>(c) * h + y) * w + x] =
              static_cast<T>(img.rgb[(static_cast<size_t>(y) * w + x) * 3 +
                                     c]) /
              T(255);
        }
      }
    }
  }
  return Tensor<T>::from({b, 3, h, w}, std::move(data));
}

#define OCGVF_INSTANTIATE_AGENT(T)                                            \
  template nn::ParamSet<T> init_agent_params<T>(const NetConfig&,             \
                                                core::Rng&);                  \
  template Tensor<T> features<T>(const NetConfig&, const nn::ParamView<T>&,   \
                                 const Tensor<T>&);                           \
  template Tensor<T> gvf_values<T>(const NetConfig&, const nn::ParamView<T>&, \
                                   const Tensor<T>&);                         \
  template Tensor<T> fuse<T>(const NetConfig&, const nn::ParamView<T>&,       \
                             const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> q_values<T>(const NetConfig&, const nn::ParamView<T>&,   \
                                 const Tensor<T>&);                           \
  template Tensor<T> q_from_obs<T>(const NetConfig&, const nn::ParamView<T>&, \
                                   const Tensor<T>&);                         \
  template Tensor<T> gvf_state_loss<T>(const Tensor<T>&, const Tensor<T>&,    \
                                       const Tensor<T>&, const Tensor<T>&,    \
                                       T);                                    \
  template Tensor<T> gvf_action_loss<T>(                                      \
      const NetConfig&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
      const std::vector<int32_t>&, const Tensor<T>&, T);                      \
  template Tensor<T> gvf_loss<T>(const NetConfig&, const Tensor<T>&,          \
                                 const Tensor<T>&, const Tensor<T>&,          \
                                 const std::vector<int32_t>&,                 \
                                 const Tensor<T>&, T);                        \
  template Tensor<T> ddqn_loss<T>(const Tensor<T>&, const Tensor<T>&,         \
                                  const Tensor<T>&,                           \
                                  const std::vector<int32_t>&,                \
                                  const Tensor<T>&, const Tensor<T>&, T);     \
  template Tensor<T> obs_to_tensor<T>(const std::vector<const env::Image*>&); \
  template struct DoubleNet<T>;

OCGVF_INSTANTIATE_AGENT(float)
OCGVF_INSTANTIATE_AGENT(double)

}  // namespace ocgvf::agent

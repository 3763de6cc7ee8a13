#include "ocgvf/slots/slot_module.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::slots {

using core::Tensor;

int SlotConfig::broadcast_size() const {
  int prod = 1;
  for (const auto& l : dec_layers) prod *= l.stride;
  return resolution / prod;
}

void SlotConfig::validate() const {
  if (num_slots < 1) throw ConfigError("num_slots must be at least 1");
  if (slot_dim < 1) throw ConfigError("slot_dim must be positive");
  if (num_iterations < 1) throw ConfigError("num_iterations must be positive");
  if (resolution < 1 || channels < 1) {
    throw ConfigError("resolution and channels must be positive");
  }
  if (enc_kernel < 1 || enc_kernel % 2 == 0) {
    throw ConfigError("enc_kernel must be odd");
  }
  if (enc_filters.empty()) throw ConfigError("enc_filters must not be empty");
  for (int f : enc_filters) {
    if (f < 1) throw ConfigError("enc_filters entries must be positive");
  }
  if (dec_layers.empty()) throw ConfigError("dec_layers must not be empty");
  int prod = 1;
  for (const auto& l : dec_layers) {
    if (l.filters < 1 || l.kernel < 1 || l.stride < 1) {
      throw ConfigError("deconv layer fields must be positive");
    }
    prod *= l.stride;
  }
  if (dec_layers.back().filters != channels + 1) {
    throw ConfigError("last deconv must emit channels+1 maps (rgb + alpha)");
  }
  if (resolution % prod != 0) {
    throw ConfigError("decoder strides must divide the resolution");
  }
  if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (learning_rate <= 0) throw ConfigError("learning_rate must be positive");
  if (num_train_steps < 0) {
    throw ConfigError("num_train_steps must be non-negative");
  }
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (decay_steps < 1) throw ConfigError("decay_steps must be positive");
  if (decay_rate <= 0 || decay_rate > 1) {
    throw ConfigError("decay_rate must be in (0, 1]");
  }
}

double slot_lr(const SlotConfig& cfg, int64_t step) {
  if (step < cfg.warmup_steps) {
    return cfg.learning_rate * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_steps);
  }
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cfg.decay_steps);
  return cfg.learning_rate * std::pow(cfg.decay_rate, t);
}

namespace {

// Four linear ramps over the grid: y, x, 1-y, 1-x in [0, 1].
template <typename T>
Tensor<T> pos_grid(int g) {
  const int64_t n = static_cast<int64_t>(g) * g;
  std::vector<T> v(4 * n);
  for (int r = 0; r < g; ++r) {
    for (int c = 0; c < g; ++c) {
      const T y = g > 1 ? T(r) / T(g - 1) : T(0);
      const T x = g > 1 ? T(c) / T(g - 1) : T(0);
      const int64_t p = static_cast<int64_t>(r) * g + c;
      v[0 * n + p] = y;
      v[1 * n + p] = x;
      v[2 * n + p] = T(1) - y;
      v[3 * n + p] = T(1) - x;
    }
  }
  return Tensor<T>::from({4, static_cast<int>(n)}, std::move(v));
}

template <typename T>
std::vector<Tensor<T>> build_params(const SlotConfig& cfg, core::Rng& rng,
                                    nn::ParamSet<T>& ps) {
  cfg.validate();
  const int k = cfg.enc_kernel;
  const int d = cfg.slot_dim;
  int ic = cfg.channels;
  for (size_t i = 0; i < cfg.enc_filters.size(); ++i) {
    const int oc = cfg.enc_filters[i];
    const std::string stem = "sa.enc.c" + std::to_string(i + 1);
    ps.add(stem + ".w", nn::fanin_uniform<T>(rng, {oc, ic, k, k},
                                             static_cast<int64_t>(ic) * k * k));
    ps.add(stem + ".b", Tensor<T>::zeros({oc}));
    ic = oc;
  }
  const int c_in = cfg.input_channels();
  ps.add("sa.pos_enc.w", nn::fanin_uniform<T>(rng, {4, c_in}, 4));
  ps.add("sa.pos_enc.b", Tensor<T>::zeros({c_in}));
  ps.add("sa.norm_in.g", Tensor<T>::ones({c_in}));
  ps.add("sa.norm_in.b", Tensor<T>::zeros({c_in}));
  ps.add("sa.attn.q", nn::fanin_uniform<T>(rng, {d, d}, d));
  ps.add("sa.attn.k", nn::fanin_uniform<T>(rng, {c_in, d}, c_in));
  ps.add("sa.attn.v", nn::fanin_uniform<T>(rng, {c_in, d}, c_in));
  ps.add("sa.norm_slots.g", Tensor<T>::ones({d}));
  ps.add("sa.norm_slots.b", Tensor<T>::zeros({d}));
  for (const char* gate : {"r", "z", "n"}) {
    const std::string g(gate);
    ps.add("sa.gru.wx" + g, nn::fanin_uniform<T>(rng, {d, d}, d));
    ps.add("sa.gru.wh" + g, nn::fanin_uniform<T>(rng, {d, d}, d));
  }
  ps.add("sa.gru.br", Tensor<T>::zeros({d}));
  ps.add("sa.gru.bz", Tensor<T>::zeros({d}));
  ps.add("sa.gru.bnx", Tensor<T>::zeros({d}));
  ps.add("sa.gru.bnh", Tensor<T>::zeros({d}));
  ps.add("sa.norm_mlp.g", Tensor<T>::ones({d}));
  ps.add("sa.norm_mlp.b", Tensor<T>::zeros({d}));
  ps.add("sa.mlp.l1.w", nn::fanin_uniform<T>(rng, {d, cfg.mlp_hidden}, d));
  ps.add("sa.mlp.l1.b", Tensor<T>::zeros({cfg.mlp_hidden}));
  ps.add("sa.mlp.l2.w",
         nn::fanin_uniform<T>(rng, {cfg.mlp_hidden, d}, cfg.mlp_hidden));
  ps.add("sa.mlp.l2.b", Tensor<T>::zeros({d}));
  ps.add("sa.pos_dec.w", nn::fanin_uniform<T>(rng, {4, d}, 4));
  ps.add("sa.pos_dec.b", Tensor<T>::zeros({d}));
  int ci = d;
  for (size_t i = 0; i < cfg.dec_layers.size(); ++i) {
    const auto& l = cfg.dec_layers[i];
    const std::string stem = "sa.dec.t" + std::to_string(i + 1);
    ps.add(stem + ".w",
           nn::fanin_uniform<T>(rng, {ci, l.filters, l.kernel, l.kernel},
                                static_cast<int64_t>(ci) * l.kernel * l.kernel));
    ps.add(stem + ".b", Tensor<T>::zeros({l.filters}));
    ci = l.filters;
  }
  if (cfg.learned_init) {
    ps.add("sa.init.slots",
           Tensor<T>::normal({cfg.num_slots, d}, rng, T(0), T(1)));
  } else {
    ps.add("sa.init.mu", Tensor<T>::normal({d}, rng, T(0), T(1)));
    ps.add("sa.init.log_sigma", Tensor<T>::zeros({d}));
  }
  return ps.tensors();
}

}  // namespace

template <typename T>
SlotModule<T>::SlotModule(const SlotConfig& cfg, core::Rng& rng)
    : cfg_(cfg),
      opt_(build_params(cfg, rng, ps_), nn::AdamConfig{cfg.learning_rate}) {}

template <typename T>
Tensor<T> SlotModule<T>::pos_embed(const Tensor<T>& w, const Tensor<T>& b,
                                   int grid, int batch) const {
  auto e = core::add(core::matmul(core::transpose(w), pos_grid<T>(grid)),
                     core::expand_to_cols(b, grid * grid));
  return core::batch_bcast(core::reshape(e, {w.dim(1), grid, grid}), batch);
}

template <typename T>
Tensor<T> SlotModule<T>::encode(const Tensor<T>& images) const {
  const int r = cfg_.resolution;
  if (images.rank() != 4 || images.dim(1) != cfg_.channels ||
      images.dim(2) != r || images.dim(3) != r) {
    throw ShapeError("encode: expected [B," + std::to_string(cfg_.channels) +
                     "," + std::to_string(r) + "," + std::to_string(r) + "]");
  }
  const int b = images.dim(0);
  Tensor<T> x = images;
  int ic = cfg_.channels;
  for (size_t i = 0; i < cfg_.enc_filters.size(); ++i) {
    const int oc = cfg_.enc_filters[i];
    const std::string stem = "sa.enc.c" + std::to_string(i + 1);
    const auto g = core::same_conv_geom(b, ic, r, r, oc, cfg_.enc_kernel, 1);
    x = core::relu(
        core::conv2d_bias(x, ps_.at(stem + ".w"), ps_.at(stem + ".b"), g));
    ic = oc;
  }
  x = core::add(x, pos_embed(ps_.at("sa.pos_enc.w"), ps_.at("sa.pos_enc.b"), r,
                             b));
  return core::nchw_to_nlc(x);
}

template <typename T>
Tensor<T> SlotModule<T>::initial_slots(int batch, core::Rng* rng) const {
  const int k = cfg_.num_slots, d = cfg_.slot_dim;
  if (batch < 1) throw ConfigError("initial_slots: batch must be positive");
  if (cfg_.learned_init) {
    return core::batch_bcast(ps_.at("sa.init.slots"), batch);
  }
  if (rng == nullptr) {
    throw ConfigError("initial_slots: sampled init needs an rng");
  }
  auto eps = Tensor<T>::normal({batch * k, d}, *rng, T(0), T(1));
  auto mu = core::expand_to_rows(ps_.at("sa.init.mu"), batch * k);
  auto sigma = core::expand_to_rows(core::exp(ps_.at("sa.init.log_sigma")),
                                    batch * k);
  return core::reshape(core::add(mu, core::mul(sigma, eps)), {batch, k, d});
}

template <typename T>
Tensor<T> SlotModule<T>::iterate(const Tensor<T>& features,
                                 const Tensor<T>& init_slots) const {
  const int c_in = cfg_.input_channels(), d = cfg_.slot_dim;
  if (features.rank() != 3 || features.dim(2) != c_in) {
    throw ShapeError("iterate: features must be [B,N," +
                     std::to_string(c_in) + "]");
  }
  if (init_slots.rank() != 3 || init_slots.dim(0) != features.dim(0) ||
      init_slots.dim(2) != d) {
    throw ShapeError("iterate: init_slots must be [B,K," + std::to_string(d) +
                     "]");
  }
  const int b = features.dim(0), n = features.dim(1), k = init_slots.dim(1);
  auto x2 = core::layer_norm(core::reshape(features, {b * n, c_in}),
                             ps_.at("sa.norm_in.g"), ps_.at("sa.norm_in.b"));
  auto keys = core::reshape(core::matmul(x2, ps_.at("sa.attn.k")), {b, n, d});
  auto vals = core::reshape(core::matmul(x2, ps_.at("sa.attn.v")), {b, n, d});
  const T inv_sqrt_d = T(1) / std::sqrt(T(d));

  Tensor<T> slots = init_slots;
  for (int it = 0; it < cfg_.num_iterations; ++it) {
    auto prev = core::reshape(slots, {b * k, d});
    auto q2 = core::matmul(core::layer_norm(prev, ps_.at("sa.norm_slots.g"),
                                            ps_.at("sa.norm_slots.b")),
                           ps_.at("sa.attn.q"));
    auto q3 = core::reshape(core::scale(q2, inv_sqrt_d), {b, k, d});
    auto attn = core::softmax_axis1(core::bmm_nt(q3, keys));  // over slots
    auto a2 = core::reshape(attn, {b * k, n});
    auto denom = core::expand_to_cols(
        core::add_const(core::row_sum(a2), T(cfg_.attn_eps)), n);
    auto w3 = core::reshape(core::div(a2, denom), {b, k, n});
    auto upd = core::reshape(core::bmm(w3, vals), {b * k, d});

    auto r = core::sigmoid(
        core::add(core::linear(upd, ps_.at("sa.gru.wxr"), ps_.at("sa.gru.br")),
                  core::matmul(prev, ps_.at("sa.gru.whr"))));
    auto z = core::sigmoid(
        core::add(core::linear(upd, ps_.at("sa.gru.wxz"), ps_.at("sa.gru.bz")),
                  core::matmul(prev, ps_.at("sa.gru.whz"))));
    auto cand = core::tanh(core::add(
        core::linear(upd, ps_.at("sa.gru.wxn"), ps_.at("sa.gru.bnx")),
        core::mul(r, core::linear(prev, ps_.at("sa.gru.whn"),
                                  ps_.at("sa.gru.bnh")))));
    auto h = core::add(core::sub(cand, core::mul(z, cand)),
                       core::mul(z, prev));

    auto m = core::layer_norm(h, ps_.at("sa.norm_mlp.g"),
                              ps_.at("sa.norm_mlp.b"));
    auto hid = core::relu(
        core::linear(m, ps_.at("sa.mlp.l1.w"), ps_.at("sa.mlp.l1.b")));
    h = core::add(h,
                  core::linear(hid, ps_.at("sa.mlp.l2.w"), ps_.at("sa.mlp.l2.b")));
    slots = core::reshape(h, {b, k, d});
  }
  return slots;
}

template <typename T>
SlotDecodeOut<T> SlotModule<T>::decode(const Tensor<T>& slots) const {
  const int d = cfg_.slot_dim;
  if (slots.rank() != 3 || slots.dim(2) != d) {
    throw ShapeError("decode: slots must be [B,K," + std::to_string(d) + "]");
  }
  const int b = slots.dim(0), k = slots.dim(1), bk = b * k;
  const int g = cfg_.broadcast_size();
  auto x = core::spatial_broadcast(core::reshape(slots, {bk, d}), g, g);
  x = core::add(x, pos_embed(ps_.at("sa.pos_dec.w"), ps_.at("sa.pos_dec.b"), g,
                             bk));
  int ci = d, hs = g;
  for (size_t i = 0; i < cfg_.dec_layers.size(); ++i) {
    const auto& l = cfg_.dec_layers[i];
    const int ho = hs * l.stride;
    const auto geom = core::same_conv_geom(bk, l.filters, ho, ho, ci,
                                           l.kernel, l.stride);
    const std::string stem = "sa.dec.t" + std::to_string(i + 1);
    x = core::add(core::conv2d_input_grad(x, ps_.at(stem + ".w"), geom),
                  core::channel_bcast(ps_.at(stem + ".b"), bk, ho, ho));
    if (i + 1 < cfg_.dec_layers.size()) x = core::relu(x);
    ci = l.filters;
    hs = ho;
  }

  const int r = cfg_.resolution, c = cfg_.channels, n = r * r;
  auto flat = core::reshape(x, {bk, (c + 1) * n});
  auto rgb = core::slice_cols(flat, 0, c * n);
  auto alpha = core::slice_cols(flat, c * n, n);
  auto masks = core::softmax_axis1(core::reshape(alpha, {b, k, n}));

  std::vector<int32_t> idx(static_cast<size_t>(bk) * c);
  for (int i = 0; i < bk; ++i) {
    for (int ch = 0; ch < c; ++ch) idx[static_cast<size_t>(i) * c + ch] = i;
  }
  auto mrep = core::gather_rows(core::reshape(masks, {bk, n}), idx);
  auto weighted = core::mul(core::reshape(rgb, {bk * c, n}), mrep);
  auto recon = core::reshape(
      core::sum_axis1(core::reshape(weighted, {b, k, c * n})), {b, c, r, r});

  SlotDecodeOut<T> out;
  out.recon = recon;
  out.masks = core::reshape(masks, {b, k, r, r});
  out.rgb = core::reshape(rgb, {b, k, c, r, r});
  return out;
}

template <typename T>
Tensor<T> SlotModule<T>::slots_for(const Tensor<T>& images,
                                   core::Rng* rng) const {
  return iterate(encode(images), initial_slots(images.dim(0), rng));
}

template <typename T>
Tensor<T> SlotModule<T>::reconstruction_loss(const Tensor<T>& images,
                                             core::Rng* rng) const {
  return core::mse(decode(slots_for(images, rng)).recon, images);
}

template <typename T>
T SlotModule<T>::train_step(const Tensor<T>& images, core::Rng* rng) {
  if (exhausted()) {
    throw std::logic_error("slot module is frozen: training budget exhausted");
  }
  opt_.set_lr(slot_lr(cfg_, step_));
  auto loss = reconstruction_loss(images, rng);
  opt_.step(core::grad(loss, ps_.tensors()));
  ++step_;
  return loss.at({0});
}

template <typename T>
void SlotModule<T>::save(std::ostream& os) const {
  core::write_string(os, "ocgvf.slots.v1");
  core::write_i64(os, cfg_.num_slots);
  core::write_i64(os, cfg_.slot_dim);
  core::write_i64(os, cfg_.num_iterations);
  core::write_i64(os, cfg_.resolution);
  core::write_i64(os, cfg_.learned_init ? 1 : 0);
  ps_.save(os);
  opt_.save(os);
  core::write_i64(os, step_);
}

template <typename T>
void SlotModule<T>::load(std::istream& is) {
  if (core::read_string(is) != "ocgvf.slots.v1") {
    throw ConfigError("slot checkpoint: bad header");
  }
  const bool match = core::read_i64(is) == cfg_.num_slots &&
                     core::read_i64(is) == cfg_.slot_dim &&
                     core::read_i64(is) == cfg_.num_iterations &&
                     core::read_i64(is) == cfg_.resolution &&
                     core::read_i64(is) == (cfg_.learned_init ? 1 : 0);
  if (!match) {
    throw ConfigError("slot checkpoint: configuration mismatch");
  }
  ps_.load(is);
  opt_.load(is);
  step_ = core::read_i64(is);
}

template class SlotModule<float>;
template class SlotModule<double>;

}  // namespace ocgvf::slots

#include "ocgvf/qnet/question_network.hpp"

#include <string>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/serialize.hpp"

namespace ocgvf::qnet {

using core::Tensor;

void QuestionConfig::validate() const {
  if (num_gvfs < 1) throw ConfigError("num_gvfs must be positive");
  if (hidden < 1) throw ConfigError("hidden must be positive");
  if (kind == QuestionKind::slots) {
    if (slot_dim < 1) throw ConfigError("slot_dim must be positive");
    return;
  }
  if (height < 4 || width < 4 || height % 4 != 0 || width % 4 != 0) {
    throw ConfigError("conv question net needs dimensions divisible by 4");
  }
  if (channels < 1) throw ConfigError("channels must be positive");
  if (conv_filters.size() != 3) {
    throw ConfigError("conv question net expects three conv layers");
  }
  for (int f : conv_filters) {
    if (f < 1) throw ConfigError("conv_filters entries must be positive");
  }
}

template <typename T>
QuestionNetwork<T>::QuestionNetwork(const QuestionConfig& cfg, core::Rng& rng)
    : cfg_(cfg) {
  cfg.validate();
  if (cfg.kind == QuestionKind::slots) {
    ps_.add("eta.l1.w",
            nn::fanin_uniform<T>(rng, {cfg.slot_dim, cfg.hidden},
                                 cfg.slot_dim));
    ps_.add("eta.l1.b", Tensor<T>::zeros({cfg.hidden}));
    ps_.add("eta.l2.w", nn::fanin_uniform<T>(rng, {cfg.hidden, 1}, cfg.hidden));
    ps_.add("eta.l2.b", Tensor<T>::zeros({1}));
    return;
  }
  int ic = cfg.channels;
  for (size_t i = 0; i < cfg.conv_filters.size(); ++i) {
    const int oc = cfg.conv_filters[i];
    const std::string stem = "eta.c" + std::to_string(i + 1);
    ps_.add(stem + ".w", nn::fanin_uniform<T>(rng, {oc, ic, 3, 3},
                                              static_cast<int64_t>(ic) * 9));
    ps_.add(stem + ".b", Tensor<T>::zeros({oc}));
    ic = oc;
  }
  ps_.add("eta.l1.w", nn::fanin_uniform<T>(rng, {cfg.feature_dim(), cfg.hidden},
                                           cfg.feature_dim()));
  ps_.add("eta.l1.b", Tensor<T>::zeros({cfg.hidden}));
  ps_.add("eta.l2.w",
          nn::fanin_uniform<T>(rng, {cfg.hidden, cfg.num_gvfs}, cfg.hidden));
  ps_.add("eta.l2.b", Tensor<T>::zeros({cfg.num_gvfs}));
}

template <typename T>
Tensor<T> QuestionNetwork<T>::cumulants_from_slots(
    const Tensor<T>& slots) const {
  if (cfg_.kind != QuestionKind::slots) {
    throw ConfigError("cumulants_from_slots: conv-kind question network");
  }
  if (slots.rank() != 3 || slots.dim(1) != cfg_.num_gvfs ||
      slots.dim(2) != cfg_.slot_dim) {
    throw ShapeError("cumulants_from_slots: slots must be [B," +
                     std::to_string(cfg_.num_gvfs) + "," +
                     std::to_string(cfg_.slot_dim) + "]");
  }
  const int b = slots.dim(0), k = slots.dim(1);
  auto flat = core::reshape(slots, {b * k, cfg_.slot_dim});
  auto h = core::relu(
      core::linear(flat, ps_.at("eta.l1.w"), ps_.at("eta.l1.b")));
  auto c = core::tanh(core::linear(h, ps_.at("eta.l2.w"), ps_.at("eta.l2.b")));
  return core::reshape(c, {b, k});
}

template <typename T>
Tensor<T> QuestionNetwork<T>::cumulants_from_obs(const Tensor<T>& obs) const {
  if (cfg_.kind != QuestionKind::conv) {
    throw ConfigError("cumulants_from_obs: slots-kind question network");
  }
  if (obs.rank() != 4 || obs.dim(1) != cfg_.channels ||
      obs.dim(2) != cfg_.height || obs.dim(3) != cfg_.width) {
    throw ShapeError("cumulants_from_obs: expected [B," +
                     std::to_string(cfg_.channels) + "," +
                     std::to_string(cfg_.height) + "," +
                     std::to_string(cfg_.width) + "]");
  }
  const int b = obs.dim(0);
  int h = cfg_.height, w = cfg_.width, ic = cfg_.channels;
  Tensor<T> x = obs;
  for (size_t i = 0; i < cfg_.conv_filters.size(); ++i) {
    const int oc = cfg_.conv_filters[i];
    const std::string stem = "eta.c" + std::to_string(i + 1);
    const auto g = core::same_conv_geom(b, ic, h, w, oc, 3, 1);
    x = core::relu(
        core::conv2d_bias(x, ps_.at(stem + ".w"), ps_.at(stem + ".b"), g));
    if (i + 1 < cfg_.conv_filters.size()) {
      x = core::maxpool2(x);
      h /= 2;
      w /= 2;
    }
    ic = oc;
  }
  auto phi = core::reshape(x, {b, cfg_.feature_dim()});
  auto hid = core::relu(
      core::linear(phi, ps_.at("eta.l1.w"), ps_.at("eta.l1.b")));
  return core::tanh(
      core::linear(hid, ps_.at("eta.l2.w"), ps_.at("eta.l2.b")));
}

template <typename T>
Tensor<T> QuestionNetwork<T>::cumulants(
    const Tensor<T>& obs, const slots::SlotModule<T>* slot_module) const {
  if (cfg_.kind == QuestionKind::conv) return cumulants_from_obs(obs);
  if (slot_module == nullptr) {
    throw ConfigError("cumulants: slots-kind question network needs a slot "
                      "module");
  }
  Tensor<T> slots;
  {
    core::NoGradGuard<T> off;
    slots = slot_module->slots_for(obs);
  }
  return cumulants_from_slots(slots);
}

template <typename T>
void QuestionNetwork<T>::save(std::ostream& os) const {
  core::write_string(os, "ocgvf.qnet.v1");
  core::write_i64(os, cfg_.kind == QuestionKind::slots ? 0 : 1);
  core::write_i64(os, cfg_.num_gvfs);
  ps_.save(os);
}

template <typename T>
void QuestionNetwork<T>::load(std::istream& is) {
  if (core::read_string(is) != "ocgvf.qnet.v1") {
    throw ConfigError("question checkpoint: bad header");
  }
  const int64_t kind = core::read_i64(is);
  const bool match = kind == (cfg_.kind == QuestionKind::slots ? 0 : 1) &&
                     core::read_i64(is) == cfg_.num_gvfs;
  if (!match) throw ConfigError("question checkpoint: configuration mismatch");
  ps_.load(is);
}

template class QuestionNetwork<float>;
template class QuestionNetwork<double>;

}  // namespace ocgvf::qnet

#pragma once

#include <iostream>
#include <vector>

#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/tensor.hpp"
#include "ocgvf/nn/param.hpp"
#include "ocgvf/slots/slot_module.hpp"

// Question network: maps state to K cumulants, the reward signals the GVF
// heads learn to predict. Its parameters (eta) are meta-learned: the control
// loss is differentiated through the inner GVF updates back to eta. Two
// body kinds: an MLP applied to each slot vector (the object-centric
// architecture) and a conv encoder on raw observations (the discovered-aux
// baseline, where eta covers the whole body).

namespace ocgvf::qnet {

enum class QuestionKind { slots, conv };

struct QuestionConfig {
  QuestionKind kind = QuestionKind::slots;
  int num_gvfs = 5;
  int hidden = 32;
  int slot_dim = 64;  // slots kind
  int height = 32, width = 32, channels = 3;  // conv kind
  std::vector<int> conv_filters = {16, 32, 64};

  int feature_dim() const {
    return (height / 4) * (width / 4) * conv_filters.back();
  }
  void validate() const;
};

template <typename T>
class QuestionNetwork {
 public:
  QuestionNetwork(const QuestionConfig& cfg, core::Rng& rng);

  // [B, K, slot_dim] -> [B, K], tanh-squashed. One MLP shared across slots,
  // applied per row, so cumulant k depends on slot k only. Callers pass
  // slots as constants; gradients flow to eta alone.
  core::Tensor<T> cumulants_from_slots(const core::Tensor<T>& slots) const;

  // [B, C, H, W] -> [B, K], tanh-squashed (conv kind).
  core::Tensor<T> cumulants_from_obs(const core::Tensor<T>& obs) const;

  // Dispatch on kind. The slots kind runs the slot module with gradients
  // off: object discovery trains on reconstruction only, so the slot
  // parameters are constants here.
  core::Tensor<T> cumulants(const core::Tensor<T>& obs,
                            const slots::SlotModule<T>* slot_module) const;

  const QuestionConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  QuestionConfig cfg_;
  nn::ParamSet<T> ps_;
};

}  // namespace ocgvf::qnet

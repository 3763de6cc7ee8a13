#pragma once

#include <cstdint>
#include <iostream>
#include <vector>

#include "ocgvf/core/ops.hpp"
#include "ocgvf/core/rng.hpp"
#include "ocgvf/core/tensor.hpp"
#include "ocgvf/nn/adam.hpp"
#include "ocgvf/nn/param.hpp"

// Slot-attention autoencoder: competitive attention binds image positions to
// a fixed number of slot vectors, and a spatial-broadcast decoder with
// alpha-mask mixing reconstructs the frame. Trained on reconstruction alone;
// the agent consumes the slot vectors as object-centric state.

namespace ocgvf::slots {

struct DeconvSpec {
  int filters = 0;
  int kernel = 3;
  int stride = 1;
};

struct SlotConfig {
  int num_slots = 5;
  int slot_dim = 64;
  int num_iterations = 3;
  int resolution = 32;
  int channels = 3;
  int enc_kernel = 3;
  std::vector<int> enc_filters = {32, 32, 64};
  std::vector<DeconvSpec> dec_layers = {
      {64, 3, 2}, {32, 3, 2}, {32, 3, 1}, {4, 3, 1}};
  int mlp_hidden = 128;
  // Fixed learned per-slot init vectors keep slot identity stable across
  // frames. With learned_init=false the slots are sampled from a learned
  // Gaussian each forward pass.
  bool learned_init = true;
  double attn_eps = 1e-8;

  int batch_size = 16;
  double learning_rate = 4e-4;
  int64_t num_train_steps = 200000;
  int64_t warmup_steps = 10000;
  double decay_rate = 0.5;
  int64_t decay_steps = 100000;

  int input_channels() const { return enc_filters.back(); }
  int num_positions() const { return resolution * resolution; }
  int broadcast_size() const;  // decoder start grid, resolution / prod(strides)
  void validate() const;
};

// Linear warmup from zero, then exponential decay with a continuous exponent.
double slot_lr(const SlotConfig& cfg, int64_t step);

template <typename T>
struct SlotDecodeOut {
  core::Tensor<T> recon;  // [B, C, R, R]
  core::Tensor<T> masks;  // [B, K, R, R], softmax over K per pixel
  core::Tensor<T> rgb;    // [B, K, C, R, R], per-slot pre-mix output
};

template <typename T>
class SlotModule {
 public:
  SlotModule(const SlotConfig& cfg, core::Rng& rng);

  // [B, C, R, R] -> [B, R*R, input_channels]: conv stack plus an additive
  // linear embedding of the position grid.
  core::Tensor<T> encode(const core::Tensor<T>& images) const;

  // [B, K, slot_dim]. Learned mode ignores rng; sampled mode requires it.
  core::Tensor<T> initial_slots(int batch, core::Rng* rng) const;

  // Runs num_iterations rounds of competitive attention over the position
  // vectors. Permuting the rows of init_slots permutes the output rows
  // bitwise identically.
  core::Tensor<T> iterate(const core::Tensor<T>& features,
                          const core::Tensor<T>& init_slots) const;

  SlotDecodeOut<T> decode(const core::Tensor<T>& slots) const;

  // encode + initial_slots + iterate. rng may be null in learned-init mode.
  core::Tensor<T> slots_for(const core::Tensor<T>& images,
                            core::Rng* rng = nullptr) const;

  core::Tensor<T> reconstruction_loss(const core::Tensor<T>& images,
                                      core::Rng* rng = nullptr) const;

  // One optimizer step on the reconstruction loss; returns the loss value.
  // Throws once the training budget is exhausted (the module is frozen).
  T train_step(const core::Tensor<T>& images, core::Rng* rng = nullptr);

  double current_lr() const { return slot_lr(cfg_, step_); }
  int64_t steps_done() const { return step_; }
  bool exhausted() const { return step_ >= cfg_.num_train_steps; }

  const SlotConfig& config() const { return cfg_; }
  nn::ParamSet<T>& params() { return ps_; }
  const nn::ParamSet<T>& params() const { return ps_; }

  void save(std::ostream& os) const;
  void load(std::istream& is);

 private:
  core::Tensor<T> pos_embed(const core::Tensor<T>& w, const core::Tensor<T>& b,
                            int grid, int batch) const;

  SlotConfig cfg_;
  nn::ParamSet<T> ps_;
  nn::Adam<T> opt_;
  int64_t step_ = 0;
};

}  // namespace ocgvf::slots

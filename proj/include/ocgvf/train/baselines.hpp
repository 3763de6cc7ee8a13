#pragma once

#include <string>
#include <vector>

#include "ocgvf/env/registry.hpp"
#include "ocgvf/train/meta_trainer.hpp"

// The comparison ladder: every agent in the experiments is one wiring of the
// same network/trainer stack, addressed by a variant id. A variant decides
// four things: whether GVF predictions are projected into the control
// features, whether the control features are layer-normalized, whether the
// heads predict state or action values, and where the cumulants come from.

namespace ocgvf::train {

enum class VariantId {
  ddqn,
  random_gvf,
  hc_gvf,
  dis_aux_gvf,
  random_gvf_plus,
  hc_gvf_plus,
  dis_aux_gvf_plus,
  oc_gvf,
  oc_gvf_no_features,
  oc_gvf_no_layernorm,
  oc_gvf_action_values,
};

// What drives the GVF heads, before the random mode is resolved.
enum class VariantCumulants { none, meta_slots, meta_conv, random, handcrafted };

// The two readings of "random cumulants": a frozen randomly initialized
// question network (deterministic per state, default: a value function of
// an i.i.d. target is just its mean), or fresh U[-1,1] draws per query.
enum class RandomCumulantMode { fixed_random_net, iid_uniform };

struct AgentVariant {
  VariantId id{};
  bool use_features = false;  // project GVF outputs into the control features
  bool use_layernorm = false;
  agent::GvfKind gvf_kind = agent::GvfKind::state;
  VariantCumulants cumulants = VariantCumulants::none;
};

const std::vector<std::string>& variant_ids();
std::string to_string(VariantId id);
VariantId parse_variant(const std::string& id);  // ConfigError lists the ids
AgentVariant variant(VariantId id);

// Everything make_agent needs besides the variant. Fields the variant owns
// (GVF count on/off, fusion, layer norm, head kind, cumulant source, slot
// count, tracked prefixes, question wiring) are overwritten; the rest pass
// through.
struct BaselineConfig {
  env::EnvSpec env;
  agent::NetConfig net;    // num_gvfs doubles as K for GVF-bearing variants
  TrainerConfig trainer;
  slots::SlotConfig slots;  // meta_slots variants only
  int question_hidden = 32;
  RandomCumulantMode random_mode = RandomCumulantMode::fixed_random_net;
  uint64_t seed = 0;
};

// Wires a TrainSetup for the variant. Conv question networks reuse the main
// encoder topology with separate weights. Unfused meta variants track the
// encoder in the meta path: without fusion the shared representation is the
// only route from the question network to the control loss.
TrainSetup make_agent(const AgentVariant& v, const BaselineConfig& cfg);
TrainSetup make_agent(VariantId id, const BaselineConfig& cfg);

}  // namespace ocgvf::train

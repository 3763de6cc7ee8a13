#include "ocgvf/train/baselines.hpp"

#include <algorithm>

#include "ocgvf/core/errors.hpp"

namespace ocgvf::train {

namespace {

struct VariantRow {
  VariantId id;
  const char* name;
  bool feats;
  bool ln;
  agent::GvfKind kind;
  VariantCumulants cums;
};

const VariantRow kVariants[] = {
    {VariantId::ddqn, "ddqn", false, false, agent::GvfKind::state,
     VariantCumulants::none},
    {VariantId::random_gvf, "random_gvf", false, false, agent::GvfKind::state,
     VariantCumulants::random},
    {VariantId::hc_gvf, "hc_gvf", false, false, agent::GvfKind::state,
     VariantCumulants::handcrafted},
    {VariantId::dis_aux_gvf, "dis_aux_gvf", false, false,
     agent::GvfKind::action, VariantCumulants::meta_conv},
    {VariantId::random_gvf_plus, "random_gvf_plus", true, true,
     agent::GvfKind::state, VariantCumulants::random},
    {VariantId::hc_gvf_plus, "hc_gvf_plus", true, true, agent::GvfKind::state,
     VariantCumulants::handcrafted},
    {VariantId::dis_aux_gvf_plus, "dis_aux_gvf_plus", true, true,
     agent::GvfKind::action, VariantCumulants::meta_conv},
    {VariantId::oc_gvf, "oc_gvf", true, true, agent::GvfKind::state,
     VariantCumulants::meta_slots},
    {VariantId::oc_gvf_no_features, "oc_gvf_no_features", false, false,
     agent::GvfKind::state, VariantCumulants::meta_slots},
    {VariantId::oc_gvf_no_layernorm, "oc_gvf_no_layernorm", true, false,
     agent::GvfKind::state, VariantCumulants::meta_slots},
    {VariantId::oc_gvf_action_values, "oc_gvf_action_values", true, true,
     agent::GvfKind::action, VariantCumulants::meta_slots},
};

const VariantRow& row_for(VariantId id) {
  for (const auto& r : kVariants) {
    if (r.id == id) return r;
  }
  throw ConfigError("unknown variant id");
}

}  // namespace

const std::vector<std::string>& variant_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> out;
    for (const auto& r : kVariants) out.push_back(r.name);
    return out;
  }();
  return ids;
}

std::string to_string(VariantId id) { return row_for(id).name; }

VariantId parse_variant(const std::string& id) {
  for (const auto& r : kVariants) {
    if (id == r.name) return r.id;
  }
  std::string msg = "unknown variant '" + id + "'; valid ids:";
  for (const auto& r : kVariants) msg += std::string(" ") + r.name;
  throw ConfigError(msg);
}

AgentVariant variant(VariantId id) {
  const auto& r = row_for(id);
  AgentVariant v;
  v.id = r.id;
  v.use_features = r.feats;
  v.use_layernorm = r.ln;
  v.gvf_kind = r.kind;
  v.cumulants = r.cums;
  return v;
}

TrainSetup make_agent(const AgentVariant& v, const BaselineConfig& cfg) {
  TrainSetup s;
  s.net = cfg.net;
  s.trainer = cfg.trainer;
  s.seed = cfg.seed;

  const bool has_gvfs = v.cumulants != VariantCumulants::none;
  s.net.num_gvfs = has_gvfs ? cfg.net.num_gvfs : 0;
  s.net.fuse_gvfs = v.use_features;
  s.net.layer_norm = v.use_layernorm;
  s.net.gvf_kind = v.gvf_kind;

  switch (v.cumulants) {
    case VariantCumulants::none:
      s.trainer.cumulant_source = CumulantSource::none;
      break;
    case VariantCumulants::meta_slots:
      s.trainer.cumulant_source = CumulantSource::meta_slots;
      break;
    case VariantCumulants::meta_conv:
      s.trainer.cumulant_source = CumulantSource::meta_conv;
      break;
    case VariantCumulants::random:
      s.trainer.cumulant_source =
          cfg.random_mode == RandomCumulantMode::fixed_random_net
              ? CumulantSource::random_net
              : CumulantSource::iid_uniform;
      break;
    case VariantCumulants::handcrafted:
      if (cfg.env.env_id != "collect_objects") {
        throw ConfigError("variant " + to_string(v.id) +
                          ": handcrafted cumulants read the gridworld's "
                          "privileged state, got env '" +
                          cfg.env.env_id + "'");
      }
      s.trainer.cumulant_source = CumulantSource::handcrafted;
      break;
  }

  if (is_meta_source(s.trainer.cumulant_source)) {
    s.trainer.tracked_prefixes =
        s.net.fused() ? std::vector<std::string>{"gvf.", "proj."}
                      : std::vector<std::string>{"enc.", "gvf."};
  }

  const auto src = s.trainer.cumulant_source;
  if (src == CumulantSource::meta_slots) {
    auto sl = cfg.slots;
    sl.num_slots = s.net.num_gvfs;
    sl.resolution = s.net.height;
    sl.channels = s.net.channels;
    s.slots = sl;
    qnet::QuestionConfig q;
    q.kind = qnet::QuestionKind::slots;
    q.num_gvfs = s.net.num_gvfs;
    q.hidden = cfg.question_hidden;
    q.slot_dim = sl.slot_dim;
    s.question = q;
  } else if (src == CumulantSource::meta_conv ||
             src == CumulantSource::random_net) {
    qnet::QuestionConfig q;
    q.kind = qnet::QuestionKind::conv;
    q.num_gvfs = s.net.num_gvfs;
    q.hidden = cfg.question_hidden;
    q.height = s.net.height;
    q.width = s.net.width;
    q.channels = s.net.channels;
    q.conv_filters = s.net.conv_filters;
    s.question = q;
  }

  const env::EnvSpec spec = cfg.env;
  s.env_factory = [spec] { return env::make_env(spec); };
  return s;
}

TrainSetup make_agent(VariantId id, const BaselineConfig& cfg) {
  return make_agent(variant(id), cfg);
}

}  // namespace ocgvf::train

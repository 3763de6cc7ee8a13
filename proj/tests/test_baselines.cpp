#include <doctest.h>
#include <json.hpp>

#include <algorithm>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/ops.hpp"
#include "ocgvf/train/baselines.hpp"

using ocgvf::core::Tensor;
namespace core = ocgvf::core;
namespace env = ocgvf::env;
namespace agent = ocgvf::agent;
namespace qnet = ocgvf::qnet;
namespace nn = ocgvf::nn;
namespace replay = ocgvf::replay;
namespace train = ocgvf::train;

namespace {

env::Image random_image(core::Rng& rng, int side) {
  env::Image img;
  img.h = side;
  img.w = side;
  img.rgb.resize(static_cast<size_t>(3) * side * side);
  for (auto& b : img.rgb) b = static_cast<uint8_t>(rng.uniform_int(256));
  return img;
}

// Small end-to-end dimensions: a real 32x32 gridworld with skinny networks.
train::BaselineConfig ladder_config(uint64_t seed) {
  train::BaselineConfig cfg;
  cfg.env.env_id = "collect_objects";
  cfg.env.resolution = 32;
  cfg.env.mode = "stationary";
  cfg.env.max_steps = 8;

  cfg.net.height = 32;
  cfg.net.width = 32;
  cfg.net.num_gvfs = 5;
  cfg.net.projection_dim = 4;
  cfg.net.gvf_hidden = 4;
  cfg.net.hidden_arch = {8, 6};
  cfg.net.conv_filters = {4, 4, 4};

  cfg.trainer.batch_size = 2;
  cfg.trainer.warm_start = 2;
  cfg.trainer.unroll_steps = 2;
  cfg.trainer.target_period = 3;
  cfg.trainer.eval_episodes = 1;

  cfg.slots.num_slots = 5;
  cfg.slots.slot_dim = 8;
  cfg.slots.num_iterations = 2;
  cfg.slots.resolution = 32;
  cfg.slots.enc_filters = {6, 6};
  cfg.slots.dec_layers = {{6, 3, 2}, {6, 3, 2}, {4, 3, 1}};
  cfg.slots.mlp_hidden = 8;
  cfg.slots.batch_size = 2;
  cfg.slots.num_train_steps = 1000;
  cfg.slots.warmup_steps = 10;

  cfg.question_hidden = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("variant table pins the published ladder") {
  const auto& ids = train::variant_ids();
  REQUIRE(ids.size() == 11);
  for (const auto& id : ids) {
    CHECK(train::to_string(train::parse_variant(id)) == id);
  }

  const auto oc = train::variant(train::VariantId::oc_gvf);
  CHECK(oc.use_features);
  CHECK(oc.use_layernorm);
  CHECK(oc.gvf_kind == agent::GvfKind::state);
  CHECK(oc.cumulants == train::VariantCumulants::meta_slots);

  const auto dis = train::variant(train::VariantId::dis_aux_gvf);
  CHECK_FALSE(dis.use_features);
  CHECK(dis.gvf_kind == agent::GvfKind::action);
  CHECK(dis.cumulants == train::VariantCumulants::meta_conv);

  const auto dqn = train::variant(train::VariantId::ddqn);
  CHECK_FALSE(dqn.use_features);
  CHECK_FALSE(dqn.use_layernorm);
  CHECK(dqn.cumulants == train::VariantCumulants::none);

  // Each ablation flips exactly one axis of oc_gvf.
  const auto nf = train::variant(train::VariantId::oc_gvf_no_features);
  CHECK_FALSE(nf.use_features);
  CHECK(nf.cumulants == train::VariantCumulants::meta_slots);
  const auto nl = train::variant(train::VariantId::oc_gvf_no_layernorm);
  CHECK(nl.use_features);
  CHECK_FALSE(nl.use_layernorm);
  const auto av = train::variant(train::VariantId::oc_gvf_action_values);
  CHECK(av.gvf_kind == agent::GvfKind::action);

  // The "+" variants differ from their bases only in fusion flags.
  for (auto [base, plus] :
       {std::pair{train::VariantId::random_gvf,
                  train::VariantId::random_gvf_plus},
        std::pair{train::VariantId::hc_gvf, train::VariantId::hc_gvf_plus},
        std::pair{train::VariantId::dis_aux_gvf,
                  train::VariantId::dis_aux_gvf_plus}}) {
    const auto b = train::variant(base);
    const auto p = train::variant(plus);
    CHECK_FALSE(b.use_features);
    CHECK(p.use_features);
    CHECK(p.use_layernorm);
    CHECK(b.gvf_kind == p.gvf_kind);
    CHECK(b.cumulants == p.cumulants);
  }
}

TEST_CASE("unknown variant id error lists the valid ids") {
  try {
    train::parse_variant("dqn_rainbow");
    FAIL("expected ConfigError");
  } catch (const ocgvf::ConfigError& e) {
    const std::string msg = e.what();
    for (const auto& id : train::variant_ids()) {
      CHECK(msg.find(id) != std::string::npos);
    }
  }
}

TEST_CASE("plain control variant carries no prediction machinery") {
  auto s = train::make_agent(train::VariantId::ddqn, ladder_config(3));
  CHECK(s.net.num_gvfs == 0);
  CHECK_FALSE(s.net.layer_norm);
  CHECK_FALSE(s.slots.has_value());
  CHECK_FALSE(s.question.has_value());
  CHECK(s.trainer.cumulant_source == train::CumulantSource::none);

  train::MetaTrainer<float> tr(s);
  for (const auto& name : tr.online().names()) {
    CHECK(name.rfind("gvf.", 0) != 0);
    CHECK(name.rfind("proj.", 0) != 0);
    CHECK(name.rfind("ln.", 0) != 0);
  }
  CHECK_FALSE(tr.is_meta());
}

TEST_CASE("object variant wires one slot and one head per question") {
  auto s = train::make_agent(train::VariantId::oc_gvf, ladder_config(4));
  CHECK(s.net.num_gvfs == 5);
  CHECK(s.net.fuse_gvfs);
  CHECK(s.net.layer_norm);
  REQUIRE(s.slots.has_value());
  CHECK(s.slots->num_slots == 5);
  CHECK(s.slots->resolution == 32);
  REQUIRE(s.question.has_value());
  CHECK(s.question->kind == qnet::QuestionKind::slots);
  CHECK(s.question->num_gvfs == 5);
  CHECK(s.question->slot_dim == s.slots->slot_dim);
  CHECK((s.trainer.tracked_prefixes ==
         std::vector<std::string>{"gvf.", "proj."}));
}

TEST_CASE("discovered-aux variant puts a conv question on raw frames") {
  auto s = train::make_agent(train::VariantId::dis_aux_gvf, ladder_config(5));
  CHECK_FALSE(s.net.fuse_gvfs);
  CHECK(s.net.gvf_kind == agent::GvfKind::action);
  CHECK_FALSE(s.slots.has_value());
  REQUIRE(s.question.has_value());
  CHECK(s.question->kind == qnet::QuestionKind::conv);
  CHECK(s.question->conv_filters == s.net.conv_filters);
  CHECK(s.question->height == s.net.height);
  // Without fusion the encoder is the only route from eta to the control
  // loss, so it must be rebuilt in the meta path.
  CHECK((s.trainer.tracked_prefixes ==
         std::vector<std::string>{"enc.", "gvf."}));
}

TEST_CASE("handcrafted cumulants refuse environments without privileged "
          "state") {
  auto cfg = ladder_config(6);
  cfg.env.env_id = "minatar_breakout";
  CHECK_THROWS_AS(train::make_agent(train::VariantId::hc_gvf, cfg),
                  ocgvf::ConfigError);
  CHECK_THROWS_AS(train::make_agent(train::VariantId::hc_gvf_plus, cfg),
                  ocgvf::ConfigError);
  CHECK_NOTHROW(train::make_agent(train::VariantId::ddqn, cfg).net.validate());
}

TEST_CASE("random mode picks between a frozen network and fresh draws") {
  auto cfg = ladder_config(7);
  auto fixed = train::make_agent(train::VariantId::random_gvf, cfg);
  CHECK(fixed.trainer.cumulant_source == train::CumulantSource::random_net);
  REQUIRE(fixed.question.has_value());
  CHECK(fixed.question->kind == qnet::QuestionKind::conv);

  cfg.random_mode = train::RandomCumulantMode::iid_uniform;
  auto iid = train::make_agent(train::VariantId::random_gvf_plus, cfg);
  CHECK(iid.trainer.cumulant_source == train::CumulantSource::iid_uniform);
  CHECK_FALSE(iid.question.has_value());
}

TEST_CASE("aux-only heads receive no gradient from the control loss") {
  auto s = train::make_agent(train::VariantId::random_gvf, ladder_config(8));
  core::Rng rng(11);
  agent::DoubleNet<double> net(s.net, rng);
  const nn::ParamView<double> view(net.online);

  core::Rng frng(12);
  std::vector<env::Image> imgs;
  std::vector<const env::Image*> ptr_s, ptr_n;
  for (int i = 0; i < 4; ++i) imgs.push_back(random_image(frng, 32));
  ptr_s = {&imgs[0], &imgs[1]};
  ptr_n = {&imgs[2], &imgs[3]};
  auto obs_s = agent::obs_to_tensor<double>(ptr_s);
  auto obs_n = agent::obs_to_tensor<double>(ptr_n);

  auto phi = agent::features(s.net, view, obs_s);
  auto v = agent::gvf_values(s.net, view, phi);
  auto q_s =
      agent::q_values(s.net, view, agent::fuse(s.net, view, v, phi));
  Tensor<double> q_no, q_nt;
  {
    core::NoGradGuard<double> off;
    q_no = agent::q_from_obs(s.net, view, obs_n);
    q_nt = agent::q_from_obs(s.net, nn::ParamView<double>(net.target), obs_n);
  }
  auto loss = agent::ddqn_loss(q_s, q_no, q_nt, {0, 2},
                               Tensor<double>::from({2}, {0.5, -1.0}),
                               Tensor<double>::from({2}, {0.0, 1.0}), 0.99);

  std::vector<std::string> head_names;
  std::vector<Tensor<double>> head_tensors;
  for (const auto& name : net.online.names()) {
    if (name.rfind("gvf.", 0) == 0) {
      head_names.push_back(name);
      head_tensors.push_back(net.online.at(name));
    }
  }
  REQUIRE(head_names.size() == 5 * 4);
  auto gs = core::grad(loss, head_tensors);
  for (const auto& g : gs) {
    for (double x : g.vec()) CHECK(x == 0.0);
  }

  // Contrast: the fused wiring does route the control loss into the heads.
  auto sf = train::make_agent(train::VariantId::oc_gvf, ladder_config(8));
  core::Rng rng2(11);
  agent::DoubleNet<double> fused(sf.net, rng2);
  const nn::ParamView<double> fview(fused.online);
  auto fphi = agent::features(sf.net, fview, obs_s);
  auto fv = agent::gvf_values(sf.net, fview, fphi);
  auto fq =
      agent::q_values(sf.net, fview, agent::fuse(sf.net, fview, fv, fphi));
  auto floss = agent::ddqn_loss(fq, q_no, q_nt, {0, 2},
                                Tensor<double>::from({2}, {0.5, -1.0}),
                                Tensor<double>::from({2}, {0.0, 1.0}), 0.99);
  std::vector<Tensor<double>> fhead;
  for (const auto& name : fused.online.names()) {
    if (name.rfind("gvf.", 0) == 0) fhead.push_back(fused.online.at(name));
  }
  auto fgs = core::grad(floss, fhead);
  double total = 0;
  for (const auto& g : fgs) {
    for (double x : g.vec()) total += x * x;
  }
  CHECK(total > 0.0);
}

TEST_CASE("frozen random question answers the same state the same way") {
  auto cfg = ladder_config(9);
  auto s = train::make_agent(train::VariantId::random_gvf, cfg);
  train::MetaTrainer<double> tr(s);
  CHECK_FALSE(tr.is_meta());

  core::Rng frng(21);
  std::vector<replay::Transition> batch(2);
  auto a = std::make_shared<const env::Image>(random_image(frng, 32));
  auto b = std::make_shared<const env::Image>(random_image(frng, 32));
  batch[0].s = a;
  batch[0].s_next = b;
  batch[1].s = b;
  batch[1].s_next = a;

  auto c1 = tr.cumulants_for(batch, false);
  auto c2 = tr.cumulants_for(batch, false);
  CHECK(c1.vec() == c2.vec());
  CHECK((c1.shape() == core::Shape{2, 5}));
  // Different states map to different cumulants (tanh of a random conv).
  bool differs = false;
  for (int k = 0; k < 5; ++k) {
    if (c1.vec()[k] != c1.vec()[5 + k]) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("iid uniform cumulants match uniform-distribution statistics") {
  auto cfg = ladder_config(10);
  cfg.random_mode = train::RandomCumulantMode::iid_uniform;
  auto s = train::make_agent(train::VariantId::random_gvf, cfg);
  train::MetaTrainer<double> tr(s);

  core::Rng frng(31);
  std::vector<replay::Transition> batch(16);
  std::vector<std::shared_ptr<const env::Image>> frames;
  for (int i = 0; i < 17; ++i) {
    frames.push_back(std::make_shared<const env::Image>(random_image(frng, 32)));
  }
  for (int i = 0; i < 16; ++i) {
    batch[i].s = frames[i];
    batch[i].s_next = frames[i + 1];
  }

  double sum = 0.0, lo = 1e9, hi = -1e9;
  int64_t n = 0;
  std::vector<double> first;
  for (int rep = 0; rep < 125; ++rep) {
    auto c = tr.cumulants_for(batch, false);
    if (rep == 0) first = c.vec();
    for (double x : c.vec()) {
      sum += x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
      ++n;
    }
  }
  REQUIRE(n == 10000);
  CHECK(std::abs(sum / n) <= 0.02);
  CHECK(lo >= -1.0);
  CHECK(hi <= 1.0);
  // Fresh draws per query: the same batch queried again moves.
  auto again = tr.cumulants_for(batch, false);
  CHECK(again.vec() != first);
}

TEST_CASE("every ladder variant trains an episode end to end") {
  for (const auto& id : train::variant_ids()) {
    CAPTURE(id);
    auto cfg = ladder_config(40);
    auto s = train::make_agent(train::parse_variant(id), cfg);
    train::MetaTrainer<float> tr(s);
    std::ostringstream log;
    tr.train_episodes(1, &log);

    CHECK(tr.episode() == 1);
    CHECK(tr.global_step() == 8);
    CHECK(tr.updates_done() > 0);
    CHECK(tr.trace_size() == 0);

    auto row = nlohmann::json::parse(log.str());
    CHECK(row.at("episode") == 1);
    CHECK(row.at("global_step") == 8);
    CHECK(std::isfinite(row.at("ddqn_loss").get<double>()));
    const bool has_gvfs = s.net.num_gvfs > 0;
    CHECK(row.at("gvf_loss").is_null() == !has_gvfs);
    const bool has_slots = s.slots.has_value();
    CHECK(row.at("recon_loss").is_null() == !has_slots);
    if (has_gvfs) {
      CHECK(std::isfinite(row.at("gvf_loss").get<double>()));
    }
  }
}

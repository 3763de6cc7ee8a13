#include <doctest.h>

#include <cmath>
#include <vector>

#include "ocgvf/agent/agent_network.hpp"
#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/ops.hpp"
#include "test_helpers.hpp"

using namespace ocgvf;
using namespace ocgvf::agent;
using namespace ocgvf::test;
using core::Rng;
using core::Tensor;

namespace {

// Small stack for gradient-heavy checks; same topology as the default.
NetConfig tiny_config() {
  NetConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.num_actions = 3;
  cfg.num_gvfs = 2;
  cfg.projection_dim = 6;
  cfg.gvf_hidden = 8;
  cfg.hidden_arch = {10, 7};
  cfg.conv_filters = {4, 6, 8};
  return cfg;
}

template <typename T>
Tensor<T> rand_obs(const NetConfig& cfg, int b, Rng& rng) {
  return Tensor<T>::uniform({b, cfg.channels, cfg.height, cfg.width}, rng,
                            T(0), T(1));
}

void zero_param(const nn::ParamSet<double>& ps, const std::string& name) {
  auto t = ps.at(name);
  std::fill(t.mut_vec().begin(), t.mut_vec().end(), 0.0);
}

}  // namespace

TEST_CASE("config validation") {
  NetConfig cfg;
  cfg.validate();
  CHECK(cfg.feature_dim() == 4096);
  CHECK(cfg.fused_dim() == 4096 + 64);

  NetConfig bad = cfg;
  bad.height = 30;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.conv_filters = {16, 32};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.hidden_arch = {};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  NetConfig aux = cfg;
  aux.fuse_gvfs = false;
  CHECK(aux.fused_dim() == 4096);
  NetConfig av = cfg;
  av.gvf_kind = GvfKind::action;
  CHECK(av.gvf_out_dim() == 4);
}

TEST_CASE("parameter inventory matches the architecture") {
  NetConfig cfg;  // 32x32, K=5, p=64, hidden [64,32]
  Rng rng(0);
  auto ps = init_agent_params<double>(cfg, rng);

  auto conv_n = [](int oc, int ic) { return oc * ic * 9 + oc; };
  auto lin_n = [](int in, int out) { return in * out + out; };
  const int f = cfg.feature_dim();
  const int64_t expect =
      conv_n(16, 3) + conv_n(32, 16) + conv_n(64, 32) +
      5 * (lin_n(f, 32) + lin_n(32, 1)) + lin_n(5, 64) +
      2 * cfg.fused_dim() + lin_n(cfg.fused_dim(), 64) + lin_n(64, 32) +
      lin_n(32, 4);
  CHECK(ps.scalar_count() == expect);

  // Partitions: every parameter lands in exactly one of theta / w.
  const auto theta = ps.names_prefixed(theta_prefixes());
  const auto w = ps.names_prefixed(w_prefixes());
  CHECK(theta.size() + w.size() == ps.names().size());

  // Same seed, same parameters; different seed differs.
  Rng rng2(0), rng3(1);
  auto ps2 = init_agent_params<double>(cfg, rng2);
  auto ps3 = init_agent_params<double>(cfg, rng3);
  CHECK(max_abs_diff(ps.at("enc.c1.w"), ps2.at("enc.c1.w")) == 0.0);
  CHECK(max_abs_diff(ps.at("enc.c1.w"), ps3.at("enc.c1.w")) > 0.0);
}

TEST_CASE("feature extractor output") {
  NetConfig cfg;
  Rng rng(3);
  auto ps = init_agent_params<double>(cfg, rng);

  auto obs = rand_obs<double>(cfg, 2, rng);
  auto phi = features<double>(cfg, ps, obs);
  CHECK(phi.shape() == core::Shape{2, 4096});

  auto phi2 = features<double>(cfg, ps, obs);
  CHECK(max_abs_diff(phi, phi2) == 0.0);

  // Zero image with zero biases maps to zero features.
  auto zero = Tensor<double>::zeros({1, 3, 32, 32});
  auto phiz = features<double>(cfg, ps, zero);
  CHECK(max_abs_diff(phiz, Tensor<double>::zeros({1, 4096})) == 0.0);

  auto wrong = Tensor<double>::zeros({1, 3, 16, 16});
  CHECK_THROWS_AS(features<double>(cfg, ps, wrong), ShapeError);
}

TEST_CASE("gvf heads are independent scalar maps") {
  auto cfg = tiny_config();
  Rng rng(5);
  auto ps = init_agent_params<double>(cfg, rng);
  auto obs = rand_obs<double>(cfg, 3, rng);
  auto phi = features<double>(cfg, ps, obs);

  auto v = gvf_values<double>(cfg, ps, phi);
  CHECK(v.shape() == core::Shape{3, 2});

  // Zeroing a head's output layer zeroes only that column.
  zero_param(ps, "gvf.1.l2.w");
  zero_param(ps, "gvf.1.l2.b");
  auto v2 = gvf_values<double>(cfg, ps, phi);
  for (int b = 0; b < 3; ++b) {
    CHECK(v2.at({b, 0}) == v.at({b, 0}));
    CHECK(v2.at({b, 1}) == 0.0);
  }

  // Bias shift on head 0 moves only column 0, by exactly the shift.
  auto bias = ps.at("gvf.0.l2.b");
  bias.mut_vec()[0] += 2.5;
  auto v3 = gvf_values<double>(cfg, ps, phi);
  for (int b = 0; b < 3; ++b) {
    CHECK(v3.at({b, 0}) == doctest::Approx(v2.at({b, 0}) + 2.5).epsilon(1e-12));
    CHECK(v3.at({b, 1}) == 0.0);
  }
}

TEST_CASE("fusion normalizes the concatenated features") {
  auto cfg = tiny_config();
  Rng rng(11);
  auto ps = init_agent_params<double>(cfg, rng);
  const int b = 4;
  // Generic inputs with variance well above the normalizer epsilon.
  auto v = Tensor<double>::uniform({b, cfg.num_gvfs}, rng, -5.0, 5.0);
  auto phi =
      Tensor<double>::uniform({b, cfg.feature_dim()}, rng, -5.0, 5.0);

  SUBCASE("affine at identity gives mean 0, variance 1") {
    auto chi = fuse<double>(cfg, ps, v, phi);
    REQUIRE(chi.shape() == core::Shape{b, cfg.fused_dim()});
    const int d = cfg.fused_dim();
    for (int r = 0; r < b; ++r) {
      double mean = 0, var = 0;
      for (int c = 0; c < d; ++c) mean += chi.at({r, c});
      mean /= d;
      for (int c = 0; c < d; ++c) {
        var += (chi.at({r, c}) - mean) * (chi.at({r, c}) - mean);
      }
      var /= d;
      CHECK(std::abs(mean) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-5);
    }
  }

  SUBCASE("layer norm keeps huge value scales bounded") {
    auto big = core::scale(v, 1000.0);
    auto chi = fuse<double>(cfg, ps, big, phi);
    double peak = 0;
    for (double x : chi.vec()) peak = std::max(peak, std::abs(x));
    CHECK(peak < 10.0 * std::sqrt(static_cast<double>(cfg.fused_dim())));
  }

  SUBCASE("disabled layer norm returns the raw concatenation") {
    auto plain = cfg;
    plain.layer_norm = false;
    Rng r2(11);
    auto ps2 = init_agent_params<double>(plain, r2);
    auto chi = fuse<double>(plain, ps2, v, phi);
    auto psi = core::linear(v, ps2.at("proj.w"), ps2.at("proj.b"));
    auto cat = core::concat_cols<double>({psi, phi});
    CHECK(max_abs_diff(chi, cat) == 0.0);
  }

  SUBCASE("aux-only fusion passes features through") {
    auto aux = cfg;
    aux.fuse_gvfs = false;
    aux.layer_norm = false;
    Rng r2(11);
    auto ps2 = init_agent_params<double>(aux, r2);
    auto chi = fuse<double>(aux, ps2, Tensor<double>(), phi);
    CHECK(max_abs_diff(chi, phi) == 0.0);
  }
}

TEST_CASE("q head output and greedy selection") {
  auto cfg = tiny_config();
  Rng rng(13);
  auto ps = init_agent_params<double>(cfg, rng);
  auto obs = rand_obs<double>(cfg, 4, rng);

  auto q = q_from_obs<double>(cfg, ps, obs);
  CHECK(q.shape() == core::Shape{4, 3});

  // Constant shifts never change the greedy action.
  auto shifted = core::add_const(q, 3.7);
  CHECK(core::argmax_rows(q) == core::argmax_rows(shifted));

  // Zero output layer gives all-zero Q.
  zero_param(ps, "q.l3.w");
  zero_param(ps, "q.l3.b");
  auto qz = q_from_obs<double>(cfg, ps, obs);
  CHECK(max_abs_diff(qz, Tensor<double>::zeros({4, 3})) == 0.0);
}

TEST_CASE("gvf state loss matches hand-computed values") {
  auto c = Tensor<double>::from({1, 1}, {1.0});
  auto v_s = Tensor<double>::from({1, 1}, {0.0});
  auto v_next = Tensor<double>::from({1, 1}, {2.0});
  auto live = Tensor<double>::from({1}, {0.0});
  auto loss = gvf_state_loss<double>(c, v_s, v_next, live, 0.99);
  CHECK(loss.item() == doctest::Approx(8.8804).epsilon(1e-12));

  auto done = Tensor<double>::from({1}, {1.0});
  auto v1 = Tensor<double>::from({1, 1}, {1.0});
  auto loss2 = gvf_state_loss<double>(c, v1, v_next, done, 0.99);
  CHECK(loss2.item() == 0.0);

  auto z = Tensor<double>::zeros({1, 1});
  auto loss3 = gvf_state_loss<double>(z, z, z, live, 0.99);
  CHECK(loss3.item() == 0.0);

  // Mean over batch and heads.
  auto cb = Tensor<double>::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto vb = Tensor<double>::zeros({2, 2});
  auto lb = Tensor<double>::from({2}, {1.0, 1.0});
  auto loss4 = gvf_state_loss<double>(cb, vb, vb, lb, 0.99);
  CHECK(loss4.item() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("gvf action loss uses behavior action and max bootstrap") {
  auto cfg = tiny_config();
  cfg.num_gvfs = 1;
  cfg.num_actions = 2;
  cfg.gvf_kind = GvfKind::action;
  auto c = Tensor<double>::from({1, 1}, {1.0});
  auto q_s = Tensor<double>::from({1, 2}, {0.0, 4.0});
  auto q_next = Tensor<double>::from({1, 2}, {1.0, 2.0});
  auto live = Tensor<double>::from({1}, {0.0});
  auto loss =
      gvf_action_loss<double>(cfg, c, q_s, q_next, {0}, live, 0.5);
  CHECK(loss.item() == doctest::Approx(4.0).epsilon(1e-12));

  // Terminal: target reduces to the cumulant.
  auto done = Tensor<double>::from({1}, {1.0});
  auto loss2 =
      gvf_action_loss<double>(cfg, c, q_s, q_next, {1}, done, 0.5);
  CHECK(loss2.item() == doctest::Approx(9.0).epsilon(1e-12));  // (4-1)^2
}

TEST_CASE("ddqn loss matches the double-Q hand case") {
  auto q_s = Tensor<double>::from({1, 2}, {0.0, 7.0});
  auto q_no = Tensor<double>::from({1, 2}, {1.0, 2.0});
  auto q_nt = Tensor<double>::from({1, 2}, {10.0, 3.0});
  auto r = Tensor<double>::from({1}, {0.0});
  auto live = Tensor<double>::from({1}, {0.0});
  auto loss = ddqn_loss<double>(q_s, q_no, q_nt, {0}, r, live, 0.99);
  CHECK(loss.item() == doctest::Approx(8.8209).epsilon(1e-12));

  // Terminal transition with exact prediction.
  auto q_s2 = Tensor<double>::from({1, 2}, {5.0, -1.0});
  auto r5 = Tensor<double>::from({1}, {5.0});
  auto done = Tensor<double>::from({1}, {1.0});
  auto loss2 = ddqn_loss<double>(q_s2, q_no, q_nt, {0}, r5, done, 0.99);
  CHECK(loss2.item() == 0.0);

  // Coinciding online/target argmax reduces to the vanilla DQN target.
  auto q_no2 = Tensor<double>::from({1, 2}, {1.0, 5.0});
  auto q_nt2 = Tensor<double>::from({1, 2}, {2.0, 9.0});
  auto loss3 = ddqn_loss<double>(q_s, q_no2, q_nt2, {0}, r, live, 0.5);
  CHECK(loss3.item() == doctest::Approx(4.5 * 4.5).epsilon(1e-12));
}

TEST_CASE("gvf loss is a semi-gradient: no gradient through the bootstrap") {
  auto cfg = tiny_config();
  Rng rng(21);
  auto ps = init_agent_params<double>(cfg, rng);
  auto obs_s = rand_obs<double>(cfg, 2, rng);
  auto obs_n = rand_obs<double>(cfg, 2, rng);
  auto c = Tensor<double>::uniform({2, cfg.num_gvfs}, rng, -1.0, 1.0);
  auto live = Tensor<double>::from({2}, {0.0, 0.0});

  auto head_params = ps.tensors_prefixed({"gvf.", "enc."});

  // Graph-connected bootstrap (detached inside the loss).
  auto v_s = gvf_values<double>(cfg, ps, features<double>(cfg, ps, obs_s));
  auto v_n = gvf_values<double>(cfg, ps, features<double>(cfg, ps, obs_n));
  auto loss = gvf_state_loss<double>(c, v_s, v_n, live, 0.9);
  auto grads = core::grad(loss, head_params);

  // Bootstrap replaced by a constant copy: gradients must be identical.
  auto v_s2 = gvf_values<double>(cfg, ps, features<double>(cfg, ps, obs_s));
  auto v_n_const = Tensor<double>::from(v_n.shape(), v_n.vec());
  auto loss2 = gvf_state_loss<double>(c, v_s2, v_n_const, live, 0.9);
  auto grads2 = core::grad(loss2, head_params);

  REQUIRE(grads.size() == grads2.size());
  for (size_t i = 0; i < grads.size(); ++i) {
    CHECK(max_abs_diff(grads[i], grads2[i]) == 0.0);
  }

  // The cumulants stay differentiable: gradients reach them.
  c.set_requires_grad(true);
  auto v_s3 = gvf_values<double>(cfg, ps, features<double>(cfg, ps, obs_s));
  auto loss3 = gvf_state_loss<double>(c, v_s3, v_n_const, live, 0.9);
  auto gc = core::grad(loss3, {c})[0];
  double mag = 0;
  for (double x : gc.vec()) mag += std::abs(x);
  CHECK(mag > 0.0);

  auto fd = [&]() {
    auto v = gvf_values<double>(cfg, ps, features<double>(cfg, ps, obs_s));
    return gvf_state_loss<double>(c, v, v_n_const, live, 0.9);
  };
  CHECK(gradcheck(fd, {c}, 1e-6) < 1e-6);
}

TEST_CASE("control loss reaches gvf heads only through fusion") {
  auto cfg = tiny_config();
  Rng rng(23);
  auto obs_s = rand_obs<double>(cfg, 2, rng);
  auto obs_n = rand_obs<double>(cfg, 2, rng);
  auto r = Tensor<double>::from({2}, {1.0, 0.0});
  auto live = Tensor<double>::from({2}, {0.0, 0.0});

  auto head_grad_mag = [&](const NetConfig& c2) {
    Rng r2(23);
    auto ps = init_agent_params<double>(c2, r2);
    auto q_s = q_from_obs<double>(c2, ps, obs_s);
    auto q_n = q_from_obs<double>(c2, ps, obs_n);
    auto loss = ddqn_loss<double>(q_s, q_n, q_n, {0, 1}, r, live, 0.99);
    auto g = core::grad(loss, ps.tensors_prefixed({"gvf."}));
    double mag = 0;
    for (const auto& t : g) {
      for (double x : t.vec()) mag += std::abs(x);
    }
    return mag;
  };

  CHECK(head_grad_mag(cfg) > 0.0);  // fused: the second backprop path exists

  auto aux = cfg;
  aux.fuse_gvfs = false;
  CHECK(head_grad_mag(aux) == 0.0);  // aux-only: no path into the Q features
}

TEST_CASE("target network sync") {
  auto cfg = tiny_config();
  Rng rng(31);
  DoubleNet<double> net(cfg, rng);
  auto obs = rand_obs<double>(cfg, 2, rng);

  auto q_on = q_from_obs<double>(cfg, net.online, obs);
  auto q_tg = q_from_obs<double>(cfg, net.target, obs);
  CHECK(max_abs_diff(q_on, q_tg) == 0.0);  // synced at construction

  // Online drift leaves the target untouched until the next sync.
  auto w = net.online.at("q.l3.w");
  for (auto& x : w.mut_vec()) x += 0.25;
  auto q_on2 = q_from_obs<double>(cfg, net.online, obs);
  auto q_tg2 = q_from_obs<double>(cfg, net.target, obs);
  CHECK(max_abs_diff(q_on2, q_on) > 0.0);
  CHECK(max_abs_diff(q_tg2, q_tg) == 0.0);

  net.sync();
  auto q_tg3 = q_from_obs<double>(cfg, net.target, obs);
  CHECK(max_abs_diff(q_tg3, q_on2) == 0.0);

  CHECK(!should_sync(0, 100));
  CHECK(!should_sync(99, 100));
  CHECK(should_sync(100, 100));
  CHECK(!should_sync(101, 100));
  CHECK(should_sync(200, 100));
  CHECK_THROWS_AS(should_sync(5, 0), ConfigError);
}

TEST_CASE("frame batches convert to scaled channel-first tensors") {
  env::Image img;
  img.h = img.w = 2;
  img.rgb = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255};
  env::Image img2 = img;
  img2.rgb[0] = 200;

  auto t = obs_to_tensor<double>({&img, &img2});
  CHECK(t.shape() == core::Shape{2, 3, 2, 2});
  CHECK(t.at({0, 0, 0, 0}) == 0.0);
  CHECK(t.at({0, 2, 1, 1}) == doctest::Approx(1.0));           // byte 255
  CHECK(t.at({0, 1, 1, 0}) == doctest::Approx(70.0 / 255.0));  // (y1,x0,c1)
  CHECK(t.at({1, 0, 0, 0}) == doctest::Approx(200.0 / 255.0));

  env::Image odd;
  odd.h = 1;
  odd.w = 1;
  odd.rgb = {1, 2, 3};
  CHECK_THROWS_AS(obs_to_tensor<double>({&img, &odd}), ShapeError);
}

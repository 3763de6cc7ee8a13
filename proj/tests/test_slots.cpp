#include <doctest.h>

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "ocgvf/core/errors.hpp"
#include "ocgvf/core/kernels.hpp"
#include "ocgvf/slots/slot_module.hpp"
#include "test_helpers.hpp"

using namespace ocgvf;
using namespace ocgvf::slots;
using ocgvf::test::gradcheck;
using ocgvf::test::max_abs_diff;
using Td = core::Tensor<double>;
using Tf = core::Tensor<float>;

namespace {

SlotConfig tiny_config() {
  SlotConfig c;
  c.num_slots = 3;
  c.slot_dim = 8;
  c.num_iterations = 2;
  c.resolution = 8;
  c.channels = 3;
  c.enc_filters = {8, 12};
  c.dec_layers = {{12, 3, 2}, {4, 3, 1}};
  c.mlp_hidden = 16;
  c.warmup_steps = 5;
  c.learning_rate = 3e-3;
  c.decay_steps = 1000;
  c.num_train_steps = 100;
  return c;
}

struct BackendScope {
  core::kernels::Backend prev;
  explicit BackendScope(core::kernels::Backend b)
      : prev(core::kernels::backend()) {
    core::kernels::set_backend(b);
  }
  ~BackendScope() { core::kernels::set_backend(prev); }
};

}  // namespace

TEST_CASE("slot config validation") {
  SlotConfig c;
  c.validate();
  CHECK(c.broadcast_size() == 8);
  CHECK(c.num_positions() == 1024);
  CHECK(c.input_channels() == 64);

  SUBCASE("alpha map count") {
    c.dec_layers.back().filters = 3;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("stride divisibility") {
    c.resolution = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("even kernel") {
    c.enc_kernel = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("decay rate range") {
    c.decay_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("empty encoder") {
    c.enc_filters.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
}

TEST_CASE("learning rate schedule: warmup ramp then exponential decay") {
  SlotConfig c;  // base 4e-4, warmup 10000, decay 0.5 per 100000
  CHECK(slot_lr(c, 0) == 0.0);
  CHECK(slot_lr(c, 5000) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(slot_lr(c, 10000) == doctest::Approx(4e-4).epsilon(1e-12));
  CHECK(slot_lr(c, 110000) == doctest::Approx(2e-4).epsilon(1e-12));
  CHECK(slot_lr(c, 210000) == doctest::Approx(1e-4).epsilon(1e-12));

  // continuous at the warmup boundary and monotone afterwards
  CHECK(slot_lr(c, 9999) == doctest::Approx(4e-4 * 0.9999).epsilon(1e-12));
  double prev = slot_lr(c, 10000);
  for (int64_t s = 20000; s <= 200000; s += 10000) {
    const double cur = slot_lr(c, s);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("encoder emits one position vector per pixel") {
  SlotConfig c;  // defaults: 32x32, filters {32,32,64}
  core::Rng rng(21);
  SlotModule<float> m(c, rng);
  Tf img = Tf::uniform({2, 3, 32, 32}, rng, 0.f, 1.f);
  Tf f = m.encode(img);
  CHECK(f.shape() == core::Shape{2, 1024, 64});
  CHECK_THROWS_AS(m.encode(Tf::zeros({2, 3, 16, 16})), ShapeError);

  // On a zero image the conv stack is spatially constant, so position
  // dependence comes only from the additive embedding, which is affine in
  // (row, col): corners of any rectangle of positions must cancel.
  Tf z = m.encode(Tf::zeros({1, 3, 32, 32}));
  core::Rng pick(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int r0 = static_cast<int>(pick.uniform_int(31));
    const int c0 = static_cast<int>(pick.uniform_int(31));
    const int r1 = r0 + 1 + static_cast<int>(pick.uniform_int(31 - r0));
    const int c1 = c0 + 1 + static_cast<int>(pick.uniform_int(31 - c0));
    const int ch = static_cast<int>(pick.uniform_int(64));
    const float lhs = z.at({0, r0 * 32 + c0, ch}) + z.at({0, r1 * 32 + c1, ch});
    const float rhs = z.at({0, r0 * 32 + c1, ch}) + z.at({0, r1 * 32 + c0, ch});
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
  }
}

TEST_CASE("encoder receptive field is a 7x7 box for three 3x3 convs") {
  BackendScope scope(core::kernels::Backend::reference);
  SlotConfig c = tiny_config();
  c.resolution = 16;
  c.enc_filters = {4, 4, 6};
  c.dec_layers = {{6, 3, 2}, {4, 3, 1}};
  core::Rng rng(22);
  SlotModule<double> m(c, rng);
  Td a = Td::uniform({1, 3, 16, 16}, rng, 0.0, 1.0);
  std::vector<double> bumped = a.vec();
  const int y0 = 9, x0 = 5;
  bumped[(0 * 16 + y0) * 16 + x0] += 0.25;  // channel 0
  Td b = Td::from(a.shape(), std::move(bumped));

  Td fa = m.encode(a), fb = m.encode(b);
  int changed = 0;
  for (int p = 0; p < 256; ++p) {
    bool differs = false;
    for (int ch = 0; ch < 6; ++ch) {
      if (fa.at({0, p, ch}) != fb.at({0, p, ch})) differs = true;
    }
    const int py = p / 16, px = p % 16;
    const bool inside = std::abs(py - y0) <= 3 && std::abs(px - x0) <= 3;
    if (differs) {
      CHECK(inside);
      ++changed;
    }
  }
  CHECK(changed > 0);
  CHECK(changed <= 49);
}

TEST_CASE("attention iterations are bitwise permutation equivariant") {
  SlotConfig c;
  c.num_slots = 4;
  c.slot_dim = 8;
  c.num_iterations = 3;
  c.resolution = 8;
  c.enc_filters = {6};
  c.dec_layers = {{4, 3, 2}};
  c.mlp_hidden = 8;
  c.learned_init = false;
  core::Rng rng(33);
  SlotModule<double> m(c, rng);
  const int b = 2, k = 4, d = 8, n = 10;

  auto run_trials = [&](int trials) {
    for (int t = 0; t < trials; ++t) {
      Td feat = Td::uniform({b, n, 6}, rng, -1.0, 1.0);
      Td s0 = m.initial_slots(b, &rng);
      std::vector<int> perm(k);
      std::iota(perm.begin(), perm.end(), 0);
      rng.shuffle(perm.begin(), perm.end());

      std::vector<double> pv(static_cast<size_t>(b) * k * d);
      for (int bi = 0; bi < b; ++bi) {
        for (int ki = 0; ki < k; ++ki) {
          for (int di = 0; di < d; ++di) {
            pv[(static_cast<size_t>(bi) * k + perm[ki]) * d + di] =
                s0.at({bi, ki, di});
          }
        }
      }
      Td sp = Td::from({b, k, d}, std::move(pv));

      Td o1 = m.iterate(feat, s0);
      Td o2 = m.iterate(feat, sp);
      bool identical = true;
      for (int bi = 0; bi < b; ++bi) {
        for (int ki = 0; ki < k; ++ki) {
          for (int di = 0; di < d; ++di) {
            if (o2.at({bi, perm[ki], di}) != o1.at({bi, ki, di})) {
              identical = false;
            }
          }
        }
      }
      CHECK(identical);
    }
  };

  run_trials(100);
  BackendScope scope(core::kernels::Backend::reference);
  run_trials(20);
}

TEST_CASE("decoder masks form a pixelwise distribution for any parameters") {
  for (uint64_t seed : {1u, 7u, 19u}) {
    core::Rng rng(seed);
    SlotConfig c = tiny_config();
    SlotModule<double> m(c, rng);
    Td slots = Td::uniform({2, c.num_slots, c.slot_dim}, rng, -2.0, 2.0);
    auto out = m.decode(slots);
    CHECK(out.recon.shape() == core::Shape{2, 3, 8, 8});
    CHECK(out.masks.shape() == core::Shape{2, 3, 8, 8});
    CHECK(out.rgb.shape() == core::Shape{2, 3, 3, 8, 8});
    for (int bi = 0; bi < 2; ++bi) {
      for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
          double s = 0;
          for (int ki = 0; ki < c.num_slots; ++ki) {
            const double v = out.masks.at({bi, ki, y, x});
            CHECK(v >= 0.0);
            s += v;
          }
          CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
        }
      }
    }
  }
}

TEST_CASE("single-slot decoder passes its rgb straight through") {
  SlotConfig c = tiny_config();
  c.num_slots = 1;
  core::Rng rng(9);
  SlotModule<double> m(c, rng);
  Td slots = Td::uniform({2, 1, c.slot_dim}, rng, -1.0, 1.0);
  auto out = m.decode(slots);
  for (int bi = 0; bi < 2; ++bi) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        CHECK(out.masks.at({bi, 0, y, x}) == 1.0);
        for (int ch = 0; ch < 3; ++ch) {
          CHECK(out.recon.at({bi, ch, y, x}) ==
                out.rgb.at({bi, 0, ch, y, x}));
        }
      }
    }
  }
}

TEST_CASE("full pipeline shapes at both training resolutions") {
  core::Rng rng(41);
  SUBCASE("32x32 stack") {
    SlotConfig c;
    SlotModule<float> m(c, rng);
    Tf img = Tf::uniform({2, 3, 32, 32}, rng, 0.f, 1.f);
    Tf s = m.slots_for(img);
    CHECK(s.shape() == core::Shape{2, 5, 64});
    auto out = m.decode(s);
    CHECK(out.recon.shape() == core::Shape{2, 3, 32, 32});
    CHECK(out.masks.shape() == core::Shape{2, 5, 32, 32});
  }
  SUBCASE("64x64 stack with an extra stride-2 stage") {
    SlotConfig c;
    c.resolution = 64;
    c.enc_kernel = 5;
    c.dec_layers = {{64, 5, 2}, {32, 5, 2}, {32, 5, 2}, {32, 3, 1}, {4, 3, 1}};
    c.num_train_steps = 100000;
    CHECK(c.broadcast_size() == 8);
    SlotModule<float> m(c, rng);
    Tf img = Tf::uniform({1, 3, 64, 64}, rng, 0.f, 1.f);
    auto out = m.decode(m.slots_for(img));
    CHECK(out.recon.shape() == core::Shape{1, 3, 64, 64});
    CHECK(out.masks.shape() == core::Shape{1, 5, 64, 64});
  }
}

TEST_CASE("initial slots: learned vectors vs sampled gaussians") {
  core::Rng rng(55);
  SUBCASE("learned mode is deterministic and matches the stored vectors") {
    SlotConfig c = tiny_config();
    SlotModule<double> m(c, rng);
    Td a = m.initial_slots(2, nullptr);
    Td b = m.initial_slots(2, nullptr);
    CHECK(a.shape() == core::Shape{2, 3, 8});
    CHECK(max_abs_diff(a, b) == 0.0);
    const Td& stored = m.params().at("sa.init.slots");
    for (int ki = 0; ki < 3; ++ki) {
      for (int di = 0; di < 8; ++di) {
        CHECK(a.at({1, ki, di}) == stored.at({ki, di}));
      }
    }
    CHECK_THROWS_AS(m.initial_slots(0, nullptr), ConfigError);
  }
  SUBCASE("sampled mode draws fresh slots and needs an rng") {
    SlotConfig c = tiny_config();
    c.learned_init = false;
    SlotModule<double> m(c, rng);
    CHECK_THROWS_AS(m.initial_slots(2, nullptr), ConfigError);
    core::Rng r1(7), r2(7), r3(8);
    Td a = m.initial_slots(2, &r1);
    Td b = m.initial_slots(2, &r2);
    Td d = m.initial_slots(2, &r3);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(a, d) > 0.0);
  }
}

TEST_CASE("reconstruction gradients match finite differences end to end") {
  SlotConfig c;
  c.num_slots = 2;
  c.slot_dim = 4;
  c.num_iterations = 2;
  c.resolution = 4;
  c.channels = 2;
  c.enc_filters = {3};
  c.dec_layers = {{4, 3, 2}, {3, 3, 1}};
  c.mlp_hidden = 5;
  core::Rng rng(61);
  SlotModule<double> m(c, rng);
  Td img = Td::uniform({1, 2, 4, 4}, rng, 0.2, 0.8).set_requires_grad();

  // The slot-norm shift is a null direction: it moves every query by the
  // same vector, adding a slot-independent constant to the logits at each
  // position, and the softmax over slots cancels it exactly. Checked
  // separately below; finite differences on it only measure fp noise.
  std::vector<Td> leaves;
  for (const auto& p : m.params().all()) {
    if (p.name != "sa.norm_slots.b") leaves.push_back(p.value);
  }
  leaves.push_back(img);
  const double err =
      gradcheck([&] { return m.reconstruction_loss(img); }, leaves, 1e-5);
  CHECK(err < 2e-5);

  const double base = m.reconstruction_loss(img).at({0});
  Td beta = m.params().at("sa.norm_slots.b");
  auto g = core::grad(m.reconstruction_loss(img), {beta});
  for (int i = 0; i < beta.dim(0); ++i) {
    CHECK(std::abs(g[0].at({i})) < 1e-12);
  }
  for (auto& v : beta.mut_vec()) v += 0.5;
  CHECK(m.reconstruction_loss(img).at({0}) ==
        doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("training memorizes a fixed batch") {
  SlotConfig c = tiny_config();
  core::Rng rng(71);
  SlotModule<float> m(c, rng);
  Tf batch = Tf::uniform({4, 3, 8, 8}, rng, 0.f, 1.f);
  const float first = m.train_step(batch);
  float last = first;
  for (int i = 0; i < 59; ++i) last = m.train_step(batch);
  CHECK(m.steps_done() == 60);
  CHECK(last < 0.9f * first);
  CHECK(last < first);
}

TEST_CASE("training budget freezes the module") {
  SlotConfig c = tiny_config();
  c.num_train_steps = 3;
  core::Rng rng(81);
  SlotModule<float> m(c, rng);
  Tf batch = Tf::uniform({2, 3, 8, 8}, rng, 0.f, 1.f);
  CHECK(!m.exhausted());
  for (int i = 0; i < 3; ++i) m.train_step(batch);
  CHECK(m.exhausted());
  CHECK(m.steps_done() == 3);
  CHECK_THROWS_AS(m.train_step(batch), std::logic_error);
}

TEST_CASE("checkpoint round trip resumes training exactly") {
  SlotConfig c = tiny_config();
  core::Rng rng1(91), rng2(92);
  SlotModule<float> m1(c, rng1);
  Tf batch = Tf::uniform({2, 3, 8, 8}, rng1, 0.f, 1.f);
  for (int i = 0; i < 4; ++i) m1.train_step(batch);

  std::ostringstream os;
  m1.save(os);
  SlotModule<float> m2(c, rng2);
  std::istringstream is(os.str());
  m2.load(is);

  CHECK(m2.steps_done() == 4);
  for (const auto& p : m1.params().all()) {
    CHECK(max_abs_diff(p.value, m2.params().at(p.name)) == 0.f);
  }
  for (int i = 0; i < 3; ++i) {
    const float a = m1.train_step(batch);
    const float b = m2.train_step(batch);
    CHECK(a == b);
  }

  SlotConfig other = tiny_config();
  other.num_slots = 4;
  core::Rng rng3(93);
  SlotModule<float> m3(other, rng3);
  std::istringstream is2(os.str());
  CHECK_THROWS_AS(m3.load(is2), ConfigError);
}

// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "tractseg/error.hpp"
#include "tractseg/optim.hpp"
#include "tractseg/trainer.hpp"

using namespace tractseg;

TEST_SUITE("cosine schedule") {
  TEST_CASE("5e-3 at the start, 2.5e-3 halfway, 0 at the end") {
    TrainConfig cfg;
    CHECK(cfg.lr_init == 5e-3);
    CHECK(cfg.epochs == 80);
    CHECK(cosine_lr(0, cfg) == 5e-3);
    CHECK(cosine_lr(40, cfg) == 2.5e-3);
    CHECK(cosine_lr(80, cfg) == 0.0);
  }

  TEST_CASE("matches the closed form and decreases monotonically") {
    CosineSchedule s{1e-2, 1e-4, 37};
    double prev = s.at(0);
    for (std::size_t t = 1; t <= 37; ++t) {
      const double expect = 1e-4 + 0.5 * (1e-2 - 1e-4) * (1.0 + std::cos(std::numbers::pi * t / 37.0));
      CHECK(s.at(t) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(s.at(t) < prev);
      prev = s.at(t);
    }
    CHECK(s.at(37) == 1e-4);
  }

  TEST_CASE("t beyond the horizon is rejected") {
    CHECK_THROWS_AS(CosineSchedule{}.at(81), ConfigError);
  }
}

TEST_SUITE("adam") {
  TEST_CASE("first step moves each parameter by lr against the gradient sign") {
    Tensor w = Tensor::from_data({4}, {1.0f, -2.0f, 0.5f, 3.0f}, true);
    std::vector<NamedTensor> params{{"w", w}};
    auto g = w.mutable_grad();
    g[0] = 0.3f;
    g[1] = -7.0f;
    g[2] = 1e-3f;
    g[3] = 0.0f;
    AdamState state = AdamState::for_parameters(params);
    adam_step(params, state, 0.01f);
    CHECK(w.data()[0] == doctest::Approx(0.99).epsilon(1e-5));
    CHECK(w.data()[1] == doctest::Approx(-1.99).epsilon(1e-5));
    CHECK(w.data()[2] == doctest::Approx(0.49).epsilon(1e-4));
    CHECK(w.data()[3] == 3.0f);
    CHECK(state.step == 1);
  }

  TEST_CASE("lr = 0 leaves parameters unchanged") {
    Tensor w = Tensor::from_data({2}, {1.0f, -2.0f}, true);
    std::vector<NamedTensor> params{{"w", w}};
    w.mutable_grad()[0] = 5.0f;
    AdamState state = AdamState::for_parameters(params);
    for (int i = 0; i < 3; ++i) adam_step(params, state, 0.0f);
    CHECK(w.data()[0] == 1.0f);
    CHECK(w.data()[1] == -2.0f);
  }

  TEST_CASE("minimizes a quadratic") {
    Tensor w = Tensor::from_data({3}, {4.0f, -3.0f, 1.0f}, true);
    std::vector<NamedTensor> params{{"w", w}};
    AdamState state = AdamState::for_parameters(params);
    for (int i = 0; i < 2000; ++i) {
      w.zero_grad();
      backward(sum(mul(w, w)));
      adam_step(params, state, 0.05f);
    }
    for (float v : w.data()) CHECK(std::abs(v) < 1e-2);
  }

  TEST_CASE("zero_grad clears every parameter gradient") {
    UNetConfig c;
    c.depth = 2;
    c.base_channels = 2;
    Model m = Model::build(c);
    backward(mean(m.forward(Tensor::full({1, 1, 8, 8}, 0.5f), true)));
    m.zero_grad();
    for (const auto& p : m.parameters())
      for (float g : p.tensor.grad()) CHECK(g == 0.0f);
  }
}

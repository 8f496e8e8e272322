#include <catch2/catch_amalgamated.hpp>

#include "edgellm/optim.hpp"

using namespace edgellm;

TEST_CASE("adamw with lr 0 and no decay is a no-op") {
  auto p = tensor_from({3}, {1.0f, -2.0f, 0.5f});
  p->requires_grad = true;
  p->ensure_grad();
  p->grad = {1.0f, 2.0f, 3.0f};
  AdamHyperparams hp;
  hp.weight_decay = 0.0f;
  OptimizerState state({p}, hp);
  adamw_step({p}, state, 0.0f);
  REQUIRE(p->data == std::vector<float>{1.0f, -2.0f, 0.5f});
  REQUIRE(state.step == 1);
}

TEST_CASE("first adamw step with unit gradient moves by about lr") {
  auto p = tensor_from({1}, {0.0f});
  p->requires_grad = true;
  p->ensure_grad();
  p->grad = {1.0f};
  AdamHyperparams hp;
  hp.weight_decay = 0.0f;
  OptimizerState state({p}, hp);
  const float lr = 0.1f;
  adamw_step({p}, state, lr);
  // bias-corrected mhat = 1, vhat = 1 at t=1 -> step = lr / (1 + eps)
  REQUIRE_THAT(p->data[0], Catch::Matchers::WithinAbs(-lr, 1e-6));
}

TEST_CASE("constant gradient drives update magnitude to lr") {
  auto p = tensor_from({1}, {0.0f});
  p->requires_grad = true;
  p->ensure_grad();
  AdamHyperparams hp;
  hp.weight_decay = 0.0f;
  OptimizerState state({p}, hp);
  const float lr = 0.01f;
  const float g = 0.37f;
  float prev = p->data[0];
  float last_delta = 0.0f;
  for (int i = 0; i < 2000; ++i) {
    p->grad = {g};
    adamw_step({p}, state, lr);
    last_delta = p->data[0] - prev;
    prev = p->data[0];
    REQUIRE(std::abs(last_delta) <= lr * 1.0001f);
  }
  // moments converge to (g, g^2); update -> lr * g / (|g| + eps)
  REQUIRE_THAT(std::abs(last_delta), Catch::Matchers::WithinAbs(lr, 1e-4));
}

TEST_CASE("weight decay is decoupled") {
  auto p = tensor_from({1}, {2.0f});
  p->requires_grad = true;
  p->ensure_grad();
  p->grad = {0.0f};
  AdamHyperparams hp;
  hp.weight_decay = 0.1f;
  OptimizerState state({p}, hp);
  adamw_step({p}, state, 0.5f);
  // zero gradient: only the decay term lr * wd * p applies
  REQUIRE_THAT(p->data[0], Catch::Matchers::WithinAbs(2.0f - 0.5f * 0.1f * 2.0f, 1e-6));
}

TEST_CASE("step counter advances by one per update") {
  auto p = tensor_from({2}, {1.0f, 1.0f});
  p->requires_grad = true;
  OptimizerState state({p});
  for (int i = 1; i <= 5; ++i) {
    adamw_step({p}, state, 0.0f);
    REQUIRE(state.step == i);
  }
}

TEST_CASE("adamw rejects mismatched state") {
  auto p = tensor_from({2}, {1.0f, 1.0f});
  auto q = tensor_from({3}, {1.0f, 1.0f, 1.0f});
  OptimizerState state({p});
  REQUIRE_THROWS_AS(adamw_step({p, q}, state, 0.1f), ShapeError);
}

TEST_CASE("negative lr is rejected") {
  auto p = tensor_from({1}, {1.0f});
  OptimizerState state({p});
  REQUIRE_THROWS_AS(adamw_step({p}, state, -0.1f), ContractError);
}

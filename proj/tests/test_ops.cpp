#include <catch2/catch_amalgamated.hpp>

#include "edgellm/ops.hpp"
#include "oracles.hpp"

using namespace edgellm;

namespace {

TensorPtr random_tensor(Shape shape, Rng& rng, float stddev = 1.0f) {
  auto t = tensor(std::move(shape));
  for (auto& v : t->data) v = rng.normal_f() * stddev;
  return t;
}

}  // namespace

TEST_CASE("matmul identity and hand cases") {
  auto eye = tensor_from({2, 2}, {1, 0, 0, 1});
  auto a = tensor_from({2, 2}, {1, 2, 3, 4});
  auto prod = matmul(eye, a);
  REQUIRE(prod->data == std::vector<float>{1, 2, 3, 4});

  auto row = tensor_from({1, 2}, {1, 2});
  auto col = tensor_from({2, 1}, {3, 4});
  REQUIRE(matmul(row, col)->data[0] == 11.0f);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  auto a = random_tensor({5, 7}, rng);
  auto b = random_tensor({7, 3}, rng);
  auto c = matmul(a, b);
  auto ref = oracle::matmul(oracle::to_double(a->data), oracle::to_double(b->data), 5, 7, 3);
  for (size_t i = 0; i < ref.size(); ++i) {
    REQUIRE_THAT(static_cast<double>(c->data[i]),
                 Catch::Matchers::WithinRel(ref[i], 1e-6) || Catch::Matchers::WithinAbs(ref[i], 1e-7));
  }
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = tensor({2, 3});
  auto b = tensor({2, 3});
  REQUIRE_THROWS_WITH(matmul(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                        Catch::Matchers::ContainsSubstring("x"));
}

TEST_CASE("linear matches oracle") {
  Rng rng(11);
  auto x = random_tensor({4, 6}, rng);
  auto w = random_tensor({5, 6}, rng);
  auto y = linear(x, w);
  auto ref = oracle::linear(oracle::to_double(x->data), oracle::to_double(w->data), 4, 6, 5);
  for (size_t i = 0; i < ref.size(); ++i) {
    REQUIRE_THAT(static_cast<double>(y->data[i]), Catch::Matchers::WithinAbs(ref[i], 1e-5));
  }
}

TEST_CASE("softmax basics") {
  auto x = tensor_from({2}, {0, 0});
  auto y = softmax(x, 0);
  REQUIRE_THAT(y->data[0], Catch::Matchers::WithinAbs(0.5, 1e-7));
  REQUIRE_THAT(y->data[1], Catch::Matchers::WithinAbs(0.5, 1e-7));

  auto z = softmax(tensor_from({3}, {1, 2, 3}), 0);
  auto ref = oracle::softmax_rows({1, 2, 3}, 1, 3);
  REQUIRE_THAT(static_cast<double>(z->data[0]), Catch::Matchers::WithinAbs(ref[0], 1e-6));
  REQUIRE_THAT(static_cast<double>(z->data[1]), Catch::Matchers::WithinAbs(ref[1], 1e-6));
  REQUIRE_THAT(static_cast<double>(z->data[2]), Catch::Matchers::WithinAbs(ref[2], 1e-6));
  REQUIRE_THAT(static_cast<double>(z->data[0]), Catch::Matchers::WithinAbs(0.0900, 5e-5));
  REQUIRE_THAT(static_cast<double>(z->data[1]), Catch::Matchers::WithinAbs(0.2447, 5e-5));
  REQUIRE_THAT(static_cast<double>(z->data[2]), Catch::Matchers::WithinAbs(0.6652, 5e-5));
}

TEST_CASE("softmax shift invariance and normalization") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor({4, 5}, rng, 3.0f);
    const float c = rng.normal_f() * 10.0f;
    auto shifted = tensor(x->shape);
    for (int64_t i = 0; i < x->numel(); ++i) shifted->data[i] = x->data[i] + c;
    for (int axis : {0, 1}) {
      auto y = softmax(x, axis);
      auto ys = softmax(shifted, axis);
      for (int64_t i = 0; i < y->numel(); ++i) {
        REQUIRE_THAT(y->data[i], Catch::Matchers::WithinAbs(ys->data[i], 1e-6));
      }
      // rows sum to one along the reduction axis
      const int64_t len = x->shape[axis];
      const int64_t inner = axis == 1 ? 1 : x->shape[1];
      const int64_t outer = y->numel() / (len * inner);
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          float total = 0.0f;
          for (int64_t i = 0; i < len; ++i) total += y->data[o * len * inner + i * inner + in];
          REQUIRE_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
        }
      }
    }
  }
}

TEST_CASE("softmax rejects non-finite input") {
  auto x = tensor_from({2}, {std::numeric_limits<float>::quiet_NaN(), 0.0f});
  REQUIRE_THROWS_AS(softmax(x, 0), NumericError);
}

TEST_CASE("rms_norm unit and hand cases") {
  auto gamma = ones({4});
  auto x = ones({4});
  auto y = rms_norm(x, gamma, 1e-12f);
  for (float v : y->data) REQUIRE_THAT(v, Catch::Matchers::WithinAbs(1.0, 1e-5));

  auto x2 = tensor_from({2}, {3, 4});
  auto y2 = rms_norm(x2, ones({2}), 0.0f);
  REQUIRE_THAT(y2->data[0], Catch::Matchers::WithinAbs(3.0 / std::sqrt(12.5), 1e-6));
  REQUIRE_THAT(y2->data[1], Catch::Matchers::WithinAbs(4.0 / std::sqrt(12.5), 1e-6));
  REQUIRE_THAT(y2->data[0], Catch::Matchers::WithinAbs(0.8485, 1e-4));
  REQUIRE_THAT(y2->data[1], Catch::Matchers::WithinAbs(1.1314, 1e-4));
}

TEST_CASE("rms_norm scale equivariance") {
  Rng rng(5);
  auto x = random_tensor({3, 8}, rng);
  auto gamma = random_tensor({8}, rng);
  for (float alpha : {0.25f, 2.0f, 17.0f}) {
    auto scaled = tensor(x->shape);
    for (int64_t i = 0; i < x->numel(); ++i) scaled->data[i] = alpha * x->data[i];
    auto y = rms_norm(x, gamma, 0.0f);
    auto ys = rms_norm(scaled, gamma, 0.0f);
    for (int64_t i = 0; i < y->numel(); ++i) {
      REQUIRE_THAT(y->data[i], Catch::Matchers::WithinAbs(ys->data[i], 1e-5));
    }
  }
}

TEST_CASE("rope zero position is identity") {
  Rng rng(9);
  auto x = random_tensor({1, 2, 6}, rng);
  auto y = rope_apply(x, {0}, 10000.0f);
  REQUIRE(y->data == x->data);
}

TEST_CASE("rope d=2 hand rotation") {
  auto x = tensor_from({1, 2}, {1, 0});
  auto y = rope_apply(x, {1}, 10000.0f);
  REQUIRE_THAT(y->data[0], Catch::Matchers::WithinAbs(std::cos(1.0), 1e-6));
  REQUIRE_THAT(y->data[1], Catch::Matchers::WithinAbs(std::sin(1.0), 1e-6));
  REQUIRE_THAT(y->data[0], Catch::Matchers::WithinAbs(0.5403, 1e-4));
  REQUIRE_THAT(y->data[1], Catch::Matchers::WithinAbs(0.8415, 1e-4));
}

TEST_CASE("rope preserves pair norms and relative dot products") {
  Rng rng(13);
  const int64_t d = 8;
  auto q = random_tensor({1, d}, rng);
  auto v = random_tensor({1, d}, rng);
  auto pair_norms = [&](const TensorPtr& t) {
    std::vector<float> norms;
    for (int64_t j = 0; j < d / 2; ++j) {
      norms.push_back(std::hypot(t->data[2 * j], t->data[2 * j + 1]));
    }
    return norms;
  };
  auto dot = [&](const TensorPtr& a, const TensorPtr& b) {
    double acc = 0.0;
    for (int64_t i = 0; i < d; ++i) acc += static_cast<double>(a->data[i]) * b->data[i];
    return acc;
  };
  const auto base_norms = pair_norms(q);
  for (int64_t shift : {0, 3, 17, 101}) {
    auto qr = rope_apply(q, {5 + shift}, 10000.0f);
    auto vr = rope_apply(v, {2 + shift}, 10000.0f);
    auto q0 = rope_apply(q, {5}, 10000.0f);
    auto v0 = rope_apply(v, {2}, 10000.0f);
    REQUIRE_THAT(dot(qr, vr), Catch::Matchers::WithinAbs(dot(q0, v0), 1e-5));
    const auto norms = pair_norms(qr);
    for (size_t j = 0; j < norms.size(); ++j) {
      REQUIRE_THAT(norms[j], Catch::Matchers::WithinAbs(base_norms[j], 1e-6));
    }
  }
}

TEST_CASE("rope rejects odd dimension") {
  auto x = tensor({1, 3});
  REQUIRE_THROWS_AS(rope_apply(x, {0}, 10000.0f), ConfigError);
}

TEST_CASE("attention with a single key returns its value row") {
  Rng rng(17);
  auto q = random_tensor({1, 4, 6}, rng);
  auto k = random_tensor({1, 2, 6}, rng);
  auto v = random_tensor({1, 2, 6}, rng);
  auto out = attention(q, k, v, {0}, -1);
  for (int64_t h = 0; h < 4; ++h) {
    const int64_t g = h / 2;
    for (int64_t c = 0; c < 6; ++c) {
      REQUIRE_THAT(out->data[h * 6 + c],
                   Catch::Matchers::WithinAbs(v->data[g * 6 + c], 1e-6));
    }
  }
}

TEST_CASE("attention matches grouped-query oracle, and degenerates to MHA") {
  Rng rng(23);
  const int64_t t_len = 12, dh = 4;
  std::vector<int32_t> doc_of = {0, 0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  for (auto [hq, hkv] : std::vector<std::pair<int64_t, int64_t>>{{4, 2}, {4, 4}, {6, 1}}) {
    auto q = random_tensor({t_len, hq, dh}, rng);
    auto k = random_tensor({t_len, hkv, dh}, rng);
    auto v = random_tensor({t_len, hkv, dh}, rng);
    for (int64_t window : {-1, 3}) {
      auto out = attention(q, k, v, doc_of, window);
      auto ref = oracle::attention(oracle::to_double(q->data), oracle::to_double(k->data),
                                   oracle::to_double(v->data), doc_of, window, t_len, hq, hkv, dh);
      for (size_t i = 0; i < ref.size(); ++i) {
        REQUIRE_THAT(static_cast<double>(out->data[i]), Catch::Matchers::WithinAbs(ref[i], 1e-5));
      }
    }
  }
}

TEST_CASE("local attention equals global attention when T <= window") {
  Rng rng(29);
  const int64_t t_len = 16;
  std::vector<int32_t> doc_of(t_len, 0);
  auto q = random_tensor({t_len, 2, 8}, rng);
  auto k = random_tensor({t_len, 2, 8}, rng);
  auto v = random_tensor({t_len, 2, 8}, rng);
  auto local = attention(q, k, v, doc_of, 16);
  auto global = attention(q, k, v, doc_of, -1);
  for (int64_t i = 0; i < local->numel(); ++i) {
    REQUIRE_THAT(local->data[i], Catch::Matchers::WithinAbs(global->data[i], 1e-6));
  }
}

#include <catch2/catch_amalgamated.hpp>

#include "edgellm/fake_quant.hpp"
#include "edgellm/optim.hpp"

using namespace edgellm;

namespace {

TensorPtr random_tensor(Shape shape, Rng& rng, float stddev = 1.0f) {
  auto t = tensor(std::move(shape));
  for (auto& v : t->data) v = rng.normal_f() * stddev;
  return t;
}

float weighted_loss_backward(const TensorPtr& out, const std::vector<float>& w, Tape& tape) {
  auto loss = tensor({1});
  loss->requires_grad = true;
  float acc = 0.0f;
  for (int64_t i = 0; i < out->numel(); ++i) acc += w[static_cast<size_t>(i)] * out->data[i];
  tape.record("probe_dot", {out}, loss, [out, w] {
    out->ensure_grad();
    for (int64_t i = 0; i < out->numel(); ++i) out->grad[i] += w[static_cast<size_t>(i)];
  });
  tape.backward(loss);
  return acc;
}

}  // namespace

TEST_CASE("null scheme reduces to plain linear") {
  Rng rng(61);
  auto x = random_tensor({3, 8}, rng);
  auto w = random_tensor({4, 8}, rng);
  auto a = fake_quant_linear(x, w, nullptr, nullptr);
  auto b = linear(x, w);
  REQUIRE(a->data == b->data);
}

TEST_CASE("range mode contracts") {
  Rng rng(62);
  auto x = random_tensor({2, 8}, rng);
  auto w = random_tensor({4, 8}, rng);
  QuantScheme computed = QuantScheme::cpu();
  computed.group_size = 8;
  auto ranges = init_ranges(*w, computed, "w");
  REQUIRE_THROWS_AS(fake_quant_linear(x, w, &computed, &ranges), ContractError);

  QuantScheme learnable = computed;
  learnable.range_mode = RangeMode::Learnable;
  REQUIRE_THROWS_AS(fake_quant_linear(x, w, &learnable, nullptr), ContractError);
}

TEST_CASE("forward equals dequantize(quantize(W)) composed with quantized activations") {
  Rng rng(63);
  auto x = random_tensor({5, 16}, rng);
  auto w = random_tensor({6, 16}, rng, 0.5f);
  QuantScheme scheme = QuantScheme::cpu();
  scheme.group_size = 8;
  auto out = fake_quant_linear(x, w, &scheme, nullptr);

  auto w_hat = dequantize(quantize_weights(*w, scheme));
  auto x_hat = tensor(x->shape);
  x_hat->data = x->data;
  qdq_rows_inplace(x_hat->data.data(), 5, 16);
  auto ref = linear(x_hat, w_hat);
  for (int64_t i = 0; i < out->numel(); ++i) {
    REQUIRE_THAT(out->data[i], Catch::Matchers::WithinAbs(ref->data[i], 1e-5f));
  }
}

TEST_CASE("straight-through weight gradient matches finite differences at probe points") {
  // Learnable-range mode pins the scales, so stepping a weight by 2s shifts its
  // code by exactly 2 and the staircase secant equals the straight-through
  // slope away from the clip region.
  Rng rng(64);
  const int64_t t_len = 4, in = 16, out_dim = 3;
  auto x = random_tensor({t_len, in}, rng);
  auto w = random_tensor({out_dim, in}, rng, 0.4f);
  QuantScheme scheme = QuantScheme::cpu();
  scheme.group_size = 8;
  scheme.range_mode = RangeMode::Learnable;
  auto ranges = init_ranges(*w, scheme, "w");

  Tape tape;
  w->requires_grad = true;
  auto out = fake_quant_linear(x, w, &scheme, &ranges, &tape);
  std::vector<float> probe(static_cast<size_t>(out->numel()));
  for (auto& v : probe) v = rng.normal_f();
  weighted_loss_backward(out, probe, tape);

  auto loss_at = [&](const TensorPtr& wp) {
    auto y = fake_quant_linear(x, wp, &scheme, &ranges);
    double acc = 0.0;
    for (int64_t i = 0; i < y->numel(); ++i) acc += probe[static_cast<size_t>(i)] * y->data[i];
    return acc;
  };

  int checked = 0;
  for (int64_t e = 0; e < w->numel() && checked < 12; ++e) {
    const int64_t g = e / 8;
    const float s = symmetric_scale(ranges.w_min->data[static_cast<size_t>(g)],
                                    ranges.w_max->data[static_cast<size_t>(g)]);
    const float code = round_half_even(w->data[static_cast<size_t>(e)] / s);
    if (code < -5.0f || code > 4.0f) continue;  // keep +-2 steps inside the clip range
    auto wp = tensor(w->shape);
    wp->data = w->data;
    const float h = 2.0f * s;
    wp->data[static_cast<size_t>(e)] = w->data[static_cast<size_t>(e)] + h;
    const double fp = loss_at(wp);
    wp->data[static_cast<size_t>(e)] = w->data[static_cast<size_t>(e)] - h;
    const double fm = loss_at(wp);
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = w->grad[static_cast<size_t>(e)];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    INFO("element " << e << " numeric " << numeric << " analytic " << analytic);
    REQUIRE(std::abs(numeric - analytic) / denom < 1e-2);
    ++checked;
  }
  REQUIRE(checked >= 8);
}

TEST_CASE("clipped weights get zero gradient while their range parameter learns") {
  auto x = tensor_from({1, 4}, {1.0f, 1.0f, 1.0f, 1.0f});
  auto w = tensor_from({1, 4}, {0.1f, -0.2f, 0.3f, 5.0f});  // last weight far outside range
  QuantScheme scheme = QuantScheme::cpu();
  scheme.group_size = 4;
  scheme.range_mode = RangeMode::Learnable;
  scheme.activations = ActQuant::None;
  RangeParams ranges;
  ranges.w_min = param({1}, "w_min");
  ranges.w_max = param({1}, "w_max");
  ranges.w_min->data[0] = -0.3f;
  ranges.w_max->data[0] = 0.3f;

  Tape tape;
  w->requires_grad = true;
  auto out = fake_quant_linear(x, w, &scheme, &ranges, &tape);
  weighted_loss_backward(out, {1.0f}, tape);

  REQUIRE(w->grad[3] == 0.0f);       // saturated code
  REQUIRE(w->grad[0] != 0.0f);       // in-range weight learns
  REQUIRE(ranges.w_max->grad[0] != 0.0f);
}

TEST_CASE("gradient descent on learnable ranges shrinks reconstruction error") {
  Rng rng(65);
  const int64_t rows = 6, cols = 32;
  auto w = tensor({rows, cols});
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t c = 0; c < cols; ++c) w->at(r, c) = rng.normal_f() * 0.4f;
  }
  QuantScheme scheme;
  scheme.granularity = WeightGranularity::Channel;
  scheme.group_size = 0;
  scheme.activations = ActQuant::None;
  scheme.range_mode = RangeMode::Learnable;
  auto ranges = init_ranges(*w, scheme, "w");
  // start three times too wide; descent should recover most of the gap to the
  // computed min/max ranges
  for (auto& v : ranges.w_min->data) v *= 3.0f;
  for (auto& v : ranges.w_max->data) v *= 3.0f;

  // identity input: output rows are the dequantized weights themselves
  auto eye = tensor({cols, cols});
  for (int64_t i = 0; i < cols; ++i) eye->at(i, i) = 1.0f;

  auto recon_error = [&] {
    auto y = fake_quant_linear(eye, w, &scheme, &ranges);
    double acc = 0.0;
    for (int64_t o = 0; o < rows; ++o) {
      for (int64_t i = 0; i < cols; ++i) {
        const double d = y->at(i, o) - w->at(o, i);
        acc += d * d;
      }
    }
    return acc;
  };

  auto neg_wt = tensor({cols, rows});
  for (int64_t o = 0; o < rows; ++o) {
    for (int64_t i = 0; i < cols; ++i) neg_wt->at(i, o) = -w->at(o, i);
  }

  const double before = recon_error();
  OptimizerState opt({ranges.w_min, ranges.w_max}, {0.9f, 0.999f, 1e-8f, 0.0f});
  for (int step = 0; step < 400; ++step) {
    Tape tape;
    auto y = fake_quant_linear(eye, w, &scheme, &ranges, &tape);
    auto diff = add(y, neg_wt, &tape);
    auto loss = sum(mul(diff, diff, &tape), &tape);
    ranges.w_min->zero_grad();
    ranges.w_max->zero_grad();
    tape.backward(loss);
    adamw_step({ranges.w_min, ranges.w_max}, opt, 0.02f);
  }
  const double after = recon_error();

  // reference: error with computed min/max ranges
  auto computed = init_ranges(*w, scheme, "w_ref");
  auto learned_min = ranges.w_min->data, learned_max = ranges.w_max->data;
  ranges.w_min->data = computed.w_min->data;
  ranges.w_max->data = computed.w_max->data;
  const double at_computed = recon_error();
  ranges.w_min->data = learned_min;
  ranges.w_max->data = learned_max;

  INFO("before " << before << " after " << after << " at_computed " << at_computed);
  REQUIRE(after < before * 0.5);
  REQUIRE(after < at_computed * 1.25);
}

TEST_CASE("per-token quantize-dequantize is straight-through") {
  Rng rng(66);
  auto x = random_tensor({3, 8}, rng);
  Tape tape;
  x->requires_grad = true;
  auto y = quant_dequant_tokens(x, &tape);
  std::vector<float> probe(static_cast<size_t>(y->numel()));
  for (auto& v : probe) v = rng.normal_f();
  weighted_loss_backward(y, probe, tape);
  for (int64_t i = 0; i < x->numel(); ++i) REQUIRE(x->grad[i] == probe[static_cast<size_t>(i)]);
  // values land on the int8 grid
  auto q = quantize_activation_per_token(*x);
  auto ref = dequantize_per_token(q, x->shape);
  REQUIRE(y->data == ref->data);
}

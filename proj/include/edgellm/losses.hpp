#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "edgellm/ops.hpp"

namespace edgellm {

// Mean next-token cross entropy in nats. Targets are token ids in [0, V);
// a target of -1 masks the position out of the mean.
inline TensorPtr ce_loss(const TensorPtr& logits, const std::vector<int32_t>& targets,
                         Tape* tape = nullptr) {
  if (logits->rank() != 2) throw ShapeError("ce_loss: logits must be [T, vocab]");
  const int64_t t_len = logits->shape[0], vocab = logits->shape[1];
  if (static_cast<int64_t>(targets.size()) != t_len) {
    throw ShapeError("ce_loss: targets length mismatch");
  }
  int64_t active = 0;
  for (int32_t y : targets) {
    if (y < -1 || y >= vocab) {
      throw InputError("ce_loss: target " + std::to_string(y) + " outside [-1, vocab)");
    }
    if (y >= 0) ++active;
  }
  if (active == 0) throw ContractError("ce_loss: all positions masked");

  const bool taped = detail::want_grad(tape, {logits.get()});
  std::shared_ptr<std::vector<float>> probs;
  if (taped) probs = std::make_shared<std::vector<float>>(logits->data.size());

  double acc = 0.0;
  for (int64_t t = 0; t < t_len; ++t) {
    if (targets[static_cast<size_t>(t)] < 0 && !taped) continue;
    const float* row = logits->data.data() + t * vocab;
    float mx = row[0];
    for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
    float denom = 0.0f;
    for (int64_t v = 0; v < vocab; ++v) denom += std::exp(row[v] - mx);
    const float log_denom = std::log(denom);
    if (taped) {
      float* prow = probs->data() + t * vocab;
      const float inv = 1.0f / denom;
      for (int64_t v = 0; v < vocab; ++v) prow[v] = std::exp(row[v] - mx) * inv;
    }
    const int32_t y = targets[static_cast<size_t>(t)];
    if (y >= 0) acc += -static_cast<double>(row[y] - mx - log_denom);
  }
  auto out = tensor({1});
  out->data[0] = static_cast<float>(acc / static_cast<double>(active));

  if (taped) {
    out->requires_grad = true;
    tape->record("ce_loss", {logits}, out, [logits, out, probs, targets, t_len, vocab, active] {
      logits->ensure_grad();
      const float g = out->grad[0] / static_cast<float>(active);
      for (int64_t t = 0; t < t_len; ++t) {
        const int32_t y = targets[static_cast<size_t>(t)];
        if (y < 0) continue;
        const float* prow = probs->data() + t * vocab;
        float* lg = logits->grad.data() + t * vocab;
        for (int64_t v = 0; v < vocab; ++v) lg[v] += g * prow[v];
        lg[y] -= g;
      }
    });
  }
  return out;
}

// Forward KL divergence sum_v p_T(v) ln(p_T(v)/p_S(v)) at the given softmax
// temperature, averaged over positions. Gradients flow into the student only;
// the teacher side is treated as a constant.
inline TensorPtr kd_forward_kl(const TensorPtr& teacher_logits, const TensorPtr& student_logits,
                               float temperature, Tape* tape = nullptr) {
  check_same_shape(*teacher_logits, *student_logits, "kd_forward_kl");
  if (student_logits->rank() != 2) throw ShapeError("kd_forward_kl: logits must be [T, vocab]");
  if (!(temperature > 0.0f)) throw ContractError("kd_forward_kl: temperature must be > 0");
  const int64_t t_len = student_logits->shape[0], vocab = student_logits->shape[1];

  const bool taped = detail::want_grad(tape, {student_logits.get()});
  auto p_t = std::make_shared<std::vector<float>>(student_logits->data.size());
  auto p_s = std::make_shared<std::vector<float>>(student_logits->data.size());

  auto fill_probs = [&](const TensorPtr& logits, std::vector<float>& dst) {
    for (int64_t t = 0; t < t_len; ++t) {
      const float* row = logits->data.data() + t * vocab;
      float mx = row[0];
      for (int64_t v = 1; v < vocab; ++v) mx = std::max(mx, row[v]);
      float denom = 0.0f;
      float* drow = dst.data() + t * vocab;
      for (int64_t v = 0; v < vocab; ++v) {
        const float e = std::exp((row[v] - mx) / temperature);
        drow[v] = e;
        denom += e;
      }
      const float inv = 1.0f / denom;
      for (int64_t v = 0; v < vocab; ++v) drow[v] *= inv;
    }
  };
  fill_probs(teacher_logits, *p_t);
  fill_probs(student_logits, *p_s);

  double acc = 0.0;
  for (int64_t i = 0; i < t_len * vocab; ++i) {
    const float pt = (*p_t)[static_cast<size_t>(i)];
    if (pt <= 0.0f) continue;
    acc += static_cast<double>(pt) *
           (std::log(static_cast<double>(pt)) - std::log(static_cast<double>((*p_s)[static_cast<size_t>(i)])));
  }
  auto out = tensor({1});
  out->data[0] = static_cast<float>(acc / static_cast<double>(t_len));

  if (taped) {
    out->requires_grad = true;
    tape->record("kd_forward_kl", {student_logits}, out,
                 [student_logits, out, p_t, p_s, t_len, vocab, temperature] {
      student_logits->ensure_grad();
      const float g = out->grad[0] / (static_cast<float>(t_len) * temperature);
      float* sg = student_logits->grad.data();
      for (int64_t i = 0; i < t_len * vocab; ++i) {
        sg[i] += g * ((*p_s)[static_cast<size_t>(i)] - (*p_t)[static_cast<size_t>(i)]);
      }
    });
  }
  return out;
}

}  // namespace edgellm

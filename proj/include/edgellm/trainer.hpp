#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgellm/losses.hpp"
#include "edgellm/model.hpp"
#include "edgellm/optim.hpp"
#include "edgellm/schedule.hpp"

namespace edgellm {

enum class LossMode { CE, KD, SelfKD };

inline const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::CE: return "ce";
    case LossMode::KD: return "kd";
    case LossMode::SelfKD: return "self_kd";
  }
  return "?";
}

// One training phase: data distribution, loss mode, context length, and step
// budget. Phases 1-4 differ only in these fields.
struct PhasePlan {
  int phase_id = 1;
  LossMode loss = LossMode::CE;
  int64_t ctx_len = 64;
  int64_t steps = 100;
  int64_t packs_per_step = 4;
  float kd_temperature = 1.0f;
  LRSchedule schedule;
  std::function<double(int64_t)> lr_override;  // optional custom decay (e.g. linear to zero)
  AdamHyperparams adam{0.9f, 0.999f, 1e-8f, 0.01f};
  uint64_t seed = 0;
  int64_t log_every = 50;

  void validate() const {
    if (phase_id < 1 || phase_id > 4) throw ConfigError("PhasePlan: phase_id must be 1..4");
    if (steps < 0) throw ConfigError("PhasePlan: steps must be >= 0");
    if (ctx_len < 2) throw ConfigError("PhasePlan: ctx_len must be >= 2");
    if (packs_per_step < 1) throw ConfigError("PhasePlan: packs_per_step must be >= 1");
    if (!(kd_temperature > 0.0f)) throw ConfigError("PhasePlan: kd_temperature must be > 0");
    if (!lr_override) schedule.validate();
  }
};

struct StepMetrics {
  int64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double student_flops = 0.0;
  double teacher_flops = 0.0;
};

inline nlohmann::json metrics_to_json(const StepMetrics& m) {
  return {{"step", m.step},
          {"lr", m.lr},
          {"loss", m.loss},
          {"student_flops", m.student_flops},
          {"teacher_flops", m.teacher_flops}};
}

// Supplies the packed batches for one step. Must be a deterministic function
// of (step, rng state) so runs reproduce bitwise.
using BatchProvider = std::function<std::vector<PackedSequence>(int64_t step, Rng& rng)>;

struct TrainOptions {
  ForwardOptions forward;
  std::vector<TensorPtr> extra_params;  // e.g. learnable quantization ranges
};

// Runs one phase in place on the checkpoint's tensors and returns the metric
// log. Teacher is required for KD and SelfKD; its logits are recomputed over
// exactly the same packed inputs the student sees.
inline std::vector<StepMetrics> train_phase(Checkpoint& ckpt, const PhasePlan& plan,
                                            const BatchProvider& provider,
                                            const Checkpoint* teacher_ckpt = nullptr,
                                            const TrainOptions& opts = {}) {
  plan.validate();
  const bool needs_teacher = plan.loss != LossMode::CE;
  if (needs_teacher && teacher_ckpt == nullptr) {
    throw ContractError("train_phase: loss mode requires a teacher checkpoint");
  }
  if (needs_teacher && teacher_ckpt->config.vocab_size != ckpt.config.vocab_size) {
    throw ContractError("train_phase: teacher/student vocab mismatch (" +
                        std::to_string(teacher_ckpt->config.vocab_size) + " vs " +
                        std::to_string(ckpt.config.vocab_size) + ")");
  }

  auto model = bind_model(ckpt);
  model.set_requires_grad(true);
  Model teacher;
  if (needs_teacher) teacher = bind_model(*teacher_ckpt);

  auto params = model.parameters();
  for (const auto& p : opts.extra_params) {
    p->requires_grad = true;
    params.push_back(p);
  }
  OptimizerState opt_state(params, plan.adam);

  const double student_param_flops = 2.0 * static_cast<double>(param_count(ckpt.config));
  const double teacher_param_flops =
      needs_teacher ? 2.0 * static_cast<double>(param_count(teacher_ckpt->config)) : 0.0;

  Rng rng(plan.seed);
  std::vector<StepMetrics> log;
  for (int64_t step = 0; step < plan.steps; ++step) {
    const double lr = plan.lr_override
                          ? plan.lr_override(step)
                          : lr_at(std::min(step, plan.schedule.total_steps), plan.schedule);
    auto packs = provider(step, rng);
    if (packs.empty()) throw ContractError("train_phase: provider returned no packs");

    for (auto& p : params) p->zero_grad();
    double loss_acc = 0.0;
    int64_t tokens = 0;
    const float inv_packs = 1.0f / static_cast<float>(packs.size());
    for (const auto& pack : packs) {
      Tape tape;
      auto logits = model_forward(model, pack, &tape, opts.forward);
      TensorPtr loss;
      if (plan.loss == LossMode::CE) {
        loss = ce_loss(logits, pack.targets, &tape);
      } else {
        auto teacher_logits = model_forward(teacher, pack);
        loss = kd_forward_kl(teacher_logits, logits, plan.kd_temperature, &tape);
      }
      loss_acc += static_cast<double>(loss->data[0]);
      tokens += pack.size();
      auto scaled = scale(loss, inv_packs, &tape);
      tape.backward(scaled);
    }
    adamw_step(params, opt_state, static_cast<float>(lr));

    StepMetrics m;
    m.step = step;
    m.lr = lr;
    m.loss = loss_acc / static_cast<double>(packs.size());
    m.student_flops = 3.0 * student_param_flops * static_cast<double>(tokens);  // fwd + bwd
    m.teacher_flops = teacher_param_flops * static_cast<double>(tokens);
    if (plan.log_every > 0 && (step % plan.log_every == 0 || step + 1 == plan.steps)) {
      log.push_back(m);
    }
  }

  ckpt.phase = std::string("phase") + std::to_string(plan.phase_id);
  ckpt.step += plan.steps;
  return log;
}

// ----------------------------- evaluation helpers -----------------------------

inline double evaluate_ce(const Checkpoint& ckpt, const std::vector<PackedSequence>& packs,
                          const ForwardOptions& opts = {}) {
  auto model = bind_model(ckpt);
  double total = 0.0;
  int64_t count = 0;
  for (const auto& pack : packs) {
    auto logits = model_forward(model, pack, nullptr, opts);
    int64_t active = 0;
    for (int32_t t : pack.targets) active += t >= 0 ? 1 : 0;
    total += static_cast<double>(ce_loss(logits, pack.targets)->data[0]) * static_cast<double>(active);
    count += active;
  }
  return total / static_cast<double>(count);
}

inline double evaluate_next_token_accuracy(const Checkpoint& ckpt,
                                           const std::vector<PackedSequence>& packs,
                                           const ForwardOptions& opts = {}) {
  auto model = bind_model(ckpt);
  int64_t hits = 0, total = 0;
  for (const auto& pack : packs) {
    auto logits = model_forward(model, pack, nullptr, opts);
    for (int64_t t = 0; t < pack.size(); ++t) {
      const int32_t target = pack.targets[static_cast<size_t>(t)];
      if (target < 0) continue;
      int64_t best = 0;
      for (int64_t v = 1; v < logits->shape[1]; ++v) {
        if (logits->at(t, v) > logits->at(t, best)) best = v;
      }
      hits += best == target ? 1 : 0;
      ++total;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace edgellm

#pragma once

#include <cstdint>
#include <vector>

#include "edgellm/trainer.hpp"

namespace edgellm {

// Context extension by distillation over packed short documents: short docs
// are packed to long_ctx with continuous positions and block-causal masks, and
// the student matches the long-context teacher's logits over the same packed
// input. No document longer than l_short ever enters the data; that premise is
// asserted on every batch.
struct IpdConfig {
  int64_t long_ctx = 256;
  int64_t l_short = 64;
  int64_t steps = 400;
  int64_t packs_per_step = 2;
  int64_t docs_per_pack_budget = 0;  // 0: fill packs greedily to long_ctx
  float kd_temperature = 1.0f;
  double max_lr = 1e-3;
  uint64_t seed = 0;
};

inline std::vector<StepMetrics> ipd_run(Checkpoint& student, const Checkpoint& teacher,
                                        const std::vector<std::vector<int32_t>>& short_docs,
                                        const IpdConfig& cfg) {
  if (teacher.config.max_context < cfg.long_ctx) {
    throw ContractError("ipd_run: teacher max_context below long_ctx");
  }
  if (student.config.max_context < cfg.long_ctx) {
    throw ContractError("ipd_run: student max_context below long_ctx");
  }
  if (short_docs.empty()) throw ContractError("ipd_run: no documents");
  for (const auto& doc : short_docs) {
    if (static_cast<int64_t>(doc.size()) > cfg.l_short) {
      throw ContractError("ipd_run: document of length " + std::to_string(doc.size()) +
                          " violates the short-data premise (l_short " +
                          std::to_string(cfg.l_short) + ")");
    }
  }

  PhasePlan plan;
  plan.phase_id = 2;
  plan.loss = LossMode::KD;
  plan.ctx_len = cfg.long_ctx;
  plan.steps = cfg.steps;
  plan.packs_per_step = cfg.packs_per_step;
  plan.kd_temperature = cfg.kd_temperature;
  plan.seed = cfg.seed;
  plan.adam.weight_decay = 0.0f;
  plan.schedule.max_lr = cfg.max_lr;
  plan.schedule.final_lr = 0.0;
  plan.schedule.warmup_steps = std::max<int64_t>(1, cfg.steps / 20);
  plan.schedule.total_steps = std::max<int64_t>(cfg.steps, plan.schedule.warmup_steps + 1);

  const int64_t l_short = cfg.l_short;
  const int64_t long_ctx = cfg.long_ctx;
  auto provider = [&short_docs, l_short, long_ctx, packs = cfg.packs_per_step](int64_t, Rng& rng) {
    std::vector<std::vector<int32_t>> docs;
    int64_t budget = long_ctx * packs;
    int64_t used = 0;
    while (used < budget) {
      const auto& doc = short_docs[rng.below(short_docs.size())];
      if (static_cast<int64_t>(doc.size()) > l_short) {
        throw ContractError("ipd_run: long document reached the batch assembly");
      }
      used += static_cast<int64_t>(doc.size());
      docs.push_back(doc);
    }
    auto packed = pack_documents(docs, long_ctx);
    for (const auto& p : packed) {
      // premise holds per batch: continuous positions over short docs only
      for (int64_t d = 0; d + 1 < p.doc_count(); ++d) {
        if (p.doc_starts[static_cast<size_t>(d + 1)] - p.doc_starts[static_cast<size_t>(d)] >
            l_short) {
          throw ContractError("ipd_run: packed document exceeds l_short");
        }
      }
    }
    return packed;
  };

  return train_phase(student, plan, provider, &teacher);
}

}  // namespace edgellm

#pragma once

#include <map>
#include <string>
#include <vector>

#include "edgellm/fake_quant.hpp"
#include "edgellm/trainer.hpp"

namespace edgellm {

inline Checkpoint clone_checkpoint(const Checkpoint& ckpt) {
  Checkpoint out;
  out.config = ckpt.config;
  out.phase = ckpt.phase;
  out.step = ckpt.step;
  out.notes = ckpt.notes;
  for (const auto& [name, t] : ckpt.tensors) {
    auto copy = tensor(t->shape);
    copy->data = t->data;
    copy->name = name;
    out.tensors.emplace(name, std::move(copy));
  }
  out.qtensors = ckpt.qtensors;
  return out;
}

// One-shot round-to-nearest quantization of every weight matrix (embeddings
// included); norm gains stay float. Needs no data. Converting an
// already-quantized checkpoint is the identity.
inline Checkpoint ptq_convert(const Checkpoint& ckpt, const QuantScheme& scheme) {
  if (ckpt.quantized()) return clone_checkpoint(ckpt);
  Checkpoint out;
  out.config = ckpt.config;
  out.phase = "ptq";
  out.step = ckpt.step;
  out.notes = ckpt.notes;
  for (const auto& [name, t] : ckpt.tensors) {
    if (t->rank() > 2) {
      throw ContractError("ptq_convert: unsupported tensor rank for '" + name + "'");
    }
    if (t->rank() == 2) {
      out.qtensors.emplace(name, quantize_weights(*t, scheme));
    } else {
      auto copy = tensor(t->shape);
      copy->data = t->data;
      copy->name = name;
      out.tensors.emplace(name, std::move(copy));
    }
  }
  return out;
}

struct QatResult {
  Checkpoint master;     // float weights after quantization-aware training
  Checkpoint quantized;  // int4 materialization (learned ranges if enabled)
  std::vector<StepMetrics> log;
};

// Quantization-aware training: fake-quant forward with straight-through
// backward, distilling against the full-precision starting checkpoint by
// default (plan.loss = SelfKD). steps = 0 degenerates to PTQ.
inline QatResult qat_train(const Checkpoint& float_ckpt, const QuantScheme& scheme,
                           const PhasePlan& plan, const BatchProvider& provider,
                           const Checkpoint* teacher = nullptr) {
  if (float_ckpt.quantized()) {
    throw ContractError("qat_train: expected a full-precision checkpoint");
  }
  QatResult res;
  res.master = clone_checkpoint(float_ckpt);

  Checkpoint self_teacher;
  const Checkpoint* teacher_ptr = teacher;
  if (plan.loss != LossMode::CE && teacher_ptr == nullptr) {
    self_teacher = clone_checkpoint(float_ckpt);
    teacher_ptr = &self_teacher;
  }
  if (plan.loss == LossMode::SelfKD && teacher_ptr->config.vocab_size != float_ckpt.config.vocab_size) {
    throw ContractError("qat_train: self-distillation teacher must match the model");
  }

  std::map<std::string, RangeParams> ranges;
  TrainOptions opts;
  opts.forward.fake_quant = &scheme;
  if (scheme.range_mode == RangeMode::Learnable) {
    for (const auto& [name, t] : res.master.tensors) {
      if (t->rank() != 2) continue;
      auto r = init_ranges(*t, scheme, name);
      auto [it, inserted] = ranges.emplace(name, std::move(r));
      opts.extra_params.push_back(it->second.w_min);
      opts.extra_params.push_back(it->second.w_max);
    }
    opts.forward.ranges = &ranges;
  }

  res.log = train_phase(res.master, plan, provider, teacher_ptr, opts);
  res.master.phase = "qat_master";

  // materialize the deployable int4 checkpoint
  res.quantized.config = res.master.config;
  res.quantized.phase = "qat";
  res.quantized.step = res.master.step;
  for (const auto& [name, t] : res.master.tensors) {
    if (t->rank() == 2) {
      if (scheme.range_mode == RangeMode::Learnable) {
        const auto& r = ranges.at(name);
        res.quantized.qtensors.emplace(
            name, quantize_weights_with_ranges(*t, scheme, r.w_min->data, r.w_max->data));
      } else {
        res.quantized.qtensors.emplace(name, quantize_weights(*t, scheme));
      }
    } else {
      auto copy = tensor(t->shape);
      copy->data = t->data;
      copy->name = name;
      res.quantized.tensors.emplace(name, std::move(copy));
    }
  }
  return res;
}

}  // namespace edgellm

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "edgellm/checkpoint.hpp"
#include "edgellm/config.hpp"
#include "edgellm/fake_quant.hpp"
#include "edgellm/ops.hpp"
#include "edgellm/packing.hpp"

namespace edgellm {

// Deterministic initialization: norm gains at 1, all weight matrices (and the
// embedding table) N(0, 1/sqrt(fan_in)). RNG consumption follows the
// tensor_specs order, so equal seeds give bitwise-equal checkpoints.
inline Checkpoint build_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.phase = "init";
  Rng rng(seed);
  for (const auto& spec : tensor_specs(cfg)) {
    auto t = tensor(spec.shape);
    t->name = spec.name;
    if (spec.shape.size() == 1) {
      std::fill(t->data.begin(), t->data.end(), 1.0f);
    } else {
      const float std_dev = 1.0f / std::sqrt(static_cast<float>(spec.shape[1]));
      for (auto& v : t->data) v = rng.normal_f() * std_dev;
    }
    ckpt.tensors.emplace(spec.name, std::move(t));
  }
  return ckpt;
}

struct Model {
  ModelConfig config;
  TensorPtr tok_embedding;
  TensorPtr output_head;  // same tensor as tok_embedding when tied
  struct Layer {
    LayerKind kind;
    TensorPtr attn_norm, wq, wk, wv, wo;
    TensorPtr ffn_norm, w_gate, w_up, w_down;
  };
  std::vector<Layer> layers;
  TensorPtr final_norm;

  // Unique parameter tensors in checkpoint-table order.
  std::vector<TensorPtr> parameters() const {
    std::vector<TensorPtr> out;
    out.push_back(tok_embedding);
    for (const auto& l : layers) {
      out.insert(out.end(),
                 {l.attn_norm, l.wq, l.wk, l.wv, l.wo, l.ffn_norm, l.w_gate, l.w_up, l.w_down});
    }
    out.push_back(final_norm);
    if (!config.tie_embeddings) out.push_back(output_head);
    return out;
  }

  void set_requires_grad(bool value) {
    for (auto& p : parameters()) p->requires_grad = value;
  }

  void zero_grads() {
    for (auto& p : parameters()) p->zero_grad();
  }
};

// Binds checkpoint tensors into the layer structure, verifying that names and
// shapes exactly match what build_model(config) generates.
inline Model bind_model(const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (ckpt.quantized()) {
    throw StateError("bind_model: checkpoint holds quantized tensors; dequantize first");
  }
  const auto specs = tensor_specs(ckpt.config);
  if (ckpt.tensors.size() != specs.size()) {
    throw FormatError("bind_model: checkpoint has " + std::to_string(ckpt.tensors.size()) +
                      " tensors, config expects " + std::to_string(specs.size()));
  }
  auto fetch = [&](const std::string& name, const Shape& shape) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError("bind_model: missing tensor '" + name + "'");
    if (it->second->shape != shape) {
      throw FormatError("bind_model: tensor '" + name + "' has shape " +
                        shape_str(it->second->shape) + ", expected " + shape_str(shape));
    }
    return it->second;
  };
  Model m;
  m.config = ckpt.config;
  for (const auto& spec : specs) fetch(spec.name, spec.shape);  // exact-match pass
  m.tok_embedding = fetch("tok_embedding", {m.config.vocab_size, m.config.dim});
  const int64_t kv_dim = m.config.n_kv_heads * m.config.head_dim();
  const auto kinds = m.config.layout();
  for (int64_t l = 0; l < m.config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    Model::Layer layer;
    layer.kind = kinds[static_cast<size_t>(l)];
    layer.attn_norm = fetch(p + "attn_norm", {m.config.dim});
    layer.wq = fetch(p + "wq", {m.config.dim, m.config.dim});
    layer.wk = fetch(p + "wk", {kv_dim, m.config.dim});
    layer.wv = fetch(p + "wv", {kv_dim, m.config.dim});
    layer.wo = fetch(p + "wo", {m.config.dim, m.config.dim});
    layer.ffn_norm = fetch(p + "ffn_norm", {m.config.dim});
    layer.w_gate = fetch(p + "w_gate", {m.config.hidden_dim, m.config.dim});
    layer.w_up = fetch(p + "w_up", {m.config.hidden_dim, m.config.dim});
    layer.w_down = fetch(p + "w_down", {m.config.dim, m.config.hidden_dim});
    m.layers.push_back(std::move(layer));
  }
  m.final_norm = fetch("final_norm", {m.config.dim});
  m.output_head =
      m.config.tie_embeddings ? m.tok_embedding : fetch("output_head", {m.config.vocab_size, m.config.dim});
  return m;
}

struct ForwardOptions {
  const QuantScheme* fake_quant = nullptr;                 // quantize weights in the loop
  const std::map<std::string, RangeParams>* ranges = nullptr;  // learnable ranges by tensor name
  bool kv_int8 = false;  // int8 quantize-dequantize of K/V rows (inference parity)
};

// Full decoder stack over one packed sequence; returns [T, vocab] logits.
// Tokens attend only within their own document and causally; local layers
// additionally drop keys older than `window` positions.
inline TensorPtr model_forward(const Model& m, const PackedSequence& packed, Tape* tape = nullptr,
                               const ForwardOptions& opt = {}) {
  const auto& cfg = m.config;
  if (packed.size() == 0) throw ContractError("model_forward: empty sequence");
  for (int64_t p : packed.positions) {
    if (p >= cfg.max_context) {
      throw InputError("model_forward: position " + std::to_string(p) + " >= max_context " +
                       std::to_string(cfg.max_context));
    }
  }
  const int64_t t_len = packed.size();
  const int64_t dh = cfg.head_dim();
  const bool kv_qdq =
      opt.kv_int8 || (opt.fake_quant && opt.fake_quant->kv_cache == ActQuant::Int8DynAsymPerToken);

  auto ranges_for = [&](const TensorPtr& w) -> const RangeParams* {
    if (!opt.ranges) return nullptr;
    auto it = opt.ranges->find(w->name);
    return it == opt.ranges->end() ? nullptr : &it->second;
  };
  auto lin = [&](const TensorPtr& x, const TensorPtr& w) {
    if (opt.fake_quant) return fake_quant_linear(x, w, opt.fake_quant, ranges_for(w), tape);
    return linear(x, w, tape);
  };

  TensorPtr x = opt.fake_quant
                    ? fake_quant_embedding(m.tok_embedding, packed.tokens, opt.fake_quant,
                                           ranges_for(m.tok_embedding), tape)
                    : embedding(m.tok_embedding, packed.tokens, tape);

  for (const auto& layer : m.layers) {
    auto h = rms_norm(x, layer.attn_norm, cfg.norm_eps, tape);
    auto q = reshape(lin(h, layer.wq), {t_len, cfg.n_heads, dh}, tape);
    auto k = reshape(lin(h, layer.wk), {t_len, cfg.n_kv_heads, dh}, tape);
    auto v = reshape(lin(h, layer.wv), {t_len, cfg.n_kv_heads, dh}, tape);
    q = rope_apply(q, packed.positions, cfg.rope_base, tape);
    k = rope_apply(k, packed.positions, cfg.rope_base, tape);
    if (kv_qdq) {
      k = quant_dequant_tokens(k, tape);
      v = quant_dequant_tokens(v, tape);
    }
    const int64_t window = layer.kind == LayerKind::Local ? cfg.window : -1;
    auto att = attention(q, k, v, packed.doc_of, window, tape);
    x = add(x, lin(reshape(att, {t_len, cfg.dim}, tape), layer.wo), tape);

    auto h2 = rms_norm(x, layer.ffn_norm, cfg.norm_eps, tape);
    auto gated = mul(silu(lin(h2, layer.w_gate), tape), lin(h2, layer.w_up), tape);
    x = add(x, lin(gated, layer.w_down), tape);
  }

  auto h = rms_norm(x, m.final_norm, cfg.norm_eps, tape);
  return lin(h, m.output_head);
}

inline TensorPtr dequantize_checkpoint_tensor(const Checkpoint& ckpt, const std::string& name) {
  auto qit = ckpt.qtensors.find(name);
  if (qit != ckpt.qtensors.end()) return dequantize(qit->second);
  auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw FormatError("checkpoint: missing tensor '" + name + "'");
  return it->second;
}

// Float view of a possibly-quantized checkpoint.
inline Checkpoint dequantize_checkpoint(const Checkpoint& ckpt) {
  Checkpoint out;
  out.config = ckpt.config;
  out.phase = ckpt.phase;
  out.step = ckpt.step;
  out.notes = ckpt.notes;
  for (const auto& spec : tensor_specs(ckpt.config)) {
    auto t = dequantize_checkpoint_tensor(ckpt, spec.name);
    auto copy = tensor(t->shape);
    copy->data = t->data;
    copy->name = spec.name;
    out.tensors.emplace(spec.name, std::move(copy));
  }
  return out;
}

}  // namespace edgellm

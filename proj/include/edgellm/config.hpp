#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "edgellm/common.hpp"
#include "edgellm/tensor.hpp"

namespace edgellm {

enum class LayerKind { Local, Global };

// Layer kinds for an interleaved local/global stack: every `period`-th layer
// starting at index 0 is global, and the final layer is forced global.
inline std::vector<LayerKind> layer_layout(int64_t n_layers, int64_t period) {
  if (n_layers < 1) throw ConfigError("layer_layout: n_layers must be >= 1");
  if (period < 1) throw ConfigError("layer_layout: period must be >= 1");
  std::vector<LayerKind> kinds(static_cast<size_t>(n_layers), LayerKind::Local);
  for (int64_t i = 0; i < n_layers; ++i) {
    if (i % period == 0 || i == n_layers - 1) kinds[static_cast<size_t>(i)] = LayerKind::Global;
  }
  return kinds;
}

struct ModelConfig {
  int64_t n_layers = 2;
  int64_t n_heads = 4;
  int64_t n_kv_heads = 2;
  int64_t dim = 64;
  int64_t hidden_dim = 128;
  int64_t vocab_size = 512;
  int64_t window = 64;        // local attention span in tokens
  int64_t global_every = 4;   // one global layer per this many layers
  float rope_base = 10000.0f;
  int64_t max_context = 4096;
  bool tie_embeddings = true;
  float norm_eps = 1e-5f;

  int64_t head_dim() const { return dim / n_heads; }

  std::vector<LayerKind> layout() const { return layer_layout(n_layers, global_every); }

  void validate() const {
    if (n_layers < 1) throw ConfigError("ModelConfig: n_layers must be >= 1");
    if (n_heads < 1 || dim % n_heads != 0) {
      throw ConfigError("ModelConfig: dim must be divisible by n_heads");
    }
    if (n_kv_heads < 1 || n_heads % n_kv_heads != 0) {
      throw ConfigError("ModelConfig: n_heads must be divisible by n_kv_heads");
    }
    if (head_dim() % 2 != 0) throw ConfigError("ModelConfig: head_dim must be even");
    if (hidden_dim < 1) throw ConfigError("ModelConfig: hidden_dim must be >= 1");
    if (vocab_size < 2) throw ConfigError("ModelConfig: vocab_size must be >= 2");
    if (window < 1) throw ConfigError("ModelConfig: window must be >= 1");
    if (global_every < 1) throw ConfigError("ModelConfig: global_every must be >= 1");
    if (max_context < 1) throw ConfigError("ModelConfig: max_context must be >= 1");
    if (!(rope_base > 0.0f)) throw ConfigError("ModelConfig: rope_base must be > 0");
  }

  // 1B-parameter reference preset: 30 layers, 20 heads / 4 kv heads, dim 1280,
  // hidden 6144, vocab 202048, 512-token local window, global every 4th layer.
  static ModelConfig reference_1b() {
    ModelConfig c;
    c.n_layers = 30;
    c.n_heads = 20;
    c.n_kv_heads = 4;
    c.dim = 1280;
    c.hidden_dim = 6144;
    c.vocab_size = 202048;
    c.window = 512;
    c.global_every = 4;
    c.rope_base = 10000.0f;
    c.max_context = 128000;
    c.tie_embeddings = true;
    return c;
  }
};

// Name/shape table of every parameter tensor, in checkpoint order. Drives both
// allocation and the analytic parameter count (no allocation needed).
struct TensorSpec {
  std::string name;
  Shape shape;
};

inline std::vector<TensorSpec> tensor_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<TensorSpec> specs;
  specs.push_back({"tok_embedding", {cfg.vocab_size, cfg.dim}});
  const int64_t kv_dim = cfg.n_kv_heads * cfg.head_dim();
  for (int64_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    specs.push_back({p + "attn_norm", {cfg.dim}});
    specs.push_back({p + "wq", {cfg.dim, cfg.dim}});
    specs.push_back({p + "wk", {kv_dim, cfg.dim}});
    specs.push_back({p + "wv", {kv_dim, cfg.dim}});
    specs.push_back({p + "wo", {cfg.dim, cfg.dim}});
    specs.push_back({p + "ffn_norm", {cfg.dim}});
    specs.push_back({p + "w_gate", {cfg.hidden_dim, cfg.dim}});
    specs.push_back({p + "w_up", {cfg.hidden_dim, cfg.dim}});
    specs.push_back({p + "w_down", {cfg.dim, cfg.hidden_dim}});
  }
  specs.push_back({"final_norm", {cfg.dim}});
  if (!cfg.tie_embeddings) specs.push_back({"output_head", {cfg.vocab_size, cfg.dim}});
  return specs;
}

inline int64_t param_count(const ModelConfig& cfg) {
  int64_t total = 0;
  for (const auto& spec : tensor_specs(cfg)) total += shape_numel(spec.shape);
  return total;
}

}  // namespace edgellm

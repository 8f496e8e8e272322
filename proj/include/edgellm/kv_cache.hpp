#pragma once

#include <cstdint>
#include <vector>

#include "edgellm/config.hpp"
#include "edgellm/quant.hpp"

namespace edgellm {

enum class KvDtype { F32, Int8 };

// Per-layer key/value store. Local layers keep a ring of `window` slots with
// overwrite-in-place eviction; global layers append up to max_context. Keys
// are stored after rotation, so evicted entries never need re-rotation. Int8
// mode stores one (scale, zero) pair per token for K and V separately.
struct KVCacheLayer {
  LayerKind kind = LayerKind::Global;
  int64_t capacity = 0;  // window for Local, max_context for Global
  int64_t width = 0;     // n_kv_heads * head_dim
  KvDtype dtype = KvDtype::F32;

  std::vector<float> k_data, v_data;          // f32 mode: [capacity, width]
  std::vector<uint8_t> k_codes, v_codes;      // int8 mode
  std::vector<float> k_scale, k_zero, v_scale, v_zero;
  std::vector<int64_t> pos;  // absolute position per slot, -1 when empty

  int64_t count = 0;  // live tokens
  int64_t next = 0;   // ring head (Local)

  void init(LayerKind k, int64_t cap, int64_t row_width, KvDtype dt) {
    kind = k;
    capacity = cap;
    width = row_width;
    dtype = dt;
    pos.assign(static_cast<size_t>(cap), -1);
    if (dtype == KvDtype::F32) {
      k_data.assign(static_cast<size_t>(cap * row_width), 0.0f);
      v_data.assign(static_cast<size_t>(cap * row_width), 0.0f);
    } else {
      k_codes.assign(static_cast<size_t>(cap * row_width), 0);
      v_codes.assign(static_cast<size_t>(cap * row_width), 0);
      k_scale.assign(static_cast<size_t>(cap), 0.0f);
      k_zero.assign(static_cast<size_t>(cap), 0.0f);
      v_scale.assign(static_cast<size_t>(cap), 0.0f);
      v_zero.assign(static_cast<size_t>(cap), 0.0f);
    }
    count = 0;
    next = 0;
  }

  // Quantize one row with the per-token int8 rule; returns dequantized values
  // in place so the caller attends over exactly what the cache will replay.
  void store_row(int64_t slot, const float* src, std::vector<uint8_t>& codes,
                 std::vector<float>& scale, std::vector<float>& zero, float* dequant) {
    float mn = src[0], mx = src[0];
    for (int64_t i = 1; i < width; ++i) {
      mn = std::min(mn, src[i]);
      mx = std::max(mx, src[i]);
    }
    const float s = std::max((mx - mn) / 255.0f, kScaleFloor);
    scale[static_cast<size_t>(slot)] = s;
    zero[static_cast<size_t>(slot)] = mn;
    uint8_t* crow = codes.data() + slot * width;
    for (int64_t i = 0; i < width; ++i) {
      crow[i] = int8_code(src[i], mn, s);
      dequant[i] = s * static_cast<float>(crow[i]) + mn;
    }
  }

  // Appends one token's K/V rows at absolute position p. k/v are updated in
  // place to the stored (possibly quantized) representation.
  void append(int64_t p, float* k_row, float* v_row) {
    int64_t slot;
    if (kind == LayerKind::Local) {
      slot = next;
      next = (next + 1) % capacity;
      if (count < capacity) ++count;
    } else {
      if (count >= capacity) throw StateError("KVCacheLayer: global cache overflow");
      slot = count++;
    }
    pos[static_cast<size_t>(slot)] = p;
    if (dtype == KvDtype::F32) {
      std::copy(k_row, k_row + width, k_data.data() + slot * width);
      std::copy(v_row, v_row + width, v_data.data() + slot * width);
    } else {
      store_row(slot, k_row, k_codes, k_scale, k_zero, k_row);
      store_row(slot, v_row, v_codes, v_scale, v_zero, v_row);
    }
  }

  float k_at(int64_t slot, int64_t i) const {
    if (dtype == KvDtype::F32) return k_data[static_cast<size_t>(slot * width + i)];
    return k_scale[static_cast<size_t>(slot)] *
               static_cast<float>(k_codes[static_cast<size_t>(slot * width + i)]) +
           k_zero[static_cast<size_t>(slot)];
  }
  float v_at(int64_t slot, int64_t i) const {
    if (dtype == KvDtype::F32) return v_data[static_cast<size_t>(slot * width + i)];
    return v_scale[static_cast<size_t>(slot)] *
               static_cast<float>(v_codes[static_cast<size_t>(slot * width + i)]) +
           v_zero[static_cast<size_t>(slot)];
  }

  std::vector<int64_t> live_slots() const {
    std::vector<int64_t> slots;
    for (int64_t s = 0; s < capacity; ++s) {
      if (pos[static_cast<size_t>(s)] >= 0) slots.push_back(s);
    }
    return slots;
  }
};

struct KVCache {
  std::vector<KVCacheLayer> layers;
  int64_t tokens_seen = 0;

  void init(const ModelConfig& cfg, KvDtype dtype) {
    layers.clear();
    const auto kinds = cfg.layout();
    const int64_t width = cfg.n_kv_heads * cfg.head_dim();
    for (auto kind : kinds) {
      KVCacheLayer layer;
      layer.init(kind, kind == LayerKind::Local ? cfg.window : cfg.max_context, width, dtype);
      layers.push_back(std::move(layer));
    }
    tokens_seen = 0;
  }
};

// Analytic cache footprint in bytes: per layer, tokens_held * width * 2 (K and
// V) * element bytes, plus per-token (scale, zero) f32 pairs for both K and V
// in int8 mode. tokens_held = min(ctx, window) for local layers, ctx for
// global ones.
inline int64_t kv_cache_size(const ModelConfig& cfg, int64_t ctx, KvDtype dtype) {
  cfg.validate();
  if (ctx > cfg.max_context) {
    throw ContractError("kv_cache_size: ctx exceeds max_context");
  }
  const int64_t width = cfg.n_kv_heads * cfg.head_dim();
  const int64_t elem_bytes = dtype == KvDtype::F32 ? 4 : 1;
  const int64_t per_token_overhead = dtype == KvDtype::Int8 ? 16 : 0;  // two f32 (s, z) per K and V
  int64_t total = 0;
  for (auto kind : cfg.layout()) {
    const int64_t held = kind == LayerKind::Local ? std::min(ctx, cfg.window) : ctx;
    total += held * (width * 2 * elem_bytes + per_token_overhead);
  }
  return total;
}

}  // namespace edgellm

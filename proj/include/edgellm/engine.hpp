#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <vector>

#include "edgellm/checkpoint.hpp"
#include "edgellm/kv_cache.hpp"
#include "edgellm/model.hpp"

namespace edgellm {

struct EngineOptions {
  KvDtype kv_dtype = KvDtype::F32;
  bool act_int8 = false;  // per-token QDQ of every linear input
  uint64_t seed = 0;
};

struct SamplingParams {
  bool greedy = true;
  float temperature = 1.0f;
  int64_t top_k = 0;  // 0 keeps the full distribution
};

namespace detail {

// Float or int4-packed weight; int4 rows are dequantized group by group into a
// caller-provided scratch tile, so the float matrix is never materialized.
struct EngineWeight {
  const Tensor* fp = nullptr;
  const QuantizedTensor* q = nullptr;

  int64_t rows() const {
    const Shape& s = fp ? fp->shape : q->shape;
    return s.size() > 1 ? s[0] : 1;
  }
  int64_t cols() const {
    const Shape& s = fp ? fp->shape : q->shape;
    return s.size() > 1 ? s[1] : s[0];
  }

  void dequant_row(int64_t o, float* scratch) const {
    const int64_t in = cols();
    if (fp) {
      const float* src = fp->data.data() + o * in;
      std::copy(src, src + in, scratch);
      return;
    }
    const int64_t group = q->group_size;
    for (int64_t i = 0; i < in; ++i) {
      const int64_t e = o * in + i;
      const size_t byte = static_cast<size_t>(e / 2);
      uint8_t nib = (e % 2 == 0) ? (q->packed[byte] & 0x0F) : (q->packed[byte] >> 4);
      const int code = nib >= 8 ? static_cast<int>(nib) - 16 : static_cast<int>(nib);
      scratch[i] = q->scales[static_cast<size_t>(e / group)] * static_cast<float>(code);
    }
  }
};

}  // namespace detail

// Autoregressive inference session over one document. Prefill and decode share
// a chunked incremental forward that is independent of the training-path
// model_forward; the two are cross-checked by the cache-consistency tests.
class Session {
 public:
  Session(const Checkpoint& ckpt, EngineOptions opt = {})
      : config_(ckpt.config), opt_(opt), rng_(opt.seed) {
    config_.validate();
    bind(ckpt);
    cache_.init(config_, opt_.kv_dtype);
    const auto kinds = config_.layout();
    for (size_t l = 0; l < kinds.size(); ++l) kinds_.push_back(kinds[l]);
  }

  const ModelConfig& config() const { return config_; }
  int64_t position() const { return cursor_; }
  const KVCache& cache() const { return cache_; }

  // Processes the prompt, populating caches; returns last-position logits.
  std::vector<float> prefill(const std::vector<int32_t>& prompt) {
    if (prompt.empty()) throw ContractError("prefill: empty prompt");
    if (cursor_ != 0) throw StateError("prefill: session already prefixed");
    return forward_chunk(prompt);
  }

  // Single-token step reusing caches; local layers evict their oldest entry.
  std::vector<float> decode_step(int32_t token) {
    if (cursor_ == 0) throw StateError("decode_step: session not prefilled");
    return forward_chunk({token});
  }

  std::vector<int32_t> generate(const std::vector<int32_t>& prompt, int64_t max_new,
                                const SamplingParams& params = {}) {
    auto logits = prefill(prompt);
    std::vector<int32_t> out;
    for (int64_t i = 0; i < max_new; ++i) {
      const int32_t tok = pick(logits, params);
      out.push_back(tok);
      if (i + 1 < max_new) logits = decode_step(tok);
    }
    return out;
  }

 private:
  void bind(const Checkpoint& ckpt) {
    auto weight = [&](const std::string& name) {
      detail::EngineWeight w;
      auto qit = ckpt.qtensors.find(name);
      if (qit != ckpt.qtensors.end()) {
        quantized_store_.push_back(qit->second);
        w.q = &quantized_store_.back();
        return w;
      }
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end()) throw FormatError("Session: missing tensor '" + name + "'");
      float_store_.push_back(it->second);
      w.fp = float_store_.back().get();
      return w;
    };
    quantized_store_.reserve(ckpt.qtensors.size() + 1);
    float_store_.reserve(ckpt.tensors.size() + 1);

    embedding_ = weight("tok_embedding");
    for (int64_t l = 0; l < config_.n_layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerWeights lw;
      lw.attn_norm = weight(p + "attn_norm");
      lw.wq = weight(p + "wq");
      lw.wk = weight(p + "wk");
      lw.wv = weight(p + "wv");
      lw.wo = weight(p + "wo");
      lw.ffn_norm = weight(p + "ffn_norm");
      lw.w_gate = weight(p + "w_gate");
      lw.w_up = weight(p + "w_up");
      lw.w_down = weight(p + "w_down");
      layers_.push_back(lw);
    }
    final_norm_ = weight("final_norm");
    head_ = config_.tie_embeddings ? embedding_ : weight("output_head");
  }

  struct LayerWeights {
    detail::EngineWeight attn_norm, wq, wk, wv, wo, ffn_norm, w_gate, w_up, w_down;
  };

  void linear_rows(const std::vector<float>& x, const detail::EngineWeight& w,
                   std::vector<float>& y, int64_t n) {
    const int64_t in = w.cols(), out = w.rows();
    y.assign(static_cast<size_t>(n * out), 0.0f);
    parallel_for(out, [&](int64_t lo, int64_t hi) {
      std::vector<float> scratch(static_cast<size_t>(in));
      for (int64_t o = lo; o < hi; ++o) {
        w.dequant_row(o, scratch.data());
        for (int64_t t = 0; t < n; ++t) {
          const float* xrow = x.data() + t * in;
          float acc = 0.0f;
          for (int64_t i = 0; i < in; ++i) acc += xrow[i] * scratch[i];
          y[static_cast<size_t>(t * out + o)] = acc;
        }
      }
    });
  }

  void rms_norm_rows(const std::vector<float>& x, const detail::EngineWeight& gamma,
                     std::vector<float>& y, int64_t n, int64_t d) {
    y.resize(static_cast<size_t>(n * d));
    std::vector<float> g(static_cast<size_t>(d));
    gamma.dequant_row(0, g.data());  // rank-1 tensors are a single row
    for (int64_t t = 0; t < n; ++t) {
      const float* xr = x.data() + t * d;
      float ss = 0.0f;
      for (int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
      const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + config_.norm_eps);
      for (int64_t i = 0; i < d; ++i) y[static_cast<size_t>(t * d + i)] = xr[i] * inv * g[i];
    }
  }

  void rope_rows(std::vector<float>& x, int64_t n, int64_t heads, int64_t dh, int64_t start_pos) {
    const int64_t half = dh / 2;
    for (int64_t t = 0; t < n; ++t) {
      const double p = static_cast<double>(start_pos + t);
      for (int64_t h = 0; h < heads; ++h) {
        float* row = x.data() + (t * heads + h) * dh;
        for (int64_t j = 0; j < half; ++j) {
          const double theta =
              std::pow(static_cast<double>(config_.rope_base),
                       -2.0 * static_cast<double>(j) / static_cast<double>(dh));
          const float c = static_cast<float>(std::cos(theta * p));
          const float s = static_cast<float>(std::sin(theta * p));
          const float x0 = row[2 * j], x1 = row[2 * j + 1];
          row[2 * j] = c * x0 - s * x1;
          row[2 * j + 1] = s * x0 + c * x1;
        }
      }
    }
  }

  void maybe_qdq(std::vector<float>& x, int64_t rows) {
    if (opt_.act_int8 && rows > 0) qdq_rows_inplace(x.data(), rows, static_cast<int64_t>(x.size()) / rows);
  }

  // Appends K/V token by token and attends each query over the live cache, so
  // ring eviction happens in exactly the order positions arrive.
  void attention_rows(KVCacheLayer& layer, std::vector<float>& q, std::vector<float>& k,
                      std::vector<float>& v, std::vector<float>& out, int64_t n,
                      int64_t start_pos) {
    const int64_t hq = config_.n_heads, hkv = config_.n_kv_heads, dh = config_.head_dim();
    const int64_t group = hq / hkv;
    const int64_t width = layer.width;
    const float inv_scale = 1.0f / std::sqrt(static_cast<float>(dh));
    out.assign(static_cast<size_t>(n * hq * dh), 0.0f);
    std::vector<float> krow(static_cast<size_t>(width));
    std::vector<float> scores;
    std::vector<int64_t> slots;
    for (int64_t t = 0; t < n; ++t) {
      layer.append(start_pos + t, k.data() + t * width, v.data() + t * width);
      slots.clear();
      for (int64_t s = 0; s < layer.capacity; ++s) {
        if (layer.pos[static_cast<size_t>(s)] >= 0) slots.push_back(s);
      }
      const int64_t n_slots = static_cast<int64_t>(slots.size());
      scores.assign(static_cast<size_t>(hq * n_slots), 0.0f);
      for (int64_t si = 0; si < n_slots; ++si) {
        const int64_t slot = slots[static_cast<size_t>(si)];
        for (int64_t i = 0; i < width; ++i) krow[static_cast<size_t>(i)] = layer.k_at(slot, i);
        for (int64_t h = 0; h < hq; ++h) {
          const int64_t g = h / group;
          const float* qh = q.data() + (t * hq + h) * dh;
          float acc = 0.0f;
          for (int64_t c = 0; c < dh; ++c) acc += qh[c] * krow[static_cast<size_t>(g * dh + c)];
          scores[static_cast<size_t>(h * n_slots + si)] = acc * inv_scale;
        }
      }
      // per-head softmax over the visible slots
      for (int64_t h = 0; h < hq; ++h) {
        float* srow = scores.data() + h * n_slots;
        float mx = srow[0];
        for (int64_t si = 1; si < n_slots; ++si) mx = std::max(mx, srow[si]);
        float denom = 0.0f;
        for (int64_t si = 0; si < n_slots; ++si) {
          srow[si] = std::exp(srow[si] - mx);
          denom += srow[si];
        }
        const float inv = 1.0f / denom;
        for (int64_t si = 0; si < n_slots; ++si) srow[si] *= inv;
      }
      for (int64_t si = 0; si < n_slots; ++si) {
        const int64_t slot = slots[static_cast<size_t>(si)];
        for (int64_t i = 0; i < width; ++i) krow[static_cast<size_t>(i)] = layer.v_at(slot, i);
        for (int64_t h = 0; h < hq; ++h) {
          const int64_t g = h / group;
          const float p = scores[static_cast<size_t>(h * n_slots + si)];
          float* orow = out.data() + (t * hq + h) * dh;
          for (int64_t c = 0; c < dh; ++c) orow[c] += p * krow[static_cast<size_t>(g * dh + c)];
        }
      }
    }
  }

  std::vector<float> forward_chunk(const std::vector<int32_t>& tokens) {
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (cursor_ + n > config_.max_context) {
      throw StateError("Session: max_context " + std::to_string(config_.max_context) +
                       " exceeded at position " + std::to_string(cursor_ + n));
    }
    const int64_t d = config_.dim, dh = config_.head_dim();
    const int64_t kv_width = config_.n_kv_heads * dh;
    std::vector<float> x(static_cast<size_t>(n * d));
    for (int64_t t = 0; t < n; ++t) {
      const int32_t tok = tokens[static_cast<size_t>(t)];
      if (tok < 0 || tok >= config_.vocab_size) {
        throw InputError("Session: token id " + std::to_string(tok) + " outside vocab");
      }
      embedding_.dequant_row(tok, x.data() + t * d);
    }

    std::vector<float> h, q, k, v, att, proj, gate, up;
    for (size_t l = 0; l < layers_.size(); ++l) {
      auto& lw = layers_[l];
      rms_norm_rows(x, lw.attn_norm, h, n, d);
      maybe_qdq(h, n);
      linear_rows(h, lw.wq, q, n);
      linear_rows(h, lw.wk, k, n);
      linear_rows(h, lw.wv, v, n);
      rope_rows(q, n, config_.n_heads, dh, cursor_);
      rope_rows(k, n, config_.n_kv_heads, dh, cursor_);
      attention_rows(cache_.layers[l], q, k, v, att, n, cursor_);
      maybe_qdq(att, n);
      linear_rows(att, lw.wo, proj, n);
      for (size_t i = 0; i < x.size(); ++i) x[i] += proj[i];

      rms_norm_rows(x, lw.ffn_norm, h, n, d);
      maybe_qdq(h, n);
      linear_rows(h, lw.w_gate, gate, n);
      linear_rows(h, lw.w_up, up, n);
      for (size_t i = 0; i < gate.size(); ++i) {
        const float g = gate[i] / (1.0f + std::exp(-gate[i]));
        gate[i] = g * up[i];
      }
      maybe_qdq(gate, n);
      linear_rows(gate, lw.w_down, proj, n);
      for (size_t i = 0; i < x.size(); ++i) x[i] += proj[i];
    }
    cursor_ += n;
    cache_.tokens_seen = cursor_;

    // logits for the final position only
    std::vector<float> last(x.end() - d, x.end());
    std::vector<float> normed;
    rms_norm_rows(last, final_norm_, normed, 1, d);
    maybe_qdq(normed, 1);
    std::vector<float> logits;
    linear_rows(normed, head_, logits, 1);
    return logits;
  }

  int32_t pick(const std::vector<float>& logits, const SamplingParams& params) {
    if (params.greedy) {
      int32_t best = 0;
      for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > logits[static_cast<size_t>(best)]) best = static_cast<int32_t>(i);
      }
      return best;
    }
    if (!(params.temperature > 0.0f)) throw ContractError("generate: temperature must be > 0");
    std::vector<std::pair<float, int32_t>> scored;
    scored.reserve(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
      scored.emplace_back(logits[i] / params.temperature, static_cast<int32_t>(i));
    }
    if (params.top_k > 0 && params.top_k < static_cast<int64_t>(scored.size())) {
      std::stable_sort(scored.begin(), scored.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      scored.resize(static_cast<size_t>(params.top_k));
    }
    float mx = scored[0].first;
    for (const auto& [s, i] : scored) mx = std::max(mx, s);
    double denom = 0.0;
    std::vector<double> probs(scored.size());
    for (size_t i = 0; i < scored.size(); ++i) {
      probs[i] = std::exp(static_cast<double>(scored[i].first - mx));
      denom += probs[i];
    }
    const double draw = rng_.uniform() * denom;
    double acc = 0.0;
    for (size_t i = 0; i < scored.size(); ++i) {
      acc += probs[i];
      if (draw < acc) return scored[i].second;
    }
    return scored.back().second;
  }

  ModelConfig config_;
  EngineOptions opt_;
  Rng rng_;
  detail::EngineWeight embedding_, final_norm_, head_;
  std::vector<LayerWeights> layers_;
  std::vector<TensorPtr> float_store_;
  std::vector<QuantizedTensor> quantized_store_;
  std::vector<LayerKind> kinds_;
  KVCache cache_;
  int64_t cursor_ = 0;
};

// ----------------------------- benchmark harness -----------------------------

struct BenchResult {
  int64_t prompt_len = 0;
  int64_t gen_len = 0;
  double prefill_seconds = 0.0;
  double decode_tokens_per_s = 0.0;
  double kv_cache_mb = 0.0;
  double model_mb = 0.0;
};

inline BenchResult bench(const Checkpoint& ckpt, int64_t prompt_len, int64_t gen_len,
                         int64_t repeats, EngineOptions opt = {}) {
  if (prompt_len < 1 || gen_len < 1 || repeats < 1) {
    throw ContractError("bench: prompt_len, gen_len, repeats must be >= 1");
  }
  std::vector<int32_t> prompt(static_cast<size_t>(prompt_len));
  for (int64_t i = 0; i < prompt_len; ++i) {
    prompt[static_cast<size_t>(i)] = static_cast<int32_t>(i % ckpt.config.vocab_size);
  }
  std::vector<double> prefill_times, decode_rates;
  for (int64_t r = 0; r < repeats; ++r) {
    Session session(ckpt, opt);
    const auto t0 = std::chrono::steady_clock::now();
    auto logits = session.prefill(prompt);
    const auto t1 = std::chrono::steady_clock::now();
    int32_t tok = 0;
    for (int64_t i = 0; i < gen_len; ++i) logits = session.decode_step(tok);
    const auto t2 = std::chrono::steady_clock::now();
    prefill_times.push_back(std::chrono::duration<double>(t1 - t0).count());
    decode_rates.push_back(static_cast<double>(gen_len) /
                           std::chrono::duration<double>(t2 - t1).count());
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  BenchResult res;
  res.prompt_len = prompt_len;
  res.gen_len = gen_len;
  res.prefill_seconds = median(prefill_times);
  res.decode_tokens_per_s = median(decode_rates);
  res.kv_cache_mb = static_cast<double>(kv_cache_size(ckpt.config,
                                                      std::min(prompt_len + gen_len,
                                                               ckpt.config.max_context),
                                                      opt.kv_dtype)) /
                    (1024.0 * 1024.0);
  res.model_mb = static_cast<double>(serialize_checkpoint(ckpt).size()) / (1024.0 * 1024.0);
  return res;
}

}  // namespace edgellm

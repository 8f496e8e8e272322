#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "edgellm/tape.hpp"
#include "edgellm/tensor.hpp"

namespace edgellm {

namespace detail {

inline bool want_grad(Tape* tape, std::initializer_list<const Tensor*> ins) {
  if (!tape) return false;
  for (const Tensor* t : ins) {
    if (t->requires_grad) return true;
  }
  return false;
}

}  // namespace detail

// ----------------------------- elementwise -----------------------------

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr) {
  check_same_shape(*a, *b, "add");
  auto out = tensor(a->shape);
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] + b->data[i];
  if (detail::want_grad(tape, {a.get(), b.get()})) {
    out->requires_grad = true;
    tape->record("add", {a, b}, out, [a, b, out] {
      accumulate_grad(*a, out->grad.data(), out->numel());
      accumulate_grad(*b, out->grad.data(), out->numel());
    });
  }
  return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr) {
  check_same_shape(*a, *b, "mul");
  auto out = tensor(a->shape);
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * b->data[i];
  if (detail::want_grad(tape, {a.get(), b.get()})) {
    out->requires_grad = true;
    tape->record("mul", {a, b}, out, [a, b, out] {
      const int64_t n = out->numel();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * b->data[i];
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t i = 0; i < n; ++i) b->grad[i] += out->grad[i] * a->data[i];
      }
    });
  }
  return out;
}

inline TensorPtr scale(const TensorPtr& a, float c, Tape* tape = nullptr) {
  auto out = tensor(a->shape);
  const int64_t n = a->numel();
  for (int64_t i = 0; i < n; ++i) out->data[i] = a->data[i] * c;
  if (detail::want_grad(tape, {a.get()})) {
    out->requires_grad = true;
    tape->record("scale", {a}, out, [a, out, c] {
      a->ensure_grad();
      const int64_t n = out->numel();
      for (int64_t i = 0; i < n; ++i) a->grad[i] += out->grad[i] * c;
    });
  }
  return out;
}

inline TensorPtr silu(const TensorPtr& x, Tape* tape = nullptr) {
  auto out = tensor(x->shape);
  const int64_t n = x->numel();
  for (int64_t i = 0; i < n; ++i) {
    const float v = x->data[i];
    out->data[i] = v / (1.0f + std::exp(-v));
  }
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("silu", {x}, out, [x, out] {
      x->ensure_grad();
      const int64_t n = out->numel();
      for (int64_t i = 0; i < n; ++i) {
        const float v = x->data[i];
        const float s = 1.0f / (1.0f + std::exp(-v));
        x->grad[i] += out->grad[i] * (s + v * s * (1.0f - s));
      }
    });
  }
  return out;
}

inline TensorPtr sum(const TensorPtr& x, Tape* tape = nullptr) {
  auto out = tensor({1});
  float acc = 0.0f;
  for (float v : x->data) acc += v;
  out->data[0] = acc;
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("sum", {x}, out, [x, out] {
      x->ensure_grad();
      const float g = out->grad[0];
      for (auto& gv : x->grad) gv += g;
    });
  }
  return out;
}

inline TensorPtr reshape(const TensorPtr& x, Shape target, Tape* tape = nullptr) {
  if (shape_numel(target) != x->numel()) {
    throw ShapeError("reshape: " + shape_str(x->shape) + " -> " + shape_str(target) +
                     " changes element count");
  }
  auto out = tensor(std::move(target));
  out->data = x->data;
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("reshape", {x}, out, [x, out] {
      accumulate_grad(*x, out->grad.data(), out->numel());
    });
  }
  return out;
}

// ----------------------------- matmul / linear -----------------------------

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b, Tape* tape = nullptr) {
  if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                     shape_str(b->shape));
  }
  const int64_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  auto out = tensor({m, n});
  parallel_for(m, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const float* arow = a->data.data() + i * k;
      float* orow = out->data.data() + i * n;
      for (int64_t t = 0; t < k; ++t) {
        const float av = arow[t];
        const float* brow = b->data.data() + t * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  });
  if (detail::want_grad(tape, {a.get(), b.get()})) {
    out->requires_grad = true;
    tape->record("matmul", {a, b}, out, [a, b, out, m, k, n] {
      const float* g = out->grad.data();
      if (a->requires_grad) {
        a->ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t t = 0; t < k; ++t) {
            float acc = 0.0f;
            const float* grow = g + i * n;
            const float* brow = b->data.data() + t * n;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            a->grad[i * k + t] += acc;
          }
        }
      }
      if (b->requires_grad) {
        b->ensure_grad();
        for (int64_t t = 0; t < k; ++t) {
          for (int64_t i = 0; i < m; ++i) {
            const float av = a->data[i * k + t];
            const float* grow = g + i * n;
            float* brow = b->grad.data() + t * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

// y = x * w^T with w stored [out, in]; quantization groups run along the input
// dimension of each output row.
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& w, Tape* tape = nullptr) {
  if (x->rank() != 2 || w->rank() != 2 || x->shape[1] != w->shape[1]) {
    throw ShapeError("linear: incompatible shapes x=" + shape_str(x->shape) +
                     " w=" + shape_str(w->shape));
  }
  const int64_t t_len = x->shape[0], in = x->shape[1], out_dim = w->shape[0];
  auto out = tensor({t_len, out_dim});
  parallel_for(t_len, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const float* xrow = x->data.data() + t * in;
      float* orow = out->data.data() + t * out_dim;
      for (int64_t o = 0; o < out_dim; ++o) {
        const float* wrow = w->data.data() + o * in;
        float acc = 0.0f;
        for (int64_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
        orow[o] = acc;
      }
    }
  });
  if (detail::want_grad(tape, {x.get(), w.get()})) {
    out->requires_grad = true;
    tape->record("linear", {x, w}, out, [x, w, out, t_len, in, out_dim] {
      const float* g = out->grad.data();
      if (x->requires_grad) {
        x->ensure_grad();
        parallel_for(t_len, [&](int64_t lo, int64_t hi) {
          for (int64_t t = lo; t < hi; ++t) {
            float* xg = x->grad.data() + t * in;
            const float* grow = g + t * out_dim;
            for (int64_t o = 0; o < out_dim; ++o) {
              const float gv = grow[o];
              const float* wrow = w->data.data() + o * in;
              for (int64_t i = 0; i < in; ++i) xg[i] += gv * wrow[i];
            }
          }
        });
      }
      if (w->requires_grad) {
        w->ensure_grad();
        parallel_for(out_dim, [&](int64_t lo, int64_t hi) {
          for (int64_t o = lo; o < hi; ++o) {
            float* wg = w->grad.data() + o * in;
            for (int64_t t = 0; t < t_len; ++t) {
              const float gv = g[t * out_dim + o];
              const float* xrow = x->data.data() + t * in;
              for (int64_t i = 0; i < in; ++i) wg[i] += gv * xrow[i];
            }
          }
        });
      }
    });
  }
  return out;
}

inline TensorPtr embedding(const TensorPtr& table, const std::vector<int32_t>& ids,
                           Tape* tape = nullptr) {
  if (table->rank() != 2) throw ShapeError("embedding: table must be [vocab, dim]");
  const int64_t vocab = table->shape[0], dim = table->shape[1];
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab) {
      throw InputError("embedding: token id " + std::to_string(id) + " outside vocab " +
                       std::to_string(vocab));
    }
  }
  const int64_t t_len = static_cast<int64_t>(ids.size());
  auto out = tensor({t_len, dim});
  for (int64_t t = 0; t < t_len; ++t) {
    const float* row = table->data.data() + static_cast<int64_t>(ids[t]) * dim;
    std::copy(row, row + dim, out->data.data() + t * dim);
  }
  if (detail::want_grad(tape, {table.get()})) {
    out->requires_grad = true;
    tape->record("embedding", {table}, out, [table, out, ids, dim] {
      table->ensure_grad();
      for (size_t t = 0; t < ids.size(); ++t) {
        float* dst = table->grad.data() + static_cast<int64_t>(ids[t]) * dim;
        const float* src = out->grad.data() + static_cast<int64_t>(t) * dim;
        for (int64_t i = 0; i < dim; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

// ----------------------------- normalization -----------------------------

// y = x / sqrt(mean(x^2) + eps) * gamma, applied over the last dimension.
inline TensorPtr rms_norm(const TensorPtr& x, const TensorPtr& gamma, float eps,
                          Tape* tape = nullptr) {
  if (eps < 0.0f) throw ContractError("rms_norm: eps must be >= 0");
  if (x->rank() < 1 || gamma->rank() != 1 || x->shape.back() != gamma->shape[0]) {
    throw ShapeError("rms_norm: gamma " + shape_str(gamma->shape) + " does not match x " +
                     shape_str(x->shape));
  }
  const int64_t d = x->shape.back();
  const int64_t rows = x->numel() / d;
  auto out = tensor(x->shape);
  std::vector<float> inv_rms(static_cast<size_t>(rows));
  for (int64_t r = 0; r < rows; ++r) {
    const float* xr = x->data.data() + r * d;
    float ss = 0.0f;
    for (int64_t i = 0; i < d; ++i) ss += xr[i] * xr[i];
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(d) + eps);
    inv_rms[static_cast<size_t>(r)] = inv;
    float* yr = out->data.data() + r * d;
    for (int64_t i = 0; i < d; ++i) yr[i] = xr[i] * inv * gamma->data[i];
  }
  if (detail::want_grad(tape, {x.get(), gamma.get()})) {
    out->requires_grad = true;
    auto saved = std::make_shared<std::vector<float>>(std::move(inv_rms));
    tape->record("rms_norm", {x, gamma}, out, [x, gamma, out, saved, d, rows] {
      for (int64_t r = 0; r < rows; ++r) {
        const float inv = (*saved)[static_cast<size_t>(r)];
        const float* xr = x->data.data() + r * d;
        const float* gr = out->grad.data() + r * d;
        if (x->requires_grad) {
          x->ensure_grad();
          float dot = 0.0f;
          for (int64_t i = 0; i < d; ++i) dot += gr[i] * gamma->data[i] * xr[i];
          const float c = dot * inv * inv * inv / static_cast<float>(d);
          float* xg = x->grad.data() + r * d;
          for (int64_t i = 0; i < d; ++i) xg[i] += gr[i] * gamma->data[i] * inv - xr[i] * c;
        }
        if (gamma->requires_grad) {
          gamma->ensure_grad();
          for (int64_t i = 0; i < d; ++i) gamma->grad[i] += gr[i] * xr[i] * inv;
        }
      }
    });
  }
  return out;
}

// ----------------------------- softmax -----------------------------

inline TensorPtr softmax(const TensorPtr& x, int axis, Tape* tape = nullptr) {
  const int rank = static_cast<int>(x->rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ContractError("softmax: invalid axis");
  const int64_t len = x->shape[static_cast<size_t>(axis)];
  int64_t inner = 1, outer = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= x->shape[static_cast<size_t>(i)];
  for (int i = 0; i < axis; ++i) outer *= x->shape[static_cast<size_t>(i)];

  auto out = tensor(x->shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const int64_t base = o * len * inner + in;
      float mx = -std::numeric_limits<float>::infinity();
      for (int64_t i = 0; i < len; ++i) {
        const float v = x->data[base + i * inner];
        if (!std::isfinite(v)) throw NumericError("softmax: non-finite input");
        mx = std::max(mx, v);
      }
      float denom = 0.0f;
      for (int64_t i = 0; i < len; ++i) {
        const float e = std::exp(x->data[base + i * inner] - mx);
        out->data[base + i * inner] = e;
        denom += e;
      }
      const float inv = 1.0f / denom;
      for (int64_t i = 0; i < len; ++i) out->data[base + i * inner] *= inv;
    }
  }
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("softmax", {x}, out, [x, out, outer, inner, len] {
      x->ensure_grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          const int64_t base = o * len * inner + in;
          float dot = 0.0f;
          for (int64_t i = 0; i < len; ++i) {
            dot += out->grad[base + i * inner] * out->data[base + i * inner];
          }
          for (int64_t i = 0; i < len; ++i) {
            const int64_t idx = base + i * inner;
            x->grad[idx] += (out->grad[idx] - dot) * out->data[idx];
          }
        }
      }
    });
  }
  return out;
}

// ----------------------------- rotary embedding -----------------------------

// Rotates consecutive feature pairs of the last dimension by angle
// theta_j * position, theta_j = base^(-2j/d). First dimension indexes tokens.
inline TensorPtr rope_apply(const TensorPtr& x, const std::vector<int64_t>& positions, float base,
                            Tape* tape = nullptr) {
  const int64_t d = x->shape.back();
  if (d % 2 != 0) throw ConfigError("rope_apply: last dimension must be even");
  const int64_t t_len = x->shape[0];
  if (static_cast<int64_t>(positions.size()) != t_len) {
    throw ShapeError("rope_apply: positions length " + std::to_string(positions.size()) +
                     " vs tokens " + std::to_string(t_len));
  }
  for (int64_t p : positions) {
    if (p < 0) throw ContractError("rope_apply: negative position");
  }
  const int64_t per_tok = x->numel() / t_len;
  const int64_t heads = per_tok / d;
  const int64_t half = d / 2;

  std::vector<float> thetas(static_cast<size_t>(half));
  for (int64_t j = 0; j < half; ++j) {
    thetas[static_cast<size_t>(j)] =
        std::pow(base, -2.0f * static_cast<float>(j) / static_cast<float>(d));
  }

  auto rotate = [thetas, positions, t_len, heads, per_tok, d, half](
                    const std::vector<float>& src, std::vector<float>& dst, float sign) {
    for (int64_t t = 0; t < t_len; ++t) {
      const auto p = static_cast<double>(positions[static_cast<size_t>(t)]);
      for (int64_t h = 0; h < heads; ++h) {
        const int64_t off = t * per_tok + h * d;
        for (int64_t j = 0; j < half; ++j) {
          const double ang = sign * static_cast<double>(thetas[static_cast<size_t>(j)]) * p;
          const float c = static_cast<float>(std::cos(ang));
          const float s = static_cast<float>(std::sin(ang));
          const float x0 = src[off + 2 * j];
          const float x1 = src[off + 2 * j + 1];
          dst[off + 2 * j] = c * x0 - s * x1;
          dst[off + 2 * j + 1] = s * x0 + c * x1;
        }
      }
    }
  };

  auto out = tensor(x->shape);
  rotate(x->data, out->data, 1.0f);
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("rope", {x}, out, [x, out, rotate] {
      x->ensure_grad();
      std::vector<float> gx(x->grad.size(), 0.0f);
      rotate(out->grad, gx, -1.0f);
      for (size_t i = 0; i < gx.size(); ++i) x->grad[i] += gx[i];
    });
  }
  return out;
}

// ----------------------------- attention -----------------------------

// Grouped-query scaled dot-product attention over one packed sequence.
// q: [T, Hq, dh], k/v: [T, Hkv, dh], Hq divisible by Hkv. A key j is visible to
// query i iff doc_of[i] == doc_of[j], j <= i, and (window < 0 or i - j < window).
inline TensorPtr attention(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                           const std::vector<int32_t>& doc_of, int64_t window,
                           Tape* tape = nullptr) {
  if (q->rank() != 3 || k->rank() != 3 || v->rank() != 3) {
    throw ShapeError("attention: q/k/v must be rank 3");
  }
  check_same_shape(*k, *v, "attention k/v");
  const int64_t t_len = q->shape[0], hq = q->shape[1], dh = q->shape[2];
  const int64_t hkv = k->shape[1];
  if (k->shape[0] != t_len || k->shape[2] != dh) {
    throw ShapeError("attention: k " + shape_str(k->shape) + " vs q " + shape_str(q->shape));
  }
  if (hq % hkv != 0) throw ConfigError("attention: query heads not divisible by kv heads");
  if (static_cast<int64_t>(doc_of.size()) != t_len) {
    throw ShapeError("attention: doc ids length mismatch");
  }
  if (window == 0) throw ConfigError("attention: window must be >= 1 or negative for global");
  const int64_t group = hq / hkv;
  const float inv_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  auto out = tensor(q->shape);
  const bool taped = detail::want_grad(tape, {q.get(), k.get(), v.get()});
  // probs[h][i*t_len + j], zero where masked
  std::shared_ptr<std::vector<float>> probs;
  if (taped) probs = std::make_shared<std::vector<float>>(static_cast<size_t>(hq * t_len * t_len));

  auto visible_from = [&](int64_t i) {
    int64_t lo = window < 0 ? 0 : std::max<int64_t>(0, i - window + 1);
    return lo;
  };

  parallel_for(hq, [&](int64_t h_lo, int64_t h_hi) {
    std::vector<float> scores(static_cast<size_t>(t_len));
    for (int64_t h = h_lo; h < h_hi; ++h) {
      const int64_t g = h / group;
      for (int64_t i = 0; i < t_len; ++i) {
        const float* qi = q->data.data() + (i * hq + h) * dh;
        const int64_t lo = visible_from(i);
        float mx = -std::numeric_limits<float>::infinity();
        for (int64_t j = lo; j <= i; ++j) {
          if (doc_of[static_cast<size_t>(j)] != doc_of[static_cast<size_t>(i)]) continue;
          const float* kj = k->data.data() + (j * hkv + g) * dh;
          float s = 0.0f;
          for (int64_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          s *= inv_scale;
          scores[static_cast<size_t>(j)] = s;
          mx = std::max(mx, s);
        }
        float denom = 0.0f;
        for (int64_t j = lo; j <= i; ++j) {
          if (doc_of[static_cast<size_t>(j)] != doc_of[static_cast<size_t>(i)]) continue;
          const float e = std::exp(scores[static_cast<size_t>(j)] - mx);
          scores[static_cast<size_t>(j)] = e;
          denom += e;
        }
        const float inv = 1.0f / denom;
        float* oi = out->data.data() + (i * hq + h) * dh;
        for (int64_t j = lo; j <= i; ++j) {
          if (doc_of[static_cast<size_t>(j)] != doc_of[static_cast<size_t>(i)]) continue;
          const float p = scores[static_cast<size_t>(j)] * inv;
          if (taped) (*probs)[static_cast<size_t>((h * t_len + i) * t_len + j)] = p;
          const float* vj = v->data.data() + (j * hkv + g) * dh;
          for (int64_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  });

  if (taped) {
    out->requires_grad = true;
    tape->record("attention", {q, k, v}, out,
                 [q, k, v, out, probs, doc_of, window, t_len, hq, hkv, dh, group, inv_scale] {
      if (q->requires_grad) q->ensure_grad();
      if (k->requires_grad) k->ensure_grad();
      if (v->requires_grad) v->ensure_grad();
      std::vector<float> dscore(static_cast<size_t>(t_len));
      for (int64_t h = 0; h < hq; ++h) {
        const int64_t g = h / group;
        for (int64_t i = 0; i < t_len; ++i) {
          const int64_t lo = window < 0 ? 0 : std::max<int64_t>(0, i - window + 1);
          const float* go = out->grad.data() + (i * hq + h) * dh;
          const float* prow = probs->data() + (h * t_len + i) * t_len;
          // dp[j] = go . v_j ; ds[j] = (dp[j] - sum_j' dp[j'] p[j']) p[j]
          float dot = 0.0f;
          for (int64_t j = lo; j <= i; ++j) {
            const float p = prow[j];
            if (p == 0.0f) continue;
            const float* vj = v->data.data() + (j * hkv + g) * dh;
            float dp = 0.0f;
            for (int64_t c = 0; c < dh; ++c) dp += go[c] * vj[c];
            dscore[static_cast<size_t>(j)] = dp;
            dot += dp * p;
          }
          const float* qi = q->data.data() + (i * hq + h) * dh;
          for (int64_t j = lo; j <= i; ++j) {
            const float p = prow[j];
            if (p == 0.0f) continue;
            const float ds = (dscore[static_cast<size_t>(j)] - dot) * p * inv_scale;
            if (q->requires_grad) {
              const float* kj = k->data.data() + (j * hkv + g) * dh;
              float* qg = q->grad.data() + (i * hq + h) * dh;
              for (int64_t c = 0; c < dh; ++c) qg[c] += ds * kj[c];
            }
            if (k->requires_grad) {
              float* kg = k->grad.data() + (j * hkv + g) * dh;
              for (int64_t c = 0; c < dh; ++c) kg[c] += ds * qi[c];
            }
            if (v->requires_grad) {
              float* vg = v->grad.data() + (j * hkv + g) * dh;
              for (int64_t c = 0; c < dh; ++c) vg[c] += p * go[c];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace edgellm

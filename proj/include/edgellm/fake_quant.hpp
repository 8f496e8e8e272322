#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <vector>

#include "edgellm/ops.hpp"
#include "edgellm/quant.hpp"

namespace edgellm {

// Learnable (w_min, w_max) pairs for one weight tensor, one pair per group.
struct RangeParams {
  TensorPtr w_min;  // [n_groups]
  TensorPtr w_max;
};

inline RangeParams init_ranges(const Tensor& w, const QuantScheme& scheme,
                               const std::string& name) {
  if (w.rank() != 2) throw ShapeError("init_ranges: expected rank-2 weights");
  const int64_t group = effective_group(scheme, w.shape[1]);
  const int64_t n_groups = w.numel() / group;
  RangeParams r;
  r.w_min = param({n_groups}, name + ".w_min");
  r.w_max = param({n_groups}, name + ".w_max");
  for (int64_t g = 0; g < n_groups; ++g) {
    const float* base = w.data.data() + g * group;
    float mn = base[0], mx = base[0];
    for (int64_t i = 1; i < group; ++i) {
      mn = std::min(mn, base[i]);
      mx = std::max(mx, base[i]);
    }
    r.w_min->data[static_cast<size_t>(g)] = mn;
    r.w_max->data[static_cast<size_t>(g)] = mx;
  }
  return r;
}

namespace detail {

// Per-group scale and, for the learnable path, which bound feeds it.
// side: +1 -> w_max active, -1 -> w_min active, 0 -> floored scale.
inline void resolve_scales(const float* w_min, const float* w_max, int64_t n_groups, float* s,
                           int8_t* side) {
  for (int64_t g = 0; g < n_groups; ++g) {
    const float a = std::max(-w_min[g], w_max[g]);
    const float raw = a / 7.5f;
    if (raw > kScaleFloor) {
      s[g] = raw;
      side[g] = w_max[g] >= -w_min[g] ? int8_t{1} : int8_t{-1};
    } else {
      s[g] = kScaleFloor;
      side[g] = 0;
    }
  }
}

struct FakeQuantSaved {
  std::vector<float> w_hat;      // dequantized weights
  std::vector<float> x_hat;      // activations after QDQ (original if no act quant)
  std::vector<float> residual;   // code - w/s, or code when clipped (scale adjoint)
  std::vector<uint8_t> clipped;  // 1 where the code saturated
  std::vector<float> scales;
  std::vector<int8_t> side;
};

}  // namespace detail

// Quantize-dequantize linear layer for training: the forward runs on the int4
// grid (and optionally int8 activations); the backward treats rounding as
// identity inside the clip range and zero outside. With Learnable ranges the
// clip boundaries feed gradients into (w_min, w_max) via the scale.
//
// A null scheme disables quantization entirely and reduces to linear().
inline TensorPtr fake_quant_linear(const TensorPtr& x, const TensorPtr& w,
                                   const QuantScheme* scheme, const RangeParams* ranges,
                                   Tape* tape = nullptr) {
  if (scheme == nullptr) return linear(x, w, tape);
  if (x->rank() != 2 || w->rank() != 2 || x->shape[1] != w->shape[1]) {
    throw ShapeError("fake_quant_linear: incompatible shapes x=" + shape_str(x->shape) +
                     " w=" + shape_str(w->shape));
  }
  if (ranges != nullptr && scheme->range_mode == RangeMode::Computed) {
    throw ContractError("fake_quant_linear: ranges supplied with Computed range mode");
  }
  if (ranges == nullptr && scheme->range_mode == RangeMode::Learnable) {
    throw ContractError("fake_quant_linear: Learnable range mode requires ranges");
  }
  const int64_t t_len = x->shape[0], in = x->shape[1], out_dim = w->shape[0];
  const int64_t group = effective_group(*scheme, in);
  const int64_t n_groups = w->numel() / group;

  auto saved = std::make_shared<detail::FakeQuantSaved>();
  saved->scales.resize(static_cast<size_t>(n_groups));
  saved->side.resize(static_cast<size_t>(n_groups));
  if (ranges != nullptr) {
    if (ranges->w_min->numel() != n_groups || ranges->w_max->numel() != n_groups) {
      throw ShapeError("fake_quant_linear: range params expect " + std::to_string(n_groups) +
                       " groups");
    }
    detail::resolve_scales(ranges->w_min->data.data(), ranges->w_max->data.data(), n_groups,
                           saved->scales.data(), saved->side.data());
  } else {
    std::vector<float> mn(static_cast<size_t>(n_groups)), mx(static_cast<size_t>(n_groups));
    for (int64_t g = 0; g < n_groups; ++g) {
      const float* base = w->data.data() + g * group;
      float lo = base[0], hi = base[0];
      for (int64_t i = 1; i < group; ++i) {
        lo = std::min(lo, base[i]);
        hi = std::max(hi, base[i]);
      }
      mn[static_cast<size_t>(g)] = lo;
      mx[static_cast<size_t>(g)] = hi;
    }
    detail::resolve_scales(mn.data(), mx.data(), n_groups, saved->scales.data(),
                           saved->side.data());
  }

  saved->w_hat.resize(static_cast<size_t>(w->numel()));
  saved->residual.resize(static_cast<size_t>(w->numel()));
  saved->clipped.resize(static_cast<size_t>(w->numel()));
  for (int64_t e = 0; e < w->numel(); ++e) {
    const float s = saved->scales[static_cast<size_t>(e / group)];
    const double r = static_cast<double>(w->data[static_cast<size_t>(e)]) / static_cast<double>(s);
    const double raw = round_half_even(r);
    const bool clip = raw < -8.0 || raw > 7.0;
    const float code = static_cast<float>(std::min(7.0, std::max(-8.0, raw)));
    saved->w_hat[static_cast<size_t>(e)] = s * code;
    saved->clipped[static_cast<size_t>(e)] = clip ? 1 : 0;
    saved->residual[static_cast<size_t>(e)] = clip ? code : static_cast<float>(code - r);
  }

  if (scheme->activations == ActQuant::Int8DynAsymPerToken) {
    saved->x_hat = x->data;
    qdq_rows_inplace(saved->x_hat.data(), t_len, in);
  } else {
    saved->x_hat = x->data;
  }

  auto out = tensor({t_len, out_dim});
  parallel_for(t_len, [&](int64_t lo, int64_t hi) {
    for (int64_t t = lo; t < hi; ++t) {
      const float* xrow = saved->x_hat.data() + t * in;
      float* orow = out->data.data() + t * out_dim;
      for (int64_t o = 0; o < out_dim; ++o) {
        const float* wrow = saved->w_hat.data() + o * in;
        float acc = 0.0f;
        for (int64_t i = 0; i < in; ++i) acc += xrow[i] * wrow[i];
        orow[o] = acc;
      }
    }
  });

  const bool learn = ranges != nullptr;
  TensorPtr rmin = learn ? ranges->w_min : nullptr;
  TensorPtr rmax = learn ? ranges->w_max : nullptr;
  const bool taped =
      tape != nullptr && (x->requires_grad || w->requires_grad ||
                          (learn && (rmin->requires_grad || rmax->requires_grad)));
  if (taped) {
    out->requires_grad = true;
    auto backward_fn = [x, w, rmin, rmax, out, saved, t_len, in, out_dim, group] {
      const float* g = out->grad.data();
      if (x->requires_grad) {
        // straight-through over the activation QDQ
        x->ensure_grad();
        parallel_for(t_len, [&](int64_t lo, int64_t hi) {
          for (int64_t t = lo; t < hi; ++t) {
            float* xg = x->grad.data() + t * in;
            const float* grow = g + t * out_dim;
            for (int64_t o = 0; o < out_dim; ++o) {
              const float gv = grow[o];
              const float* wrow = saved->w_hat.data() + o * in;
              for (int64_t i = 0; i < in; ++i) xg[i] += gv * wrow[i];
            }
          }
        });
      }
      const bool need_w = w->requires_grad;
      const bool need_r = rmax && (rmax->requires_grad || rmin->requires_grad);
      if (need_w || need_r) {
        if (need_w) w->ensure_grad();
        if (need_r) {
          rmin->ensure_grad();
          rmax->ensure_grad();
        }
        for (int64_t o = 0; o < out_dim; ++o) {
          for (int64_t i = 0; i < in; ++i) {
            const int64_t e = o * in + i;
            float dw_hat = 0.0f;
            for (int64_t t = 0; t < t_len; ++t) {
              dw_hat += g[t * out_dim + o] * saved->x_hat[static_cast<size_t>(t * in + i)];
            }
            if (need_w && !saved->clipped[static_cast<size_t>(e)]) {
              w->grad[static_cast<size_t>(e)] += dw_hat;
            }
            if (need_r) {
              const int64_t grp = e / group;
              const int8_t side = saved->side[static_cast<size_t>(grp)];
              if (side != 0) {
                const float ds = dw_hat * saved->residual[static_cast<size_t>(e)] / 7.5f;
                if (side > 0) {
                  rmax->grad[static_cast<size_t>(grp)] += ds;
                } else {
                  rmin->grad[static_cast<size_t>(grp)] -= ds;
                }
              }
            }
          }
        }
      }
    };
    if (learn) {
      tape->record("fake_quant_linear", {x, w, rmin, rmax}, out, backward_fn);
    } else {
      tape->record("fake_quant_linear", {x, w}, out, backward_fn);
    }
  }
  return out;
}

// Per-token int8 quantize-dequantize with straight-through backward. Rows are
// token indices (first dimension).
inline TensorPtr quant_dequant_tokens(const TensorPtr& x, Tape* tape = nullptr) {
  if (x->rank() < 2) throw ShapeError("quant_dequant_tokens: expected rank >= 2");
  auto out = tensor(x->shape);
  out->data = x->data;
  const int64_t rows = x->shape[0];
  qdq_rows_inplace(out->data.data(), rows, x->numel() / rows);
  if (detail::want_grad(tape, {x.get()})) {
    out->requires_grad = true;
    tape->record("quant_dequant_tokens", {x}, out, [x, out] {
      accumulate_grad(*x, out->grad.data(), out->numel());
    });
  }
  return out;
}

// Embedding lookup through the int4 grid; straight-through into the table.
inline TensorPtr fake_quant_embedding(const TensorPtr& table, const std::vector<int32_t>& ids,
                                      const QuantScheme* scheme, const RangeParams* ranges,
                                      Tape* tape = nullptr) {
  if (scheme == nullptr) return embedding(table, ids, tape);
  const int64_t vocab = table->shape[0], dim = table->shape[1];
  const int64_t group = effective_group(*scheme, dim);
  auto saved = std::make_shared<std::vector<float>>(table->data);
  {
    const int64_t n_groups = table->numel() / group;
    std::vector<float> s(static_cast<size_t>(n_groups));
    std::vector<int8_t> side(static_cast<size_t>(n_groups));
    if (ranges != nullptr) {
      detail::resolve_scales(ranges->w_min->data.data(), ranges->w_max->data.data(), n_groups,
                             s.data(), side.data());
    } else {
      for (int64_t g = 0; g < n_groups; ++g) {
        const float* base = table->data.data() + g * group;
        float lo = base[0], hi = base[0];
        for (int64_t i = 1; i < group; ++i) {
          lo = std::min(lo, base[i]);
          hi = std::max(hi, base[i]);
        }
        const float a = std::max(-lo, hi);
        s[static_cast<size_t>(g)] = std::max(a / 7.5f, kScaleFloor);
      }
    }
    for (int64_t e = 0; e < table->numel(); ++e) {
      const float sv = s[static_cast<size_t>(e / group)];
      (*saved)[static_cast<size_t>(e)] =
          sv * static_cast<float>(quantize_value((*saved)[static_cast<size_t>(e)], sv));
    }
  }
  for (int32_t id : ids) {
    if (id < 0 || id >= vocab) throw InputError("fake_quant_embedding: token id outside vocab");
  }
  const int64_t t_len = static_cast<int64_t>(ids.size());
  auto out = tensor({t_len, dim});
  for (int64_t t = 0; t < t_len; ++t) {
    const float* row = saved->data() + static_cast<int64_t>(ids[static_cast<size_t>(t)]) * dim;
    std::copy(row, row + dim, out->data.data() + t * dim);
  }
  if (detail::want_grad(tape, {table.get()})) {
    out->requires_grad = true;
    tape->record("fake_quant_embedding", {table}, out, [table, out, ids, dim] {
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

}  // namespace edgellm

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "edgellm/config.hpp"
#include "edgellm/tensor.hpp"

namespace edgellm {

constexpr float kScaleFloor = 1e-8f;

// ----------------------------- int4 packing -----------------------------

// Two's-complement nibbles, low nibble holds the even index.
inline std::vector<uint8_t> pack_int4(const std::vector<int8_t>& codes) {
  std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
  for (size_t i = 0; i < codes.size(); ++i) {
    const int8_t c = codes[i];
    if (c < -8 || c > 7) {
      throw ContractError("pack_int4: code " + std::to_string(c) + " outside [-8, 7]");
    }
    const uint8_t nib = static_cast<uint8_t>(c) & 0x0F;
    if (i % 2 == 0) {
      out[i / 2] = nib;
    } else {
      out[i / 2] |= static_cast<uint8_t>(nib << 4);
    }
  }
  return out;
}

inline std::vector<int8_t> unpack_int4(const std::vector<uint8_t>& bytes, size_t n) {
  if (bytes.size() != (n + 1) / 2) {
    throw FormatError("unpack_int4: payload of " + std::to_string(bytes.size()) +
                      " bytes cannot hold " + std::to_string(n) + " codes");
  }
  std::vector<int8_t> codes(n);
  for (size_t i = 0; i < n; ++i) {
    uint8_t nib = (i % 2 == 0) ? (bytes[i / 2] & 0x0F) : (bytes[i / 2] >> 4);
    codes[i] = static_cast<int8_t>(nib >= 8 ? static_cast<int>(nib) - 16 : static_cast<int>(nib));
  }
  return codes;
}

// ----------------------------- schemes -----------------------------

enum class WeightGranularity { Group, Channel };
enum class ActQuant { None, Int8DynAsymPerToken };
enum class RangeMode { Computed, Learnable };

struct QuantScheme {
  WeightGranularity granularity = WeightGranularity::Group;
  int64_t group_size = 32;
  ActQuant activations = ActQuant::Int8DynAsymPerToken;
  ActQuant kv_cache = ActQuant::Int8DynAsymPerToken;
  RangeMode range_mode = RangeMode::Computed;

  // CPU deployment: 4-bit group-wise weights, int8 dynamic activations and KV.
  static QuantScheme cpu() { return QuantScheme{}; }

  // Accelerator deployment: 4-bit channel-wise weights, float activations/KV,
  // learnable quantization ranges.
  static QuantScheme accelerator() {
    QuantScheme s;
    s.granularity = WeightGranularity::Channel;
    s.group_size = 0;
    s.activations = ActQuant::None;
    s.kv_cache = ActQuant::None;
    s.range_mode = RangeMode::Learnable;
    return s;
  }

  std::string granularity_name() const {
    return granularity == WeightGranularity::Group ? "group" : "channel";
  }
};

// Effective group length along a row of `row_len` weights.
inline int64_t effective_group(const QuantScheme& scheme, int64_t row_len) {
  if (scheme.granularity == WeightGranularity::Channel) return row_len;
  if (scheme.group_size < 1 || row_len % scheme.group_size != 0) {
    throw ConfigError("quant: group size " + std::to_string(scheme.group_size) +
                      " does not divide row length " + std::to_string(row_len));
  }
  return scheme.group_size;
}

// ----------------------------- int4 weights -----------------------------

// Symmetric INT4 codes with per-group scales: s = max(-w_min, w_max) / 7.5,
// code = clip(round_half_even(w / s), -8, 7).
struct QuantizedTensor {
  Shape shape;
  std::vector<uint8_t> packed;  // two codes per byte, low nibble first
  std::vector<float> scales;    // one per group
  int64_t group_size = 0;       // elements per group (row length if channel-wise)

  int64_t numel() const { return shape_numel(shape); }
  int64_t group_count() const { return static_cast<int64_t>(scales.size()); }
};

inline float symmetric_scale(float w_min, float w_max) {
  const float s = std::max(-w_min, w_max) / 7.5f;
  return std::max(s, kScaleFloor);
}

// Code arithmetic is done in float64 so the vectorized path agrees with a
// scalar double-precision reference code-for-code, tie cases included.
inline int8_t quantize_value(float w, float s) {
  const double raw = round_half_even(static_cast<double>(w) / static_cast<double>(s));
  const double clipped = std::min(7.0, std::max(-8.0, raw));
  return static_cast<int8_t>(clipped);
}

// Quantize with explicit per-group (w_min, w_max) ranges.
inline QuantizedTensor quantize_weights_with_ranges(const Tensor& w, const QuantScheme& scheme,
                                                    const std::vector<float>& w_min,
                                                    const std::vector<float>& w_max) {
  if (w.rank() != 2) throw ShapeError("quantize_weights: expected rank-2 weights");
  const int64_t rows = w.shape[0], cols = w.shape[1];
  const int64_t group = effective_group(scheme, cols);
  const int64_t groups_per_row = cols / group;
  const int64_t n_groups = rows * groups_per_row;
  if (static_cast<int64_t>(w_min.size()) != n_groups ||
      static_cast<int64_t>(w_max.size()) != n_groups) {
    throw ShapeError("quantize_weights: expected " + std::to_string(n_groups) + " ranges");
  }
  QuantizedTensor q;
  q.shape = w.shape;
  q.group_size = group;
  q.scales.resize(static_cast<size_t>(n_groups));
  std::vector<int8_t> codes(static_cast<size_t>(w.numel()));
  for (int64_t g = 0; g < n_groups; ++g) {
    const float s = symmetric_scale(w_min[static_cast<size_t>(g)], w_max[static_cast<size_t>(g)]);
    q.scales[static_cast<size_t>(g)] = s;
    const int64_t base = g * group;
    for (int64_t i = 0; i < group; ++i) {
      codes[static_cast<size_t>(base + i)] = quantize_value(w.data[static_cast<size_t>(base + i)], s);
    }
  }
  q.packed = pack_int4(codes);
  return q;
}

// Quantize against fixed per-group scales (the projection form: applying it to
// its own dequantized image reproduces the codes exactly).
inline QuantizedTensor quantize_weights_with_scales(const Tensor& w, const QuantScheme& scheme,
                                                    const std::vector<float>& scales) {
  if (w.rank() != 2) throw ShapeError("quantize_weights: expected rank-2 weights");
  const int64_t group = effective_group(scheme, w.shape[1]);
  const int64_t n_groups = w.numel() / group;
  if (static_cast<int64_t>(scales.size()) != n_groups) {
    throw ShapeError("quantize_weights: expected " + std::to_string(n_groups) + " scales");
  }
  QuantizedTensor q;
  q.shape = w.shape;
  q.group_size = group;
  q.scales = scales;
  std::vector<int8_t> codes(static_cast<size_t>(w.numel()));
  for (int64_t e = 0; e < w.numel(); ++e) {
    codes[static_cast<size_t>(e)] =
        quantize_value(w.data[static_cast<size_t>(e)], scales[static_cast<size_t>(e / group)]);
  }
  q.packed = pack_int4(codes);
  return q;
}

inline QuantizedTensor quantize_weights(const Tensor& w, const QuantScheme& scheme) {
  if (w.rank() != 2) throw ShapeError("quantize_weights: expected rank-2 weights");
  const int64_t rows = w.shape[0], cols = w.shape[1];
  const int64_t group = effective_group(scheme, cols);
  const int64_t n_groups = rows * (cols / group);
  std::vector<float> w_min(static_cast<size_t>(n_groups));
  std::vector<float> w_max(static_cast<size_t>(n_groups));
  for (int64_t g = 0; g < n_groups; ++g) {
    const int64_t base = g * group;
    float mn = w.data[static_cast<size_t>(base)], mx = mn;
    for (int64_t i = 1; i < group; ++i) {
      const float v = w.data[static_cast<size_t>(base + i)];
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    w_min[static_cast<size_t>(g)] = mn;
    w_max[static_cast<size_t>(g)] = mx;
  }
  return quantize_weights_with_ranges(w, scheme, w_min, w_max);
}

inline TensorPtr dequantize(const QuantizedTensor& q) {
  const int64_t n = q.numel();
  if (q.group_size < 1 || n % q.group_size != 0) {
    throw FormatError("dequantize: group size does not divide element count");
  }
  if (q.group_count() != n / q.group_size) {
    throw FormatError("dequantize: scale table has " + std::to_string(q.group_count()) +
                      " entries, expected " + std::to_string(n / q.group_size));
  }
  const auto codes = unpack_int4(q.packed, static_cast<size_t>(n));
  auto out = tensor(q.shape);
  for (int64_t i = 0; i < n; ++i) {
    out->data[static_cast<size_t>(i)] =
        q.scales[static_cast<size_t>(i / q.group_size)] * static_cast<float>(codes[static_cast<size_t>(i)]);
  }
  return out;
}

// ----------------------------- int8 activations -----------------------------

// Dynamic asymmetric per-token INT8: s = (max - min)/255, z = min,
// code = clip(round_half_even((x - z)/s), 0, 255). Code arithmetic in float64
// to agree exactly with a scalar double-precision reference.
inline uint8_t int8_code(float x, float z, float s) {
  const double raw =
      round_half_even((static_cast<double>(x) - static_cast<double>(z)) / static_cast<double>(s));
  return static_cast<uint8_t>(std::min(255.0, std::max(0.0, raw)));
}

struct TokenQuant {
  std::vector<uint8_t> codes;  // [T, d]
  std::vector<float> scale;    // per token
  std::vector<float> zero;     // per token
  int64_t t_len = 0;
  int64_t width = 0;
};

inline TokenQuant quantize_activation_per_token(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("quantize_activation_per_token: expected rank >= 2");
  const int64_t t_len = x.shape[0];
  const int64_t width = x.numel() / t_len;
  TokenQuant q;
  q.t_len = t_len;
  q.width = width;
  q.codes.resize(static_cast<size_t>(x.numel()));
  q.scale.resize(static_cast<size_t>(t_len));
  q.zero.resize(static_cast<size_t>(t_len));
  for (int64_t t = 0; t < t_len; ++t) {
    const float* row = x.data.data() + t * width;
    float mn = row[0], mx = row[0];
    for (int64_t i = 1; i < width; ++i) {
      mn = std::min(mn, row[i]);
      mx = std::max(mx, row[i]);
    }
    if (!std::isfinite(mn) || !std::isfinite(mx)) {
      throw NumericError("quantize_activation_per_token: non-finite input");
    }
    const float s = std::max((mx - mn) / 255.0f, kScaleFloor);
    q.scale[static_cast<size_t>(t)] = s;
    q.zero[static_cast<size_t>(t)] = mn;
    uint8_t* crow = q.codes.data() + t * width;
    for (int64_t i = 0; i < width; ++i) crow[i] = int8_code(row[i], mn, s);
  }
  return q;
}

inline TensorPtr dequantize_per_token(const TokenQuant& q, const Shape& shape) {
  if (shape_numel(shape) != static_cast<int64_t>(q.codes.size())) {
    throw ShapeError("dequantize_per_token: shape mismatch");
  }
  auto out = tensor(shape);
  for (int64_t t = 0; t < q.t_len; ++t) {
    const float s = q.scale[static_cast<size_t>(t)];
    const float z = q.zero[static_cast<size_t>(t)];
    for (int64_t i = 0; i < q.width; ++i) {
      out->data[static_cast<size_t>(t * q.width + i)] =
          s * static_cast<float>(q.codes[static_cast<size_t>(t * q.width + i)]) + z;
    }
  }
  return out;
}

// In-place quantize-dequantize of each token row; returns values on the int8
// grid. Used for the KV path so cache and one-shot recompute agree exactly.
inline void qdq_rows_inplace(float* data, int64_t rows, int64_t width) {
  for (int64_t t = 0; t < rows; ++t) {
    float* row = data + t * width;
    float mn = row[0], mx = row[0];
    for (int64_t i = 1; i < width; ++i) {
      mn = std::min(mn, row[i]);
      mx = std::max(mx, row[i]);
    }
    const float s = std::max((mx - mn) / 255.0f, kScaleFloor);
    for (int64_t i = 0; i < width; ++i) {
      row[i] = s * static_cast<float>(int8_code(row[i], mn, s)) + mn;
    }
  }
}

// ----------------------------- size accounting -----------------------------

// Deployment-style sizes: 16-bit floats for the full-precision baseline and
// for scale tables, int4 payloads for quantized weights, norm gains kept in
// 16-bit float. File sizes on disk differ (the checkpoint stores f32 scales).
struct SizeEntry {
  std::string name;
  int64_t fp_bytes = 0;
  int64_t quant_bytes = 0;
};

struct SizeReport {
  std::vector<SizeEntry> entries;
  int64_t fp_total = 0;
  int64_t quant_total = 0;
  double ratio() const {
    return fp_total == 0 ? 0.0 : static_cast<double>(quant_total) / static_cast<double>(fp_total);
  }
};

inline bool tensor_is_quantizable(const TensorSpec& spec) { return spec.shape.size() == 2; }

inline SizeReport deploy_size_report(const ModelConfig& cfg, const QuantScheme& scheme) {
  SizeReport report;
  for (const auto& spec : tensor_specs(cfg)) {
    SizeEntry e;
    e.name = spec.name;
    const int64_t n = shape_numel(spec.shape);
    e.fp_bytes = n * 2;
    if (tensor_is_quantizable(spec)) {
      const int64_t group = effective_group(scheme, spec.shape[1]);
      const int64_t n_groups = n / group;
      e.quant_bytes = (n + 1) / 2 + n_groups * 2;
    } else {
      e.quant_bytes = n * 2;
    }
    report.fp_total += e.fp_bytes;
    report.quant_total += e.quant_bytes;
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace edgellm

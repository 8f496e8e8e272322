#pragma once

#include <algorithm>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "edgellm/common.hpp"

namespace edgellm {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major float tensor. Gradient buffer is allocated lazily and, when
// present, always shape-matches the data.
struct Tensor {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::string name;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f)
      : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {
    for (int64_t d : shape) {
      if (d <= 0) throw ShapeError("Tensor: nonpositive extent in " + shape_str(shape));
    }
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t rank() const { return shape.size(); }

  float& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  float at(int64_t i) const { return data[static_cast<size_t>(i)]; }

  // 2-D accessors; caller guarantees rank 2
  float& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
  float at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0f);
  }
  void zero_grad() {
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0f);
  }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr tensor(Shape s, float fill = 0.0f) {
  return std::make_shared<Tensor>(std::move(s), fill);
}

inline TensorPtr tensor_from(Shape s, std::vector<float> values) {
  auto t = std::make_shared<Tensor>(std::move(s));
  if (static_cast<int64_t>(values.size()) != t->numel()) {
    throw ShapeError("tensor_from: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(t->shape));
  }
  t->data = std::move(values);
  return t;
}

inline TensorPtr zeros(Shape s) { return tensor(std::move(s), 0.0f); }
inline TensorPtr ones(Shape s) { return tensor(std::move(s), 1.0f); }

inline TensorPtr randn(Shape s, Rng& rng, float stddev = 1.0f) {
  auto t = tensor(std::move(s));
  for (auto& v : t->data) v = rng.normal_f() * stddev;
  return t;
}

inline TensorPtr param(Shape s, const std::string& name, float fill = 0.0f) {
  auto t = tensor(std::move(s), fill);
  t->requires_grad = true;
  t->name = name;
  return t;
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

inline bool all_finite(const Tensor& t) {
  for (float v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace edgellm

#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "edgellm/tensor.hpp"

namespace edgellm {

// Reverse-mode tape: an ordered record of primitive applications. Records are
// appended in forward order, which makes the list topological by construction;
// backward() replays it exactly once in reverse.
class Tape {
 public:
  struct Record {
    const char* op;
    std::vector<int64_t> input_ids;
    int64_t output_id;
    std::function<void()> backward;
  };

  void record(const char* op, std::initializer_list<TensorPtr> inputs, const TensorPtr& output,
              std::function<void()> backward_fn) {
    Record rec;
    rec.op = op;
    for (const auto& in : inputs) rec.input_ids.push_back(id_of(in));
    rec.output_id = id_of(output);
    rec.backward = std::move(backward_fn);
    records_.push_back(std::move(rec));
  }

  // Seeds the scalar loss with gradient 1 and propagates adjoints to every
  // requires_grad tensor on the tape. Tensors not reachable from the loss keep
  // whatever is in their grad buffer (zero unless previously accumulated).
  void backward(const TensorPtr& loss) {
    if (!loss) throw ContractError("backward: null loss");
    if (loss->numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    loss->ensure_grad();
    loss->grad[0] += 1.0f;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
      if (it->backward) it->backward();
    }
  }

  size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }

  void clear() {
    records_.clear();
    ids_.clear();
    next_id_ = 0;
    keep_alive_.clear();
  }

 private:
  int64_t id_of(const TensorPtr& t) {
    auto it = ids_.find(t.get());
    if (it != ids_.end()) return it->second;
    const int64_t id = next_id_++;
    ids_.emplace(t.get(), id);
    keep_alive_.push_back(t);
    return id;
  }

  std::vector<Record> records_;
  std::unordered_map<const Tensor*, int64_t> ids_;
  std::vector<TensorPtr> keep_alive_;
  int64_t next_id_ = 0;
};

inline void accumulate_grad(Tensor& t, const float* g, int64_t n) {
  if (!t.requires_grad) return;
  t.ensure_grad();
  for (int64_t i = 0; i < n; ++i) t.grad[static_cast<size_t>(i)] += g[i];
}

}  // namespace edgellm

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgellm/common.hpp"
#include "edgellm/engine.hpp"

namespace edgellm {

// Token bands for the synthetic retrieval vocabulary. Records are
// [kRec k1 k2 v1 v2]; the query suffix is [kQuery k1 k2] and the model must
// continue with the matching value pair.
struct NihVocab {
  int32_t rec = 0;
  int32_t query = 1;
  int32_t key_base = 8;
  int32_t key_span = 16;
  int32_t value_base = 32;
  int32_t value_span = 16;

  int64_t min_vocab() const { return value_base + value_span; }
};

constexpr int64_t kNihRecordLen = 5;  // marker + 2 key tokens + 2 value tokens
constexpr int64_t kNihQueryLen = 3;   // marker + 2 key tokens

struct NIHTask {
  std::vector<int32_t> tokens;  // haystack records plus the query suffix
  std::vector<int32_t> gold;    // 2-token value code
  double depth = 0.0;
  int64_t total_len = 0;
  int64_t needle_index = 0;  // record index holding the queried key
};

inline int64_t nih_record_count(int64_t haystack_len) {
  return (haystack_len - kNihQueryLen) / kNihRecordLen;
}

// Deterministic task generator: unique keys per record, 2-token random value
// codes, needle placed at the requested fractional depth.
inline NIHTask gen_nih_task(const NihVocab& vocab, int64_t haystack_len, double depth,
                            uint64_t seed) {
  if (depth < 0.0 || depth > 1.0) throw ContractError("gen_nih_task: depth must be in [0,1]");
  const int64_t n_rec = nih_record_count(haystack_len);
  if (n_rec < 1) throw ContractError("gen_nih_task: haystack too short for one record");
  const int64_t key_pairs = static_cast<int64_t>(vocab.key_span) * vocab.key_span;
  if (n_rec > key_pairs) throw ContractError("gen_nih_task: not enough distinct keys");

  Rng rng(seed);
  // sample distinct key pairs by index
  std::vector<int64_t> pair_ids;
  {
    std::vector<int64_t> pool(static_cast<size_t>(key_pairs));
    for (int64_t i = 0; i < key_pairs; ++i) pool[static_cast<size_t>(i)] = i;
    for (int64_t i = 0; i < n_rec; ++i) {
      const int64_t pick = static_cast<int64_t>(rng.below(static_cast<uint64_t>(key_pairs - i)));
      std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(i + pick)]);
      pair_ids.push_back(pool[static_cast<size_t>(i)]);
    }
  }

  NIHTask task;
  task.depth = depth;
  task.needle_index = static_cast<int64_t>(std::llround(depth * static_cast<double>(n_rec - 1)));
  std::vector<std::pair<int32_t, int32_t>> values;
  for (int64_t r = 0; r < n_rec; ++r) {
    const int32_t k1 = vocab.key_base + static_cast<int32_t>(pair_ids[static_cast<size_t>(r)] / vocab.key_span);
    const int32_t k2 = vocab.key_base + static_cast<int32_t>(pair_ids[static_cast<size_t>(r)] % vocab.key_span);
    const int32_t v1 = vocab.value_base + static_cast<int32_t>(rng.below(static_cast<uint64_t>(vocab.value_span)));
    const int32_t v2 = vocab.value_base + static_cast<int32_t>(rng.below(static_cast<uint64_t>(vocab.value_span)));
    task.tokens.insert(task.tokens.end(), {vocab.rec, k1, k2, v1, v2});
    values.emplace_back(v1, v2);
  }
  const int64_t needle = task.needle_index;
  const int32_t qk1 = task.tokens[static_cast<size_t>(needle * kNihRecordLen + 1)];
  const int32_t qk2 = task.tokens[static_cast<size_t>(needle * kNihRecordLen + 2)];
  task.tokens.insert(task.tokens.end(), {vocab.query, qk1, qk2});
  task.gold = {values[static_cast<size_t>(needle)].first, values[static_cast<size_t>(needle)].second};
  task.total_len = static_cast<int64_t>(task.tokens.size()) + 2;
  return task;
}

// Brute-force reference: scan for the queried key pair and copy its value.
inline std::vector<int32_t> nih_scan_oracle(const NihVocab& vocab, const NIHTask& task) {
  const size_t q = task.tokens.size() - kNihQueryLen;
  const int32_t k1 = task.tokens[q + 1], k2 = task.tokens[q + 2];
  for (size_t i = 0; i + kNihRecordLen <= q; i += kNihRecordLen) {
    if (task.tokens[i] == vocab.rec && task.tokens[i + 1] == k1 && task.tokens[i + 2] == k2) {
      return {task.tokens[i + 3], task.tokens[i + 4]};
    }
  }
  return {};
}

struct NihBucket {
  int64_t length = 0;
  double depth = 0.0;
  int64_t total = 0;
  int64_t correct = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

struct NihReport {
  std::vector<NihBucket> buckets;
  int64_t skipped = 0;
  int64_t total = 0;
  int64_t correct = 0;
  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& b : buckets) {
      rows.push_back({{"length", b.length}, {"depth", b.depth}, {"accuracy", b.accuracy()}});
    }
    return {{"heatmap", rows},
            {"overall", accuracy()},
            {"skipped", skipped},
            {"evaluated", total}};
  }
};

// Greedy-decodes the 2-token value for every task; exact match on both tokens.
// Tasks longer than ctx_len are skipped and counted separately.
inline NihReport eval_nih(const Checkpoint& ckpt, const std::vector<NIHTask>& tasks,
                          int64_t ctx_len, EngineOptions opt = {}) {
  std::map<std::pair<int64_t, int64_t>, NihBucket> buckets;  // (length, depth permille)
  NihReport report;
  for (const auto& task : tasks) {
    if (task.total_len > ctx_len || task.total_len > ckpt.config.max_context) {
      ++report.skipped;
      continue;
    }
    Session session(ckpt, opt);
    auto out = session.generate(task.tokens, 2);
    const bool hit = out.size() == 2 && out[0] == task.gold[0] && out[1] == task.gold[1];
    const auto key = std::make_pair(static_cast<int64_t>(task.tokens.size()),
                                    static_cast<int64_t>(std::llround(task.depth * 1000)));
    auto& bucket = buckets[key];
    bucket.length = key.first;
    bucket.depth = task.depth;
    bucket.total += 1;
    bucket.correct += hit ? 1 : 0;
    report.total += 1;
    report.correct += hit ? 1 : 0;
  }
  for (auto& [key, b] : buckets) report.buckets.push_back(b);
  return report;
}

}  // namespace edgellm

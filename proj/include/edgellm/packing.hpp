#pragma once

#include <cstdint>
#include <vector>

#include "edgellm/common.hpp"

namespace edgellm {

// Concatenated documents with continuous position ids and a block-causal mask:
// token i may attend token j iff both sit in the same document and j <= i.
// Targets are next-token ids, -1 at document boundaries.
struct PackedSequence {
  std::vector<int32_t> tokens;
  std::vector<int64_t> positions;   // strictly increasing 0..T-1
  std::vector<int64_t> doc_starts;  // sorted start offsets, first is 0
  std::vector<int32_t> targets;
  std::vector<int32_t> doc_of;      // document index per position

  int64_t size() const { return static_cast<int64_t>(tokens.size()); }
  int64_t doc_count() const { return static_cast<int64_t>(doc_starts.size()); }

  bool attends(int64_t i, int64_t j) const {
    return j <= i && doc_of[static_cast<size_t>(i)] == doc_of[static_cast<size_t>(j)];
  }

  void append_document(const std::vector<int32_t>& doc) {
    if (doc.empty()) throw ContractError("append_document: empty document");
    const int64_t start = size();
    const int32_t doc_idx = static_cast<int32_t>(doc_starts.size());
    doc_starts.push_back(start);
    for (size_t i = 0; i < doc.size(); ++i) {
      tokens.push_back(doc[i]);
      positions.push_back(start + static_cast<int64_t>(i));
      doc_of.push_back(doc_idx);
      targets.push_back(i + 1 < doc.size() ? doc[i + 1] : -1);
    }
  }
};

// Greedy first-fit packing: each document goes into the first open pack with
// room, otherwise a new pack is opened. Documents longer than ctx_len are
// split into ctx_len-sized pieces when split_long is set, else rejected.
inline std::vector<PackedSequence> pack_documents(const std::vector<std::vector<int32_t>>& docs,
                                                  int64_t ctx_len, bool split_long = true) {
  if (ctx_len < 1) throw ContractError("pack_documents: ctx_len must be >= 1");
  std::vector<PackedSequence> packs;
  auto place = [&](const std::vector<int32_t>& doc) {
    for (auto& pack : packs) {
      if (pack.size() + static_cast<int64_t>(doc.size()) <= ctx_len) {
        pack.append_document(doc);
        return;
      }
    }
    packs.emplace_back();
    packs.back().append_document(doc);
  };
  for (const auto& doc : docs) {
    if (doc.empty()) continue;
    if (static_cast<int64_t>(doc.size()) <= ctx_len) {
      place(doc);
      continue;
    }
    if (!split_long) {
      throw ContractError("pack_documents: document of length " + std::to_string(doc.size()) +
                          " exceeds ctx_len " + std::to_string(ctx_len) +
                          " and splitting is disabled");
    }
    for (size_t off = 0; off < doc.size(); off += static_cast<size_t>(ctx_len)) {
      const size_t end = std::min(doc.size(), off + static_cast<size_t>(ctx_len));
      place(std::vector<int32_t>(doc.begin() + static_cast<int64_t>(off),
                                 doc.begin() + static_cast<int64_t>(end)));
    }
  }
  return packs;
}

}  // namespace edgellm

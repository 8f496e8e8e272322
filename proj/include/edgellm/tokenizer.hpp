#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace edgellm {

// Fixed byte-level tokenizer: ids 0..255 are raw bytes, 256 is BOS, 257 EOS.
// Deliberately training-free so corpora tokenize identically everywhere.
struct ByteTokenizer {
  static constexpr int32_t kBos = 256;
  static constexpr int32_t kEos = 257;
  static constexpr int64_t kVocab = 258;

  static std::vector<int32_t> encode(std::string_view text, bool add_bos = true,
                                     bool add_eos = true) {
    std::vector<int32_t> out;
    out.reserve(text.size() + 2);
    if (add_bos) out.push_back(kBos);
    for (unsigned char c : text) out.push_back(static_cast<int32_t>(c));
    if (add_eos) out.push_back(kEos);
    return out;
  }

  static std::string decode(const std::vector<int32_t>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int32_t id : ids) {
      if (id >= 0 && id < 256) out.push_back(static_cast<char>(id));
    }
    return out;
  }
};

}  // namespace edgellm

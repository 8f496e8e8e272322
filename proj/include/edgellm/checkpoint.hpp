#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgellm/config.hpp"
#include "edgellm/quant.hpp"
#include "edgellm/tensor.hpp"

namespace edgellm {

struct Checkpoint {
  ModelConfig config;
  std::map<std::string, TensorPtr> tensors;         // float tensors
  std::map<std::string, QuantizedTensor> qtensors;  // int4-packed weights
  std::string phase;
  int64_t step = 0;
  std::string notes;

  bool quantized() const { return !qtensors.empty(); }
};

// ----------------------------- config <-> json -----------------------------

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"n_layers", c.n_layers},
                        {"n_heads", c.n_heads},
                        {"n_kv_heads", c.n_kv_heads},
                        {"dim", c.dim},
                        {"hidden_dim", c.hidden_dim},
                        {"vocab_size", c.vocab_size},
                        {"window", c.window},
                        {"global_every", c.global_every},
                        {"rope_base", static_cast<double>(c.rope_base)},
                        {"max_context", c.max_context},
                        {"tie_embeddings", c.tie_embeddings},
                        {"norm_eps", static_cast<double>(c.norm_eps)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<int64_t>();
  c.n_heads = j.at("n_heads").get<int64_t>();
  c.n_kv_heads = j.at("n_kv_heads").get<int64_t>();
  c.dim = j.at("dim").get<int64_t>();
  c.hidden_dim = j.at("hidden_dim").get<int64_t>();
  c.vocab_size = j.at("vocab_size").get<int64_t>();
  c.window = j.at("window").get<int64_t>();
  c.global_every = j.at("global_every").get<int64_t>();
  c.rope_base = static_cast<float>(j.at("rope_base").get<double>());
  c.max_context = j.at("max_context").get<int64_t>();
  c.tie_embeddings = j.at("tie_embeddings").get<bool>();
  c.norm_eps = static_cast<float>(j.at("norm_eps").get<double>());
  return c;
}

// ----------------------------- file format -----------------------------
//
// magic "MLMP" | u32 version=1 | u64 header length | UTF-8 JSON header |
// raw little-endian payloads. The header carries the config, metadata, and a
// tensor table of {name, dtype, shape, offset, bytes} entries with offsets
// relative to the payload base. dtypes: f32, i8, i4 (two codes per byte, low
// nibble first; scales stored as a paired f32 tensor named "<name>.scales").

namespace detail {

inline void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
inline uint32_t get_u32(const uint8_t* p) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
  return v;
}
inline uint64_t get_u64(const uint8_t* p) {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json table = nlohmann::json::array();
  std::vector<uint8_t> payload;
  auto add_entry = [&](const std::string& name, const char* dtype, const Shape& shape,
                       const uint8_t* bytes, size_t n_bytes, int64_t group_size = 0) {
    nlohmann::json e{{"name", name},
                     {"dtype", dtype},
                     {"shape", shape},
                     {"offset", payload.size()},
                     {"bytes", n_bytes}};
    if (group_size > 0) e["group_size"] = group_size;
    table.push_back(std::move(e));
    payload.insert(payload.end(), bytes, bytes + n_bytes);
  };

  for (const auto& [name, t] : ckpt.tensors) {
    add_entry(name, "f32", t->shape, reinterpret_cast<const uint8_t*>(t->data.data()),
              t->data.size() * sizeof(float));
  }
  for (const auto& [name, q] : ckpt.qtensors) {
    add_entry(name, "i4", q.shape, q.packed.data(), q.packed.size(), q.group_size);
    add_entry(name + ".scales", "f32", {q.group_count()},
              reinterpret_cast<const uint8_t*>(q.scales.data()), q.scales.size() * sizeof(float));
  }

  nlohmann::json header{{"config", config_to_json(ckpt.config)},
                        {"metadata",
                         {{"phase", ckpt.phase}, {"step", ckpt.step}, {"notes", ckpt.notes}}},
                        {"tensors", table}};
  const std::string header_str = header.dump();

  std::vector<uint8_t> out;
  out.reserve(16 + header_str.size() + payload.size());
  out.push_back('M');
  out.push_back('L');
  out.push_back('M');
  out.push_back('P');
  detail::put_u32(out, 1);
  detail::put_u64(out, header_str.size());
  out.insert(out.end(), header_str.begin(), header_str.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::vector<uint8_t>& buf) {
  if (buf.size() < 16) throw FormatError("checkpoint: truncated before header (offset 0)");
  if (std::memcmp(buf.data(), "MLMP", 4) != 0) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const uint32_t version = detail::get_u32(buf.data() + 4);
  if (version != 1) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) +
                      " at offset 4");
  }
  const uint64_t header_len = detail::get_u64(buf.data() + 8);
  if (16 + header_len > buf.size()) {
    throw FormatError("checkpoint: header of " + std::to_string(header_len) +
                      " bytes overruns file at offset 16");
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<int64_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header parse failure at offset 16: ") + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    const auto& meta = header.at("metadata");
    ckpt.phase = meta.at("phase").get<std::string>();
    ckpt.step = meta.at("step").get<int64_t>();
    ckpt.notes = meta.at("notes").get<std::string>();

    const uint8_t* base = buf.data() + 16 + header_len;
    const uint64_t payload_size = buf.size() - 16 - header_len;
    std::map<std::string, std::pair<nlohmann::json, const uint8_t*>> i4_entries;
    std::map<std::string, TensorPtr> scale_tensors;

    for (const auto& e : header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const std::string dtype = e.at("dtype").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      const uint64_t offset = e.at("offset").get<uint64_t>();
      const uint64_t bytes = e.at("bytes").get<uint64_t>();
      if (offset + bytes > payload_size) {
        throw FormatError("checkpoint: tensor '" + name + "' overruns payload at offset " +
                          std::to_string(16 + header_len + offset));
      }
      const uint8_t* src = base + offset;
      if (dtype == "f32") {
        const int64_t n = shape_numel(shape);
        if (bytes != static_cast<uint64_t>(n) * sizeof(float)) {
          throw FormatError("checkpoint: tensor '" + name + "' byte count mismatch");
        }
        auto t = tensor(shape);
        std::memcpy(t->data.data(), src, bytes);
        if (name.size() > 7 && name.compare(name.size() - 7, 7, ".scales") == 0) {
          scale_tensors.emplace(name.substr(0, name.size() - 7), std::move(t));
        } else {
          t->name = name;
          ckpt.tensors.emplace(name, std::move(t));
        }
      } else if (dtype == "i8") {
        const int64_t n = shape_numel(shape);
        if (bytes != static_cast<uint64_t>(n)) {
          throw FormatError("checkpoint: tensor '" + name + "' byte count mismatch");
        }
        auto t = tensor(shape);
        for (int64_t i = 0; i < n; ++i) {
          t->data[static_cast<size_t>(i)] = static_cast<float>(static_cast<int8_t>(src[i]));
        }
        t->name = name;
        ckpt.tensors.emplace(name, std::move(t));
      } else if (dtype == "i4") {
        i4_entries.emplace(name, std::make_pair(e, src));
      } else {
        throw FormatError("checkpoint: tensor '" + name + "' has unknown dtype '" + dtype + "'");
      }
    }

    for (const auto& [name, entry] : i4_entries) {
      const auto& [e, src] = entry;
      QuantizedTensor q;
      q.shape = e.at("shape").get<Shape>();
      q.group_size = e.at("group_size").get<int64_t>();
      const uint64_t bytes = e.at("bytes").get<uint64_t>();
      if (bytes != static_cast<uint64_t>((q.numel() + 1) / 2)) {
        throw FormatError("checkpoint: tensor '" + name + "' packed byte count mismatch");
      }
      q.packed.assign(src, src + bytes);
      auto it = scale_tensors.find(name);
      if (it == scale_tensors.end()) {
        throw FormatError("checkpoint: tensor '" + name + "' is missing its scale table");
      }
      if (q.group_size < 1 || q.numel() % q.group_size != 0 ||
          it->second->numel() != q.numel() / q.group_size) {
        throw FormatError("checkpoint: tensor '" + name + "' scale table shape mismatch");
      }
      q.scales = it->second->data;
      ckpt.qtensors.emplace(name, std::move(q));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: malformed header field: ") + e.what());
  }
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("save_checkpoint: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("save_checkpoint: write failure on " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("load_checkpoint: cannot open " + path);
  const std::streamsize size = in.tellg();
  in.seekg(0);
  std::vector<uint8_t> buf(static_cast<size_t>(size));
  in.read(reinterpret_cast<char*>(buf.data()), size);
  if (!in) throw IoError("load_checkpoint: read failure on " + path);
  return deserialize_checkpoint(buf);
}

inline bool checkpoints_equal_tensors(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end() || it->second->shape != t->shape) return false;
    if (std::memcmp(it->second->data.data(), t->data.data(), t->data.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

inline bool checkpoints_equal(const Checkpoint& a, const Checkpoint& b) {
  if (a.tensors.size() != b.tensors.size() || a.qtensors.size() != b.qtensors.size()) return false;
  for (const auto& [name, t] : a.tensors) {
    auto it = b.tensors.find(name);
    if (it == b.tensors.end() || it->second->shape != t->shape) return false;
    if (std::memcmp(it->second->data.data(), t->data.data(), t->data.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  for (const auto& [name, q] : a.qtensors) {
    auto it = b.qtensors.find(name);
    if (it == b.qtensors.end() || it->second.shape != q.shape || it->second.packed != q.packed ||
        it->second.scales != q.scales || it->second.group_size != q.group_size) {
      return false;
    }
  }
  return a.phase == b.phase && a.step == b.step && a.notes == b.notes;
}

}  // namespace edgellm

#include <catch2/catch_amalgamated.hpp>

#include "edgellm/engine.hpp"
#include "edgellm/model.hpp"

using namespace edgellm;

namespace {

ModelConfig toy_config() {
  ModelConfig c;
  c.n_layers = 3;  // global, local, global
  c.n_heads = 4;
  c.n_kv_heads = 2;
  c.dim = 16;
  c.hidden_dim = 32;
  c.vocab_size = 48;
  c.window = 6;
  c.global_every = 3;
  c.max_context = 256;
  return c;
}

std::vector<int32_t> arith_tokens(int64_t n, int64_t vocab) {
  std::vector<int32_t> t(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) t[static_cast<size_t>(i)] = static_cast<int32_t>((i * 7 + 3) % vocab);
  return t;
}

}  // namespace

TEST_CASE("prefill of an empty prompt is an error") {
  auto ckpt = build_model(toy_config(), 1);
  Session s(ckpt);
  REQUIRE_THROWS_AS(s.prefill({}), ContractError);
}

TEST_CASE("prefill logits match the training-path forward") {
  auto ckpt = build_model(toy_config(), 2);
  auto model = bind_model(ckpt);
  const auto prompt = arith_tokens(24, 48);

  PackedSequence packed;
  packed.append_document(prompt);
  auto full = model_forward(model, packed);

  Session s(ckpt);
  auto logits = s.prefill(prompt);
  for (int64_t v = 0; v < 48; ++v) {
    REQUIRE_THAT(logits[static_cast<size_t>(v)],
                 Catch::Matchers::WithinAbs(full->at(23, v), 1e-4));
  }
}

TEST_CASE("incremental decode equals one-shot forward for every prefix") {
  auto ckpt = build_model(toy_config(), 3);
  auto model = bind_model(ckpt);
  const int64_t total = 128;
  const auto tokens = arith_tokens(total, 48);

  PackedSequence packed;
  packed.append_document(tokens);
  auto full = model_forward(model, packed);

  Session s(ckpt);
  auto logits = s.prefill({tokens[0]});
  for (int64_t t = 1; t < total; ++t) {
    for (int64_t v = 0; v < 48; ++v) {
      REQUIRE_THAT(logits[static_cast<size_t>(v)],
                   Catch::Matchers::WithinAbs(full->at(t - 1, v), 1e-4));
    }
    logits = s.decode_step(tokens[static_cast<size_t>(t)]);
  }
  for (int64_t v = 0; v < 48; ++v) {
    REQUIRE_THAT(logits[static_cast<size_t>(v)],
                 Catch::Matchers::WithinAbs(full->at(total - 1, v), 1e-4));
  }
}

TEST_CASE("int8 KV decode equals one-shot forward with quantized KV") {
  auto ckpt = build_model(toy_config(), 4);
  auto model = bind_model(ckpt);
  const int64_t total = 64;
  const auto tokens = arith_tokens(total, 48);

  PackedSequence packed;
  packed.append_document(tokens);
  ForwardOptions fopt;
  fopt.kv_int8 = true;
  auto full = model_forward(model, packed, nullptr, fopt);

  EngineOptions eopt;
  eopt.kv_dtype = KvDtype::Int8;
  Session s(ckpt, eopt);
  auto logits = s.prefill({tokens[0]});
  for (int64_t t = 1; t < total; ++t) {
    for (int64_t v = 0; v < 48; ++v) {
      REQUIRE_THAT(logits[static_cast<size_t>(v)],
                   Catch::Matchers::WithinAbs(full->at(t - 1, v), 1e-4));
    }
    logits = s.decode_step(tokens[static_cast<size_t>(t)]);
  }
}

TEST_CASE("chunked prefill equals token-by-token decode on the quantized path") {
  auto cfg = toy_config();
  auto ckpt = build_model(cfg, 14);
  QuantScheme scheme = QuantScheme::cpu();
  scheme.group_size = 8;
  Checkpoint qckpt;
  qckpt.config = cfg;
  qckpt.phase = "ptq";
  for (const auto& [name, t] : ckpt.tensors) {
    if (t->rank() == 2) {
      qckpt.qtensors.emplace(name, quantize_weights(*t, scheme));
    } else {
      qckpt.tensors.emplace(name, t);
    }
  }
  EngineOptions opt;
  opt.kv_dtype = KvDtype::Int8;
  opt.act_int8 = true;
  const auto tokens = arith_tokens(40, 48);

  Session chunked(qckpt, opt);
  auto a = chunked.prefill(tokens);

  Session stepped(qckpt, opt);
  auto b = stepped.prefill({tokens[0]});
  for (size_t t = 1; t < tokens.size(); ++t) b = stepped.decode_step(tokens[t]);

  for (size_t v = 0; v < a.size(); ++v) {
    REQUIRE_THAT(a[v], Catch::Matchers::WithinAbs(b[v], 1e-4f));
  }
}

TEST_CASE("local ring holds exactly the last window positions") {
  auto cfg = toy_config();
  auto ckpt = build_model(cfg, 5);
  Session s(ckpt);
  const int64_t prompt_len = cfg.window + 1;
  s.prefill(arith_tokens(prompt_len, 48));

  const auto& cache = s.cache();
  const auto kinds = cfg.layout();
  for (size_t l = 0; l < kinds.size(); ++l) {
    const auto& layer = cache.layers[l];
    if (kinds[l] == LayerKind::Local) {
      REQUIRE(layer.count == cfg.window);
      std::vector<int64_t> positions;
      for (int64_t slot : layer.live_slots()) positions.push_back(layer.pos[static_cast<size_t>(slot)]);
      std::sort(positions.begin(), positions.end());
      for (int64_t i = 0; i < cfg.window; ++i) {
        REQUIRE(positions[static_cast<size_t>(i)] == prompt_len - cfg.window + i);
      }
    } else {
      REQUIRE(layer.count == prompt_len);
    }
  }

  // after T more steps, global layers hold min(T + prompt, max_context)
  for (int i = 0; i < 10; ++i) s.decode_step(1);
  for (size_t l = 0; l < kinds.size(); ++l) {
    if (kinds[l] == LayerKind::Global) REQUIRE(cache.layers[l].count == prompt_len + 10);
    if (kinds[l] == LayerKind::Local) REQUIRE(cache.layers[l].count == cfg.window);
  }
}

TEST_CASE("max_context overflow is rejected") {
  auto cfg = toy_config();
  cfg.max_context = 16;
  auto ckpt = build_model(cfg, 6);
  Session s(ckpt);
  REQUIRE_THROWS_AS(s.prefill(arith_tokens(17, 48)), StateError);
  Session s2(ckpt);
  s2.prefill(arith_tokens(16, 48));
  REQUIRE_THROWS_AS(s2.decode_step(1), StateError);
}

TEST_CASE("kv_cache_size arithmetic") {
  // all-global tiny config, ctx 1, f32: layers * width * 2 * 4 bytes
  ModelConfig tiny;
  tiny.n_layers = 2;
  tiny.n_heads = 2;
  tiny.n_kv_heads = 2;
  tiny.dim = 8;
  tiny.hidden_dim = 8;
  tiny.vocab_size = 16;
  tiny.window = 4;
  tiny.global_every = 1;  // every layer global
  tiny.max_context = 64;
  REQUIRE(kv_cache_size(tiny, 1, KvDtype::F32) == 2 * (2 * 4) * 2 * 4);

  // linear in ctx for all-global configs
  REQUIRE(kv_cache_size(tiny, 32, KvDtype::F32) == 32 * kv_cache_size(tiny, 1, KvDtype::F32));

  // beyond the window, growth comes only from global layers
  ModelConfig mixed = tiny;
  mixed.global_every = 4;
  mixed.n_layers = 5;  // G L L L G
  const int64_t global_layers = 2, local_layers = 3, width = 8, bytes = 4;
  REQUIRE(kv_cache_size(mixed, 4, KvDtype::F32) ==
          (global_layers * 4 + local_layers * 4) * width * 2 * bytes);
  REQUIRE(kv_cache_size(mixed, 8, KvDtype::F32) ==
          (global_layers * 8 + local_layers * 4) * width * 2 * bytes);
}

TEST_CASE("reference config reproduces the published cache sizes with int8 KV") {
  const auto cfg = ModelConfig::reference_1b();
  const double mb = 1024.0 * 1024.0;
  const double s2k = static_cast<double>(kv_cache_size(cfg, 2048, KvDtype::Int8)) / mb;
  const double s4k = static_cast<double>(kv_cache_size(cfg, 4096, KvDtype::Int8)) / mb;
  const double s8k = static_cast<double>(kv_cache_size(cfg, 8192, KvDtype::Int8)) / mb;
  REQUIRE_THAT(s2k, Catch::Matchers::WithinRel(14.0, 0.15));
  REQUIRE_THAT(s4k, Catch::Matchers::WithinRel(23.0, 0.15));
  REQUIRE_THAT(s8k, Catch::Matchers::WithinRel(40.0, 0.15));
}

TEST_CASE("generate determinism and limits") {
  auto ckpt = build_model(toy_config(), 7);
  const auto prompt = arith_tokens(8, 48);

  Session a(ckpt);
  REQUIRE(a.generate(prompt, 0).empty());

  Session b(ckpt), c(ckpt);
  auto g1 = b.generate(prompt, 12);
  auto g2 = c.generate(prompt, 12);
  REQUIRE(g1 == g2);

  // near-zero temperature converges to greedy
  SamplingParams cold;
  cold.greedy = false;
  cold.temperature = 1e-6f;
  EngineOptions seeded;
  seeded.seed = 42;
  Session d(ckpt, seeded);
  auto g3 = d.generate(prompt, 12, cold);
  REQUIRE(g3 == g1);

  // seeded sampling is reproducible
  SamplingParams warm;
  warm.greedy = false;
  warm.temperature = 1.0f;
  warm.top_k = 8;
  Session e(ckpt, seeded), f(ckpt, seeded);
  REQUIRE(e.generate(prompt, 12, warm) == f.generate(prompt, 12, warm));
}

TEST_CASE("bench reports consistent cache arithmetic and timings") {
  auto ckpt = build_model(toy_config(), 8);
  auto res = bench(ckpt, 32, 16, 3);
  REQUIRE(res.prefill_seconds > 0.0);
  REQUIRE(res.decode_tokens_per_s > 0.0);
  REQUIRE_THAT(res.kv_cache_mb,
               Catch::Matchers::WithinRel(
                   static_cast<double>(kv_cache_size(ckpt.config, 48, KvDtype::F32)) / (1024.0 * 1024.0),
                   1e-12));
  auto res2 = bench(ckpt, 32, 16, 1);
  REQUIRE(res.kv_cache_mb == res2.kv_cache_mb);
  REQUIRE(res.model_mb == res2.model_mb);
}

TEST_CASE("decode slows down as the attended prefix grows") {
  auto cfg = toy_config();
  cfg.max_context = 2048;
  auto ckpt = build_model(cfg, 9);
  auto fast = bench(ckpt, 16, 64, 3);
  auto slow = bench(ckpt, 1024, 64, 3);
  REQUIRE(slow.decode_tokens_per_s < fast.decode_tokens_per_s);
}

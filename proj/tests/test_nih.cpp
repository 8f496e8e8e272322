#include <catch2/catch_amalgamated.hpp>

#include "edgellm/coverage.hpp"
#include "edgellm/ipd.hpp"
#include "edgellm/nih.hpp"

using namespace edgellm;

namespace {

ModelConfig student_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.n_kv_heads = 1;
  c.dim = 16;
  c.hidden_dim = 32;
  c.vocab_size = 48;
  c.window = 16;
  c.global_every = 2;
  c.max_context = 512;
  return c;
}

}  // namespace

TEST_CASE("nih task generation: boundaries, determinism, structure") {
  NihVocab vocab;
  auto t0 = gen_nih_task(vocab, 64, 0.0, 7);
  REQUIRE(t0.needle_index == 0);  // depth 0 -> first record

  auto t1 = gen_nih_task(vocab, 64, 1.0, 7);
  REQUIRE(t1.needle_index == nih_record_count(64) - 1);

  auto a = gen_nih_task(vocab, 64, 0.5, 11);
  auto b = gen_nih_task(vocab, 64, 0.5, 11);
  auto c = gen_nih_task(vocab, 64, 0.5, 12);
  REQUIRE(a.tokens == b.tokens);
  REQUIRE(a.tokens != c.tokens);  // different needles, same structure
  REQUIRE(a.tokens.size() == c.tokens.size());

  // distractor keys are distinct from the query key
  const size_t q = a.tokens.size() - kNihQueryLen;
  const int32_t k1 = a.tokens[q + 1], k2 = a.tokens[q + 2];
  int matches = 0;
  for (size_t i = 0; i + kNihRecordLen <= q; i += kNihRecordLen) {
    if (a.tokens[i + 1] == k1 && a.tokens[i + 2] == k2) ++matches;
  }
  REQUIRE(matches == 1);
}

TEST_CASE("scan oracle solves every generated task") {
  NihVocab vocab;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    const double depth = static_cast<double>(seed % 5) / 4.0;
    auto task = gen_nih_task(vocab, 128, depth, seed);
    REQUIRE(nih_scan_oracle(vocab, task) == task.gold);
  }
}

TEST_CASE("eval_nih skips tasks beyond the context and reports buckets") {
  NihVocab vocab;
  auto ckpt = build_model(student_config(), 3);
  std::vector<NIHTask> tasks;
  tasks.push_back(gen_nih_task(vocab, 40, 0.5, 1));
  tasks.push_back(gen_nih_task(vocab, 400, 0.5, 2));  // longer than eval ctx
  auto report = eval_nih(ckpt, tasks, 64);
  REQUIRE(report.skipped == 1);
  REQUIRE(report.total == 1);
  REQUIRE(report.buckets.size() == 1);
  auto j = report.to_json();
  REQUIRE(j.contains("heatmap"));
  REQUIRE(j.contains("skipped"));
}

TEST_CASE("eval_nih is deterministic under greedy decoding") {
  NihVocab vocab;
  auto ckpt = build_model(student_config(), 4);
  std::vector<NIHTask> tasks;
  for (uint64_t s = 0; s < 6; ++s) tasks.push_back(gen_nih_task(vocab, 44, 0.5, s));
  auto r1 = eval_nih(ckpt, tasks, 128);
  auto r2 = eval_nih(ckpt, tasks, 128);
  REQUIRE(r1.correct == r2.correct);
  REQUIRE(r1.total == r2.total);
}

TEST_CASE("angular coverage formula and limits") {
  auto zero = angular_coverage(0, 8, 10000.0);
  for (double c : zero.covered) REQUIRE(c == 0.0);

  // theta = 0.5 needs d and base with base^(-2i/d) = 0.5 at some i:
  // base = 4, d = 4, i = 1 -> 4^(-1/2) = 0.5
  auto prof = angular_coverage(10, 4, 4.0);
  REQUIRE_THAT(prof.theta[1], Catch::Matchers::WithinAbs(0.5, 1e-12));
  REQUIRE_THAT(prof.covered[1], Catch::Matchers::WithinAbs(5.0 / (2.0 * M_PI), 1e-9));
  REQUIRE_THAT(prof.covered[1], Catch::Matchers::WithinAbs(0.796, 1e-3));

  // saturation: L big enough covers every channel
  auto sat = angular_coverage(100000000, 8, 10000.0);
  for (double c : sat.covered) REQUIRE(c == 1.0);

  // monotone non-increasing in the frequency index, monotone in L
  auto p1 = angular_coverage(64, 16, 10000.0);
  auto p2 = angular_coverage(256, 16, 10000.0);
  for (size_t i = 1; i < p1.covered.size(); ++i) REQUIRE(p1.covered[i] <= p1.covered[i - 1]);
  for (size_t i = 0; i < p1.covered.size(); ++i) REQUIRE(p1.covered[i] <= p2.covered[i]);

  REQUIRE(angular_coverage(10, 6, 10000.0).to_csv().find("freq_index") == 0);
  REQUIRE_THROWS_AS(angular_coverage(10, 7, 10000.0), ContractError);
}

TEST_CASE("ipd_run enforces the short-data premise") {
  auto student = build_model(student_config(), 5);
  auto teacher = build_model(student_config(), 6);
  IpdConfig cfg;
  cfg.long_ctx = 128;
  cfg.l_short = 16;
  cfg.steps = 1;

  std::vector<std::vector<int32_t>> docs{std::vector<int32_t>(17, 1)};  // too long
  REQUIRE_THROWS_AS(ipd_run(student, teacher, docs, cfg), ContractError);

  ModelConfig small_teacher_cfg = student_config();
  small_teacher_cfg.max_context = 64;
  auto small_teacher = build_model(small_teacher_cfg, 7);
  std::vector<std::vector<int32_t>> ok{std::vector<int32_t>(8, 1)};
  REQUIRE_THROWS_AS(ipd_run(student, small_teacher, ok, cfg), ContractError);
}

TEST_CASE("ipd with teacher == student and lr 0 leaves the student unchanged") {
  auto student = build_model(student_config(), 8);
  auto teacher = build_model(student_config(), 8);
  auto before = serialize_checkpoint(student);
  IpdConfig cfg;
  cfg.long_ctx = 64;
  cfg.l_short = 16;
  cfg.steps = 3;
  cfg.max_lr = 0.0;
  std::vector<std::vector<int32_t>> docs;
  Rng rng(9);
  for (int i = 0; i < 20; ++i) {
    std::vector<int32_t> d(8 + rng.below(8));
    for (auto& t : d) t = static_cast<int32_t>(rng.below(48));
    docs.push_back(std::move(d));
  }
  auto log = ipd_run(student, teacher, docs, cfg);
  REQUIRE(log.size() >= 1);
  for (const auto& m : log) REQUIRE(m.loss <= 1e-6);
  student.phase = "init";
  student.step = 0;
  REQUIRE(serialize_checkpoint(student) == before);
}

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace edgellm {

// ----------------------------- errors -----------------------------

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ----------------------------- rounding -----------------------------

// Round half to even. Relies on the default FP environment (round-to-nearest),
// which this library never changes.
inline float round_half_even(float x) { return std::nearbyintf(x); }
inline double round_half_even(double x) { return std::nearbyint(x); }

// ----------------------------- rng -----------------------------

// Deterministic RNG: mt19937_64 with explicit float/normal transforms so the
// stream does not depend on the standard library's distribution internals.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  float uniform_f() { return static_cast<float>(uniform()); }

  // standard normal via Box-Muller, spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  float normal_f() { return static_cast<float>(normal()); }

  // uniform integer in [0, n), rejection sampled
  uint64_t below(uint64_t n) {
    if (n == 0) throw ContractError("Rng::below: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v = gen_();
    while (v >= limit) v = gen_();
    return v % n;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// ----------------------------- threading -----------------------------

inline int thread_cap() {
  static const int cap = [] {
    if (const char* env = std::getenv("EDGELLM_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<int>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cap;
}

// Splits [0, n) into contiguous chunks, one worker per chunk. Every index is
// handled by exactly one worker, so disjoint writes stay deterministic
// regardless of the thread count.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  const int threads = thread_cap();
  if (n <= 0) return;
  if (threads <= 1 || n < 256) {
    body(0, n);
    return;
  }
  const int workers = static_cast<int>(std::min<int64_t>(threads, n));
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min<int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace edgellm

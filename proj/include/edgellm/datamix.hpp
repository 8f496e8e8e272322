#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "edgellm/common.hpp"

namespace edgellm {

struct DomainCorpus {
  std::string domain;
  std::vector<std::vector<int32_t>> documents;

  int64_t token_count() const {
    int64_t n = 0;
    for (const auto& d : documents) n += static_cast<int64_t>(d.size());
    return n;
  }
};

// ----------------------------- statistical LM -----------------------------

// Add-k smoothed n-gram model over a fixed vocabulary. Contexts shorter than
// order-1 (document starts) are modelled as their own shorter contexts.
class SLM {
 public:
  SLM(int64_t order, double k, int64_t vocab) : order_(order), k_(k), vocab_(vocab) {
    if (order < 1) throw ContractError("SLM: order must be >= 1");
    if (!(k > 0.0)) throw ContractError("SLM: smoothing k must be > 0");
    if (vocab < 1) throw ContractError("SLM: vocab must be >= 1");
  }

  int64_t order() const { return order_; }
  int64_t vocab() const { return vocab_; }

  void add_document(const std::vector<int32_t>& doc) {
    for (size_t t = 0; t < doc.size(); ++t) {
      check_token(doc[t]);
      const uint64_t ctx = context_key(doc, t);
      auto& table = counts_[ctx];
      ++table[doc[t]];
      ++totals_[ctx];
    }
  }

  double prob(uint64_t ctx_key, int32_t next) const {
    int64_t count = 0, total = 0;
    auto it = counts_.find(ctx_key);
    if (it != counts_.end()) {
      auto jt = it->second.find(next);
      if (jt != it->second.end()) count = jt->second;
      total = totals_.at(ctx_key);
    }
    return (static_cast<double>(count) + k_) /
           (static_cast<double>(total) + k_ * static_cast<double>(vocab_));
  }

  // mean -ln p per token, in nats
  double cross_entropy(const std::vector<std::vector<int32_t>>& docs) const {
    if (docs.empty()) throw ContractError("SLM::cross_entropy: empty doc set");
    double acc = 0.0;
    int64_t tokens = 0;
    for (const auto& doc : docs) {
      for (size_t t = 0; t < doc.size(); ++t) {
        check_token(doc[t]);
        acc += -std::log(prob(context_key(doc, t), doc[t]));
        ++tokens;
      }
    }
    if (tokens == 0) throw ContractError("SLM::cross_entropy: no tokens");
    return acc / static_cast<double>(tokens);
  }

  uint64_t context_key(const std::vector<int32_t>& doc, size_t t) const {
    uint64_t key = 0;
    const size_t lo = t >= static_cast<size_t>(order_ - 1) ? t - static_cast<size_t>(order_ - 1) : 0;
    for (size_t i = lo; i < t; ++i) {
      key = key * static_cast<uint64_t>(vocab_ + 1) + static_cast<uint64_t>(doc[i] + 1);
    }
    return key;
  }

 private:
  void check_token(int32_t tok) const {
    if (tok < 0 || tok >= vocab_) {
      throw InputError("SLM: token " + std::to_string(tok) + " outside vocab " +
                       std::to_string(vocab_));
    }
  }

  int64_t order_;
  double k_;
  int64_t vocab_;
  std::unordered_map<uint64_t, std::unordered_map<int32_t, int64_t>> counts_;
  std::unordered_map<uint64_t, int64_t> totals_;
};

inline SLM slm_fit(const DomainCorpus& corpus, int64_t order, double k, int64_t vocab) {
  if (corpus.documents.empty()) throw ContractError("slm_fit: empty corpus");
  SLM slm(order, k, vocab);
  for (const auto& doc : corpus.documents) slm.add_document(doc);
  return slm;
}

// ----------------------------- influence -----------------------------

using InfluenceVector = std::vector<double>;

// Influence of one sample on each domain: the drop in that domain's held-out
// cross entropy after a scratch-copy update with the sample. Stored models are
// never mutated.
inline InfluenceVector influence(const std::vector<int32_t>& sample,
                                 const std::vector<SLM>& domain_slms,
                                 const std::vector<std::vector<std::vector<int32_t>>>& probe_sets) {
  if (domain_slms.size() != probe_sets.size()) {
    throw ShapeError("influence: one probe set per domain required");
  }
  InfluenceVector delta(domain_slms.size(), 0.0);
  for (size_t d = 0; d < domain_slms.size(); ++d) {
    const double before = domain_slms[d].cross_entropy(probe_sets[d]);
    SLM updated = domain_slms[d];
    updated.add_document(sample);
    delta[d] = before - updated.cross_entropy(probe_sets[d]);
  }
  return delta;
}

// ----------------------------- utility regressor -----------------------------

// Affine least-squares map from influence features to a scalar utility, with a
// ridge fallback when the normal equations are rank-deficient.
struct UtilityRegressor {
  std::vector<double> weights;  // [dim] slopes + bias at the end
  bool ridge_used = false;
  double train_mse = 0.0;
  double r2 = 0.0;

  double predict(const InfluenceVector& x) const {
    if (x.size() + 1 != weights.size()) throw ShapeError("UtilityRegressor: feature dim mismatch");
    double y = weights.back();
    for (size_t i = 0; i < x.size(); ++i) y += weights[i] * x[i];
    return y;
  }
};

namespace detail {

// Gaussian elimination with partial pivoting; returns false on a tiny pivot.
inline bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b,
                         std::vector<double>& out) {
  const size_t n = a.size();
  for (size_t col = 0; col < n; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < n; ++r) {
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    }
    if (std::abs(a[pivot][col]) < 1e-10) return false;
    std::swap(a[pivot], a[col]);
    std::swap(b[pivot], b[col]);
    for (size_t r = col + 1; r < n; ++r) {
      const double f = a[r][col] / a[col][col];
      for (size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  out.assign(n, 0.0);
  for (size_t ri = n; ri-- > 0;) {
    double acc = b[ri];
    for (size_t c = ri + 1; c < n; ++c) acc -= a[ri][c] * out[c];
    out[ri] = acc / a[ri][ri];
  }
  return true;
}

}  // namespace detail

inline UtilityRegressor fit_utility_regressor(const std::vector<InfluenceVector>& rows,
                                              const std::vector<double>& utilities) {
  if (rows.empty() || rows.size() != utilities.size()) {
    throw ShapeError("fit_utility_regressor: rows/utilities mismatch");
  }
  const size_t dim = rows[0].size();
  if (rows.size() < dim + 1) {
    throw ContractError("fit_utility_regressor: need at least dim+1 rows");
  }
  const size_t n = dim + 1;  // slopes + bias
  auto build_normal = [&](double lambda) {
    std::vector<std::vector<double>> ata(n, std::vector<double>(n, 0.0));
    std::vector<double> aty(n, 0.0);
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != dim) throw ShapeError("fit_utility_regressor: ragged rows");
      std::vector<double> x(rows[r]);
      x.push_back(1.0);
      for (size_t i = 0; i < n; ++i) {
        aty[i] += x[i] * utilities[r];
        for (size_t j = 0; j < n; ++j) ata[i][j] += x[i] * x[j];
      }
    }
    for (size_t i = 0; i < n; ++i) ata[i][i] += lambda;
    return std::make_pair(ata, aty);
  };

  UtilityRegressor reg;
  auto [ata, aty] = build_normal(0.0);
  if (!detail::solve_linear(ata, aty, reg.weights)) {
    reg.ridge_used = true;
    auto [ata2, aty2] = build_normal(1e-3);
    if (!detail::solve_linear(ata2, aty2, reg.weights)) {
      throw NumericError("fit_utility_regressor: singular normal equations even with ridge");
    }
  }

  double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
  for (double u : utilities) mean += u;
  mean /= static_cast<double>(utilities.size());
  for (size_t r = 0; r < rows.size(); ++r) {
    const double e = reg.predict(rows[r]) - utilities[r];
    ss_res += e * e;
    ss_tot += (utilities[r] - mean) * (utilities[r] - mean);
  }
  reg.train_mse = ss_res / static_cast<double>(rows.size());
  reg.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return reg;
}

// ----------------------------- mix weights -----------------------------

struct MixWeights {
  std::vector<std::string> domains;
  std::vector<double> w;

  void validate(double floor = 0.0) const {
    if (domains.size() != w.size()) throw ShapeError("MixWeights: name/weight mismatch");
    double total = 0.0;
    for (double v : w) {
      if (v < floor - 1e-12) throw ContractError("MixWeights: weight below floor");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("MixWeights: weights must sum to 1");
  }
};

// Tempered softmax over utilities with a diversity floor: w ~ exp(y/T), then
// floored domains take exactly `floor` and the rest renormalize, repeated to a
// fixed point. Monotone in utilities and shift-invariant.
inline MixWeights derive_mix_weights(const std::vector<std::string>& domains,
                                     const std::vector<double>& utilities, double temperature,
                                     double floor) {
  if (domains.size() != utilities.size() || domains.empty()) {
    throw ShapeError("derive_mix_weights: domains/utilities mismatch");
  }
  if (!(temperature > 0.0)) throw ContractError("derive_mix_weights: temperature must be > 0");
  const size_t n = domains.size();
  if (floor < 0.0 || floor * static_cast<double>(n) >= 1.0) {
    throw ContractError("derive_mix_weights: floor * n_domains must be < 1");
  }
  double mx = utilities[0];
  for (double u : utilities) mx = std::max(mx, u);
  std::vector<double> p(n);
  double denom = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::exp((utilities[i] - mx) / temperature);
    denom += p[i];
  }
  for (auto& v : p) v /= denom;

  std::vector<bool> floored(n, false);
  std::vector<double> w(n, 0.0);
  for (;;) {
    double floored_mass = 0.0, active_p = 0.0;
    for (size_t i = 0; i < n; ++i) {
      if (floored[i]) {
        floored_mass += floor;
      } else {
        active_p += p[i];
      }
    }
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      if (floored[i]) {
        w[i] = floor;
        continue;
      }
      w[i] = (1.0 - floored_mass) * p[i] / active_p;
      if (w[i] < floor) {
        floored[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  MixWeights mix;
  mix.domains = domains;
  mix.w = std::move(w);
  mix.validate(floor);
  return mix;
}

// ----------------------------- sampling -----------------------------

// Draws whole documents domain-by-domain until the batch holds at least
// batch_tokens tokens. Deterministic given the rng state.
inline std::vector<std::pair<int32_t, std::vector<int32_t>>> sample_batch(
    const MixWeights& weights, const std::vector<DomainCorpus>& corpora, Rng& rng,
    int64_t batch_tokens) {
  weights.validate();
  if (weights.w.size() != corpora.size()) {
    throw ShapeError("sample_batch: weights/corpora mismatch");
  }
  for (size_t d = 0; d < corpora.size(); ++d) {
    if (weights.w[d] > 0.0 && corpora[d].documents.empty()) {
      throw ContractError("sample_batch: empty domain '" + corpora[d].domain +
                          "' has positive weight");
    }
  }
  std::vector<double> cdf(weights.w.size());
  double acc = 0.0;
  for (size_t i = 0; i < weights.w.size(); ++i) {
    acc += weights.w[i];
    cdf[i] = acc;
  }
  std::vector<std::pair<int32_t, std::vector<int32_t>>> batch;
  int64_t tokens = 0;
  while (tokens < batch_tokens) {
    const double u = rng.uniform() * acc;
    size_t d = 0;
    while (d + 1 < cdf.size() && u >= cdf[d]) ++d;
    const auto& docs = corpora[d].documents;
    const auto& doc = docs[rng.below(docs.size())];
    tokens += static_cast<int64_t>(doc.size());
    batch.emplace_back(static_cast<int32_t>(d), doc);
  }
  return batch;
}

// ----------------------------- leave-one-out harness -----------------------------

struct LooRow {
  std::string held_out;
  std::map<std::string, double> scores;
};

template <typename TrainFn, typename EvalFn>
std::vector<LooRow> loo_ablation(const std::vector<DomainCorpus>& domains, TrainFn&& train_fn,
                                 EvalFn&& eval_fn) {
  if (domains.size() < 2) throw ContractError("loo_ablation: need at least 2 domains");
  std::vector<LooRow> table;
  for (size_t held = 0; held < domains.size(); ++held) {
    std::vector<DomainCorpus> kept;
    for (size_t d = 0; d < domains.size(); ++d) {
      if (d != held) kept.push_back(domains[d]);
    }
    LooRow row;
    row.held_out = domains[held].domain;
    try {
      auto model = train_fn(kept);
      row.scores = eval_fn(model);
    } catch (const std::exception& e) {
      throw ContractError("loo_ablation: training without domain '" + domains[held].domain +
                          "' failed: " + e.what());
    }
    table.push_back(std::move(row));
  }
  return table;
}

// ----------------------------- report -----------------------------

inline nlohmann::json mix_report_json(const MixWeights& mix, const std::vector<double>& utilities) {
  nlohmann::json rows = nlohmann::json::array();
  for (size_t i = 0; i < mix.domains.size(); ++i) {
    rows.push_back({{"domain", mix.domains[i]},
                    {"utility", utilities.at(i)},
                    {"weight", mix.w[i]}});
  }
  return rows;
}

}  // namespace edgellm

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "edgellm/datamix.hpp"
#include "edgellm/qat.hpp"
#include "edgellm/trainer.hpp"

namespace edgellm {

struct MergeWeights {
  std::vector<double> w;

  void validate() const {
    double total = 0.0;
    for (double v : w) {
      if (v < 0.0) throw ContractError("MergeWeights: negative weight");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ContractError("MergeWeights: weights must sum to 1");
  }
};

// A briefly-trained per-domain branch of a shared base checkpoint, with its
// relative parameter drift tracked against the stability requirement that
// parallel updates stay small.
struct SpecialistBranch {
  std::string id;
  std::string domain;
  Checkpoint trained;
  int64_t steps = 0;
  double peak_lr = 0.0;
  double drift = 0.0;
  bool drift_warning = false;
};

inline double relative_drift(const Checkpoint& a, const Checkpoint& b) {
  double num = 0.0, den = 0.0;
  for (const auto& [name, t] : a.tensors) {
    const auto& u = b.tensors.at(name);
    for (size_t i = 0; i < t->data.size(); ++i) {
      const double d = static_cast<double>(t->data[i]) - static_cast<double>(u->data[i]);
      num += d * d;
      den += static_cast<double>(t->data[i]) * static_cast<double>(t->data[i]);
    }
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

// Trains one specialist from the base at a small, linearly-annealed learning
// rate. Drift above the bound is recorded as a warning, not an error.
inline SpecialistBranch branch_train(const Checkpoint& base, const DomainCorpus& corpus,
                                     int64_t steps, double peak_lr, int64_t ctx_len,
                                     uint64_t seed, double drift_bound = 0.05) {
  SpecialistBranch branch;
  branch.id = corpus.domain + "_branch";
  branch.domain = corpus.domain;
  branch.trained = clone_checkpoint(base);
  branch.steps = steps;
  branch.peak_lr = peak_lr;

  PhasePlan plan;
  plan.phase_id = 3;
  plan.loss = LossMode::CE;
  plan.ctx_len = ctx_len;
  plan.steps = steps;
  plan.packs_per_step = 2;
  plan.seed = seed;
  plan.adam.weight_decay = 0.0f;
  plan.lr_override = [peak_lr, steps](int64_t step) {
    return steps == 0 ? 0.0 : peak_lr * (1.0 - static_cast<double>(step) / static_cast<double>(steps));
  };
  auto provider = [&corpus, ctx_len](int64_t, Rng& rng) {
    std::vector<std::vector<int32_t>> docs;
    for (int i = 0; i < 4; ++i) {
      docs.push_back(corpus.documents[rng.below(corpus.documents.size())]);
    }
    return pack_documents(docs, ctx_len);
  };
  train_phase(branch.trained, plan, provider);

  branch.drift = relative_drift(branch.trained, base);
  branch.drift_warning = branch.drift > drift_bound;
  return branch;
}

// Convex combination of checkpoints: every parameter tensor becomes
// sum_b w_b * theta_b. Architectures and tensor tables must match exactly.
inline Checkpoint merge_checkpoints(const std::vector<SpecialistBranch>& branches,
                                    const MergeWeights& weights) {
  if (branches.empty()) throw ContractError("merge_checkpoints: no branches");
  if (branches.size() != weights.w.size()) {
    throw ContractError("merge_checkpoints: weight count does not match branch count");
  }
  weights.validate();
  const auto& first = branches[0].trained;
  const auto ref_config = config_to_json(first.config);
  for (const auto& b : branches) {
    if (config_to_json(b.trained.config) != ref_config) {
      throw ContractError("merge_checkpoints: branch '" + b.id + "' has a different architecture");
    }
  }

  Checkpoint merged;
  merged.config = first.config;
  merged.phase = "phase3_merged";
  merged.step = first.step;
  for (const auto& [name, t] : first.tensors) {
    auto out = tensor(t->shape);
    out->name = name;
    for (size_t b = 0; b < branches.size(); ++b) {
      auto it = branches[b].trained.tensors.find(name);
      if (it == branches[b].trained.tensors.end() || it->second->shape != t->shape) {
        throw ContractError("merge_checkpoints: tensor '" + name + "' mismatch in branch '" +
                            branches[b].id + "'");
      }
      const float wb = static_cast<float>(weights.w[b]);
      for (size_t i = 0; i < out->data.size(); ++i) out->data[i] += wb * it->second->data[i];
    }
    merged.tensors.emplace(name, std::move(out));
  }

  nlohmann::json meta;
  meta["branches"] = nlohmann::json::array();
  for (size_t b = 0; b < branches.size(); ++b) {
    meta["branches"].push_back({{"id", branches[b].id},
                                {"domain", branches[b].domain},
                                {"weight", weights.w[b]},
                                {"drift", branches[b].drift}});
  }
  merged.notes = meta.dump();
  return merged;
}

enum class SelectStrategy { Uniform, Grid, GreedyCoordinate };

namespace detail {

inline void enumerate_simplex(int64_t n, int64_t ticks, std::vector<int64_t>& cur,
                              const std::function<void(const std::vector<int64_t>&)>& emit) {
  if (cur.size() + 1 == static_cast<size_t>(n)) {
    int64_t used = 0;
    for (int64_t v : cur) used += v;
    cur.push_back(ticks - used);
    emit(cur);
    cur.pop_back();
    return;
  }
  int64_t used = 0;
  for (int64_t v : cur) used += v;
  for (int64_t v = 0; v <= ticks - used; ++v) {
    cur.push_back(v);
    enumerate_simplex(n, ticks, cur, emit);
    cur.pop_back();
  }
}

inline double dist_to_uniform(const std::vector<double>& w) {
  const double u = 1.0 / static_cast<double>(w.size());
  double acc = 0.0;
  for (double v : w) acc += (v - u) * (v - u);
  return acc;
}

}  // namespace detail

// Picks merge weights maximizing the scalar eval score. Grid search walks the
// simplex at the given resolution; ties break toward the uniform point.
inline MergeWeights select_weights(const std::vector<SpecialistBranch>& branches,
                                   const std::function<double(const Checkpoint&)>& eval_fn,
                                   SelectStrategy strategy, double resolution = 0.25) {
  if (branches.empty()) throw ContractError("select_weights: no branches");
  const size_t n = branches.size();
  MergeWeights uniform;
  uniform.w.assign(n, 1.0 / static_cast<double>(n));
  if (n == 1) return MergeWeights{{1.0}};
  if (strategy == SelectStrategy::Uniform) return uniform;

  if (!(resolution > 0.0) || resolution > 1.0) {
    throw ContractError("select_weights: resolution must be in (0, 1]");
  }
  const int64_t ticks = static_cast<int64_t>(std::llround(1.0 / resolution));

  MergeWeights best = uniform;
  double best_score = -std::numeric_limits<double>::infinity();
  double best_dist = 0.0;
  auto consider = [&](const std::vector<double>& w) {
    MergeWeights cand{w};
    const double score = eval_fn(merge_checkpoints(branches, cand));
    const double dist = detail::dist_to_uniform(w);
    if (score > best_score + 1e-12 ||
        (std::abs(score - best_score) <= 1e-12 && dist < best_dist - 1e-15)) {
      best = cand;
      best_score = score;
      best_dist = dist;
    }
  };

  if (strategy == SelectStrategy::Grid) {
    best_score = -std::numeric_limits<double>::infinity();
    std::vector<int64_t> cur;
    bool first = true;
    detail::enumerate_simplex(static_cast<int64_t>(n), ticks, cur,
                              [&](const std::vector<int64_t>& point) {
                                std::vector<double> w(n);
                                for (size_t i = 0; i < n; ++i) {
                                  w[i] = static_cast<double>(point[i]) / static_cast<double>(ticks);
                                }
                                if (first) {
                                  best_dist = std::numeric_limits<double>::infinity();
                                  first = false;
                                }
                                consider(w);
                              });
    return best;
  }

  // greedy coordinate ascent from uniform
  best_dist = 0.0;
  best_score = eval_fn(merge_checkpoints(branches, uniform));
  const double step = resolution;
  bool improved = true;
  while (improved) {
    improved = false;
    for (size_t from = 0; from < n; ++from) {
      for (size_t to = 0; to < n; ++to) {
        if (from == to || best.w[from] < step - 1e-12) continue;
        MergeWeights cand = best;
        cand.w[from] -= step;
        cand.w[to] += step;
        const double score = eval_fn(merge_checkpoints(branches, cand));
        if (score > best_score + 1e-12) {
          best = cand;
          best_score = score;
          improved = true;
        }
      }
    }
  }
  return best;
}

inline nlohmann::json merge_manifest(const std::vector<SpecialistBranch>& branches,
                                     const MergeWeights& weights,
                                     const std::map<std::string, double>& eval_table) {
  nlohmann::json j;
  j["branches"] = nlohmann::json::array();
  for (size_t b = 0; b < branches.size(); ++b) {
    j["branches"].push_back({{"id", branches[b].id},
                             {"domain", branches[b].domain},
                             {"steps", branches[b].steps},
                             {"peak_lr", branches[b].peak_lr},
                             {"drift", branches[b].drift},
                             {"drift_warning", branches[b].drift_warning},
                             {"weight", weights.w[b]}});
  }
  j["eval"] = eval_table;
  return j;
}

}  // namespace edgellm

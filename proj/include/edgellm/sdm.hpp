#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "edgellm/datamix.hpp"

namespace edgellm {

// Offline data-mix simulation: one streaming pass over the corpus grows a
// per-domain statistical LM while scoring each sample's influence vector;
// per-domain utility labels come from held-out probe perplexity; an affine
// regressor turns influence into predicted utility; tempered softmax with a
// diversity floor turns utilities into static sampling weights.
struct SdmConfig {
  int64_t slm_order = 2;
  double smoothing_k = 0.5;
  double temperature = 1.0;
  double floor = 0.01;
  size_t probe_docs = 8;             // held out per domain
  size_t max_rows_per_domain = 64;   // influence rows kept per domain
  int64_t vocab = 0;                 // 0 -> derive from corpus max token + 1
};

struct SdmResult {
  std::vector<std::string> domains;
  std::vector<InfluenceVector> rows;  // z-scored influence features
  std::vector<int32_t> row_domain;
  std::vector<double> probe_utilities;  // per-domain regression labels
  UtilityRegressor regressor;
  std::vector<double> utilities;  // predicted utility per domain
  MixWeights weights;
};

inline SdmResult sdm_simulate(const std::vector<DomainCorpus>& corpora,
                              const std::vector<std::vector<int32_t>>& downstream_probe,
                              const SdmConfig& cfg = {}) {
  if (corpora.size() < 2) throw ContractError("sdm_simulate: need at least 2 domains");
  if (downstream_probe.empty()) throw ContractError("sdm_simulate: empty downstream probe");

  int64_t vocab = cfg.vocab;
  if (vocab == 0) {
    for (const auto& c : corpora) {
      for (const auto& doc : c.documents) {
        for (int32_t t : doc) vocab = std::max<int64_t>(vocab, t + 1);
      }
    }
    for (const auto& doc : downstream_probe) {
      for (int32_t t : doc) vocab = std::max<int64_t>(vocab, t + 1);
    }
  }

  const size_t n_domains = corpora.size();
  SdmResult res;
  std::vector<std::vector<std::vector<int32_t>>> probes(n_domains);
  std::vector<std::vector<std::vector<int32_t>>> streams(n_domains);
  for (size_t d = 0; d < n_domains; ++d) {
    res.domains.push_back(corpora[d].domain);
    const auto& docs = corpora[d].documents;
    if (docs.size() <= cfg.probe_docs) {
      throw ContractError("sdm_simulate: domain '" + corpora[d].domain +
                          "' too small for probe split");
    }
    probes[d].assign(docs.begin(), docs.begin() + static_cast<int64_t>(cfg.probe_docs));
    streams[d].assign(docs.begin() + static_cast<int64_t>(cfg.probe_docs), docs.end());
  }

  // single pass: round-robin over domains, score then commit each sample
  std::vector<SLM> slms(n_domains, SLM(cfg.slm_order, cfg.smoothing_k, vocab));
  size_t longest = 0;
  for (const auto& s : streams) longest = std::max(longest, s.size());
  std::vector<size_t> rows_taken(n_domains, 0);
  for (size_t i = 0; i < longest; ++i) {
    for (size_t d = 0; d < n_domains; ++d) {
      if (i >= streams[d].size()) continue;
      const auto& doc = streams[d][i];
      if (rows_taken[d] < cfg.max_rows_per_domain) {
        res.rows.push_back(influence(doc, slms, probes));
        res.row_domain.push_back(static_cast<int32_t>(d));
        ++rows_taken[d];
      }
      slms[d].add_document(doc);
    }
  }

  // per-domain utility labels: held-out downstream perplexity of each domain's
  // final statistical LM (negated so higher is better)
  res.probe_utilities.resize(n_domains);
  for (size_t d = 0; d < n_domains; ++d) {
    res.probe_utilities[d] = -slms[d].cross_entropy(downstream_probe);
  }

  // z-score features and labels
  const size_t dim = n_domains;
  std::vector<double> mean(dim, 0.0), var(dim, 0.0);
  for (const auto& row : res.rows) {
    for (size_t j = 0; j < dim; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(res.rows.size());
  for (const auto& row : res.rows) {
    for (size_t j = 0; j < dim; ++j) var[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
  }
  for (auto& v : var) v = std::sqrt(v / static_cast<double>(res.rows.size())) + 1e-12;
  for (auto& row : res.rows) {
    for (size_t j = 0; j < dim; ++j) row[j] = (row[j] - mean[j]) / var[j];
  }

  std::vector<double> labels;
  labels.reserve(res.rows.size());
  for (int32_t d : res.row_domain) labels.push_back(res.probe_utilities[static_cast<size_t>(d)]);
  res.regressor = fit_utility_regressor(res.rows, labels);

  res.utilities.assign(n_domains, 0.0);
  std::vector<int64_t> counts(n_domains, 0);
  for (size_t r = 0; r < res.rows.size(); ++r) {
    res.utilities[static_cast<size_t>(res.row_domain[r])] += res.regressor.predict(res.rows[r]);
    ++counts[static_cast<size_t>(res.row_domain[r])];
  }
  for (size_t d = 0; d < n_domains; ++d) {
    res.utilities[d] /= static_cast<double>(std::max<int64_t>(1, counts[d]));
  }

  res.weights = derive_mix_weights(res.domains, res.utilities, cfg.temperature, cfg.floor);
  return res;
}

}  // namespace edgellm

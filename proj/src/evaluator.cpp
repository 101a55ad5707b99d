/*
 * Copyright (c) 2026 The Ember Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "ember/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "ember/miner.hpp"

namespace ember::evaluator {

namespace {

using nlohmann::json;

// Average ranks (1-based), ties share the mean of their positions.
std::vector<double> average_ranks(std::span<const double> xs) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return xs[a] < xs[b];
    });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) {
            ++j;
        }
        const double shared =
            (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) {
            ranks[order[t]] = shared;
        }
        i = j + 1;
    }
    return ranks;
}

double recall_with_embeddings(const std::vector<DenseVector>& query_embs,
                              const std::vector<std::size_t>& gold_ids,
                              const std::vector<DenseVector>& corpus_embs,
                              const data::Corpus& corpus, std::size_t k) {
    std::size_t hits = 0;
    std::vector<std::pair<double, std::size_t>> scored(corpus.size());
    for (std::size_t q = 0; q < query_embs.size(); ++q) {
        if (!corpus.index_of_id.contains(gold_ids[q])) {
            throw GoldMissing("recall_at_k: gold id " +
                              std::to_string(gold_ids[q]) +
                              " not in corpus");
        }
        for (std::size_t c = 0; c < corpus.size(); ++c) {
            scored[c] = {cosine_sim(query_embs[q], corpus_embs[c]),
                         corpus.ids[c]};
        }
        const std::size_t top = std::min(k, scored.size());
        std::partial_sort(scored.begin(), scored.begin() + top, scored.end(),
                          [](const auto& a, const auto& b) {
                              if (a.first != b.first) {
                                  return a.first > b.first;
                              }
                              return a.second < b.second;
                          });
        for (std::size_t r = 0; r < top; ++r) {
            if (scored[r].second == gold_ids[q]) {
                ++hits;
                break;
            }
        }
    }
    return static_cast<double>(hits) /
           static_cast<double>(query_embs.size());
}

std::vector<DenseVector> truncate_embeddings(
    const std::vector<DenseVector>& embs, std::size_t d) {
    std::vector<DenseVector> out;
    out.reserve(embs.size());
    for (const auto& e : embs) {
        out.push_back(vector_prefix(e, d));
    }
    return out;
}

}  // namespace

std::string results_to_json_text(const std::vector<EvalResult>& results) {
    json arr = json::array();
    for (const auto& r : results) {
        json item{{"metric", r.metric}, {"value", r.value}};
        if (r.k) {
            item["k"] = *r.k;
        }
        if (r.dim) {
            item["dim"] = *r.dim;
        }
        arr.push_back(item);
    }
    return arr.dump(2);
}

double recall_at_k(const std::vector<std::string>& queries,
                   const std::vector<std::size_t>& gold_ids,
                   const data::Corpus& corpus, const EncoderParams& params,
                   std::size_t k) {
    if (k == 0) {
        throw EmptyInput("recall_at_k: k must be positive");
    }
    if (queries.size() != gold_ids.size() || queries.empty()) {
        throw LengthMismatch("recall_at_k: queries and gold ids disagree");
    }
    std::vector<DenseVector> query_embs;
    query_embs.reserve(queries.size());
    for (const auto& q : queries) {
        query_embs.push_back(encode_text(params, q).vector);
    }
    const auto corpus_embs = miner::encode_corpus(params, corpus);
    return recall_with_embeddings(query_embs, gold_ids, corpus_embs, corpus,
                                  k);
}

double recall_at_k_dim(const std::vector<std::string>& queries,
                       const std::vector<std::size_t>& gold_ids,
                       const data::Corpus& corpus, const EncoderParams& params,
                       std::size_t k, std::size_t d) {
    if (k == 0) {
        throw EmptyInput("recall_at_k_dim: k must be positive");
    }
    if (queries.size() != gold_ids.size() || queries.empty()) {
        throw LengthMismatch("recall_at_k_dim: queries and gold ids disagree");
    }
    std::vector<DenseVector> query_embs;
    query_embs.reserve(queries.size());
    for (const auto& q : queries) {
        query_embs.push_back(
            vector_prefix(encode_text(params, q).vector, d));
    }
    const auto corpus_embs =
        truncate_embeddings(miner::encode_corpus(params, corpus), d);
    return recall_with_embeddings(query_embs, gold_ids, corpus_embs, corpus,
                                  k);
}

double spearman(std::span<const double> predicted,
                std::span<const double> labels) {
    if (predicted.size() != labels.size()) {
        throw LengthMismatch("spearman: lengths disagree");
    }
    if (predicted.size() < 2) {
        throw LengthMismatch("spearman: need at least two points");
    }
    const auto ra = average_ranks(predicted);
    const auto rb = average_ranks(labels);
    const std::size_t n = ra.size();
    const double mean_rank = (static_cast<double>(n) + 1.0) / 2.0;
    double cov = 0.0;
    double var_a = 0.0;
    double var_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = ra[i] - mean_rank;
        const double db = rb[i] - mean_rank;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if (var_a == 0.0 || var_b == 0.0) {
        throw DegenerateVariance("spearman: an argument is constant");
    }
    return cov / std::sqrt(var_a * var_b);
}

std::vector<EvalResult> mrl_sweep(const std::vector<std::string>& queries,
                                  const std::vector<std::size_t>& gold_ids,
                                  const data::Corpus& corpus,
                                  const EncoderParams& params,
                                  std::span<const std::size_t> mrl_dims,
                                  std::size_t k) {
    std::vector<EvalResult> results;
    for (std::size_t d : mrl_dims) {
        EvalResult r;
        r.metric = "recall_at_k";
        r.value = recall_at_k_dim(queries, gold_ids, corpus, params, k, d);
        r.k = k;
        r.dim = d;
        results.push_back(std::move(r));
    }
    return results;
}

std::vector<double> predict_sts_cosines(
    const std::vector<data::StsRecord>& records, const EncoderParams& params) {
    std::vector<double> cosines;
    cosines.reserve(records.size());
    for (const auto& r : records) {
        cosines.push_back(cosine_sim(encode_text(params, r.text_a).vector,
                                     encode_text(params, r.text_b).vector));
    }
    return cosines;
}

}  // namespace ember::evaluator

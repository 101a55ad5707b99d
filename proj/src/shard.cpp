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

#include "ember/shard.hpp"

#include <algorithm>
#include <string>

namespace ember::shard {

std::vector<WorkerShard> partition_negatives(
    const std::vector<std::vector<DenseVector>>& per_query_negatives,
    std::size_t n_workers) {
    if (n_workers == 0) {
        throw IndivisibleCount("partition_negatives: zero workers");
    }
    std::vector<WorkerShard> shards(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        shards[w].worker_id = w;
        shards[w].negatives.resize(per_query_negatives.size());
    }
    for (std::size_t q = 0; q < per_query_negatives.size(); ++q) {
        const auto& negs = per_query_negatives[q];
        if (negs.size() % n_workers != 0) {
            throw IndivisibleCount(
                "partition_negatives: " + std::to_string(negs.size()) +
                " negatives not divisible by " + std::to_string(n_workers) +
                " workers");
        }
        for (std::size_t j = 0; j < negs.size(); ++j) {
            shards[j % n_workers].negatives[q].push_back(negs[j]);
        }
    }
    return shards;
}

PartialDenominator worker_partial(const WorkerShard& shard,
                                  const std::vector<DenseVector>& queries,
                                  double tau) {
    if (tau <= 0.0) {
        throw InvalidTemperature("worker_partial: tau must be positive");
    }
    if (shard.negatives.size() != queries.size()) {
        throw ShardMismatch("worker_partial: query count disagrees");
    }
    PartialDenominator partial;
    partial.worker_id = shard.worker_id;
    partial.per_query_logsumexp.reserve(queries.size());
    std::vector<double> logits;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        const auto& negs = shard.negatives[q];
        if (negs.empty()) {
            throw EmptyNegatives("worker_partial: worker " +
                                 std::to_string(shard.worker_id) +
                                 " holds no negatives for query " +
                                 std::to_string(q));
        }
        logits.clear();
        for (const auto& neg : negs) {
            logits.push_back(cosine_sim(queries[q], neg) / tau);
        }
        partial.per_query_logsumexp.push_back(logsumexp(logits));
    }
    return partial;
}

double aggregate(std::vector<PartialDenominator> partials,
                 std::span<const double> pos_logits, std::size_t normalizer) {
    if (partials.empty()) {
        throw MissingWorker("aggregate: no partials");
    }
    std::sort(partials.begin(), partials.end(),
              [](const PartialDenominator& a, const PartialDenominator& b) {
                  return a.worker_id < b.worker_id;
              });
    for (std::size_t w = 0; w < partials.size(); ++w) {
        if (partials[w].worker_id != w) {
            throw MissingWorker("aggregate: worker " + std::to_string(w) +
                                " missing from partials");
        }
        if (partials[w].per_query_logsumexp.size() != pos_logits.size()) {
            throw DimensionMismatch(
                "aggregate: partial length disagrees with pos_logits");
        }
    }
    if (normalizer == 0) {
        throw DimensionMismatch("aggregate: zero normalizer");
    }
    double loss = 0.0;
    std::vector<double> merged(partials.size() + 1);
    for (std::size_t q = 0; q < pos_logits.size(); ++q) {
        merged[0] = pos_logits[q];
        for (std::size_t w = 0; w < partials.size(); ++w) {
            merged[w + 1] = partials[w].per_query_logsumexp[q];
        }
        const double total = logsumexp(merged);
        loss += total - pos_logits[q];
    }
    return loss / static_cast<double>(normalizer);
}

double monolithic_retrieval_loss(
    const std::vector<DenseVector>& queries,
    const std::vector<DenseVector>& positives,
    const std::vector<std::vector<DenseVector>>& per_query_negatives,
    double tau, std::size_t normalizer) {
    if (tau <= 0.0) {
        throw InvalidTemperature("monolithic_retrieval_loss: tau positive");
    }
    if (queries.size() != positives.size() ||
        queries.size() != per_query_negatives.size()) {
        throw DimensionMismatch("monolithic_retrieval_loss: batch disagrees");
    }
    if (normalizer == 0) {
        throw DimensionMismatch("monolithic_retrieval_loss: zero normalizer");
    }
    double loss = 0.0;
    std::vector<double> logits;
    for (std::size_t q = 0; q < queries.size(); ++q) {
        logits.clear();
        const double pos = cosine_sim(queries[q], positives[q]) / tau;
        logits.push_back(pos);
        for (const auto& neg : per_query_negatives[q]) {
            logits.push_back(cosine_sim(queries[q], neg) / tau);
        }
        loss += logsumexp(logits) - pos;
    }
    return loss / static_cast<double>(normalizer);
}

}  // namespace ember::shard

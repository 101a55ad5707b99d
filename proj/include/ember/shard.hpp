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
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ember/numeric.hpp"

namespace ember::shard {

/// One simulated worker's slice of the negative pool. All workers share the
/// same queries and positives; each holds a distinct per-query negative set.
struct WorkerShard {
    std::size_t worker_id = 0;
    // negatives[q][j] is the j-th negative this worker holds for query q.
    std::vector<std::vector<DenseVector>> negatives;
};

struct PartialDenominator {
    std::size_t worker_id = 0;
    std::vector<double> per_query_logsumexp;
};

/// Round-robin assignment of per-query negatives onto n_workers shards.
/// Negative j of query q lands on worker j % n_workers. Throws
/// IndivisibleCount unless every query's negative count divides evenly.
std::vector<WorkerShard> partition_negatives(
    const std::vector<std::vector<DenseVector>>& per_query_negatives,
    std::size_t n_workers);

/// Per query q: logsumexp over j of cos(query_q, negative_qj) / tau.
PartialDenominator worker_partial(const WorkerShard& shard,
                                  const std::vector<DenseVector>& queries,
                                  double tau);

/// Merges per-worker partials with the positive logits into the sharded
/// retrieval loss value. Partials are sorted by worker_id before merging,
/// so the result is independent of arrival order. `normalizer` is the 1/n
/// divisor of the outer mean (the query count under the default reading).
double aggregate(std::vector<PartialDenominator> partials,
                 std::span<const double> pos_logits, std::size_t normalizer);

/// Monolithic oracle: the same loss evaluated in one flat pass per query
/// (single logsumexp over the positive logit and every negative logit),
/// with no shard structure. Used to certify the sharded route.
double monolithic_retrieval_loss(
    const std::vector<DenseVector>& queries,
    const std::vector<DenseVector>& positives,
    const std::vector<std::vector<DenseVector>>& per_query_negatives,
    double tau, std::size_t normalizer);

}  // namespace ember::shard

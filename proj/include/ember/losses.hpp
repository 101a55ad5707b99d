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
#include "ember/shard.hpp"

namespace ember::losses {

/// Index i pairs queries[i] with positives[i]; the other positives in the
/// batch act as that query's negatives.
struct PairBatch {
    std::vector<DenseVector> queries;
    std::vector<DenseVector> positives;
};

struct StsPair {
    DenseVector a;
    DenseVector b;
    double label = 0.0;
};

struct StsBatch {
    std::vector<StsPair> pairs;
};

/// Shared queries/positives plus per-worker negative shards.
struct ShardedRetrievalBatch {
    std::vector<DenseVector> queries;
    std::vector<DenseVector> positives;
    std::vector<shard::WorkerShard> shards;
};

struct PairLossOutput {
    double value = 0.0;
    std::vector<DenseVector> grad_queries;
    std::vector<DenseVector> grad_positives;
};

struct StsLossOutput {
    double value = 0.0;
    std::vector<DenseVector> grad_a;
    std::vector<DenseVector> grad_b;
};

struct ShardedLossOutput {
    double value = 0.0;
    std::vector<DenseVector> grad_queries;
    std::vector<DenseVector> grad_positives;
    // grad_negatives[shard][query][j] mirrors the input layout.
    std::vector<std::vector<std::vector<DenseVector>>> grad_negatives;
};

struct CbbLossOutput {
    double value = 0.0;        // retrieval + beta * sts
    double retrieval_value = 0.0;
    double sts_value = 0.0;    // unweighted CoSENT value
    ShardedLossOutput retrieval;  // gradients of the retrieval term
    StsLossOutput sts;            // gradients already scaled by beta
};

/// Which count divides the sharded retrieval loss. The denominator symbol in
/// the combined loss is ambiguous between the query count and the per-worker
/// negative count; both readings are available, queries is the default.
enum class CbbNorm { queries, negatives };

/// In-batch InfoNCE, averaged over queries, logits cos/tau, stable
/// denominator via logsumexp. Analytic gradients for every input embedding.
PairLossOutput info_nce_in_batch(const PairBatch& batch, double tau);

/// Ranking loss over pairs-of-pairs: log(1 + sum over label(i) > label(j) of
/// exp((cos_j - cos_i)/tau)). Zero exactly when no ordered pair violates.
StsLossOutput cosent(const StsBatch& batch, double tau);

/// Score-space CoSENT, exposed for shift/relabel invariance tests.
double cosent_value_from_scores(std::span<const double> cosines,
                                std::span<const double> labels, double tau);

/// Sharded retrieval term: per-worker partial denominators merged by the
/// shard module. The denominator holds the positive plus every worker's
/// explicit negatives; other in-batch positives are not used.
ShardedLossOutput cbb_retrieval_term(const ShardedRetrievalBatch& batch,
                                     double tau,
                                     CbbNorm norm = CbbNorm::queries);

/// retrieval term + beta * CoSENT, gradients weighted to match.
CbbLossOutput cbb_total(const ShardedRetrievalBatch& retrieval,
                        const StsBatch& sts, double tau, double beta,
                        CbbNorm norm = CbbNorm::queries);

}  // namespace ember::losses

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

#include "ember/losses.hpp"

#include <cmath>
#include <string>

#include "ember/kernels.hpp"

namespace ember::losses {

namespace {

void require_tau(double tau, const char* where) {
    if (tau <= 0.0) {
        throw InvalidTemperature(std::string(where) +
                                 ": tau must be positive");
    }
}

std::vector<DenseVector> zero_grads(std::size_t count, std::size_t dim) {
    return std::vector<DenseVector>(count, DenseVector(dim));
}

}  // namespace

PairLossOutput info_nce_in_batch(const PairBatch& batch, double tau) {
    require_tau(tau, "info_nce_in_batch");
    const std::size_t m = batch.queries.size();
    if (m == 0 || batch.positives.size() != m) {
        throw DimensionMismatch("info_nce_in_batch: batch sides disagree");
    }
    const std::size_t dim = batch.queries[0].dim();

    // cos[i][j] between query i and positive j; row i's diagonal term is
    // the positive, the rest are the in-batch negatives.
    DenseMatrix cos(m, m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            cos.at(i, j) = cosine_sim(batch.queries[i], batch.positives[j]);
        }
    }

    PairLossOutput out;
    out.grad_queries = zero_grads(m, dim);
    out.grad_positives = zero_grads(m, dim);

    std::vector<double> logits(m);
    const double inv_m = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            logits[j] = cos.at(i, j) / tau;
        }
        const double lse = logsumexp(logits);
        out.value += inv_m * (lse - logits[i]);
        for (std::size_t j = 0; j < m; ++j) {
            const double softmax = std::exp(logits[j] - lse);
            const double up =
                inv_m * (softmax - (i == j ? 1.0 : 0.0)) / tau;
            cosine_sim_backward(batch.queries[i], batch.positives[j], up,
                                out.grad_queries[i], out.grad_positives[j]);
        }
    }
    return out;
}

double cosent_value_from_scores(std::span<const double> cosines,
                                std::span<const double> labels, double tau) {
    require_tau(tau, "cosent");
    if (cosines.size() != labels.size()) {
        throw DimensionMismatch("cosent: scores and labels disagree");
    }
    // log(1 + sum exp(t)) computed as logsumexp over {0} + terms.
    std::vector<double> terms{0.0};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[i] > labels[j]) {
                terms.push_back((cosines[j] - cosines[i]) / tau);
            }
        }
    }
    if (terms.size() == 1) {
        return 0.0;
    }
    return logsumexp(terms);
}

StsLossOutput cosent(const StsBatch& batch, double tau) {
    require_tau(tau, "cosent");
    const std::size_t p = batch.pairs.size();
    if (p == 0) {
        throw DimensionMismatch("cosent: empty batch");
    }
    const std::size_t dim = batch.pairs[0].a.dim();

    std::vector<double> cosines(p);
    std::vector<double> labels(p);
    for (std::size_t i = 0; i < p; ++i) {
        cosines[i] = cosine_sim(batch.pairs[i].a, batch.pairs[i].b);
        labels[i] = batch.pairs[i].label;
    }

    StsLossOutput out;
    out.grad_a = zero_grads(p, dim);
    out.grad_b = zero_grads(p, dim);
    out.value = cosent_value_from_scores(cosines, labels, tau);
    if (out.value == 0.0) {
        return out;
    }

    // d value / d cosine_k, accumulated over every violating ordered pair.
    std::vector<double> grad_cos(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            if (labels[i] > labels[j]) {
                const double t = (cosines[j] - cosines[i]) / tau;
                const double w = std::exp(t - out.value);
                grad_cos[j] += w / tau;
                grad_cos[i] -= w / tau;
            }
        }
    }
    for (std::size_t k = 0; k < p; ++k) {
        if (grad_cos[k] != 0.0) {
            cosine_sim_backward(batch.pairs[k].a, batch.pairs[k].b,
                                grad_cos[k], out.grad_a[k], out.grad_b[k]);
        }
    }
    return out;
}

ShardedLossOutput cbb_retrieval_term(const ShardedRetrievalBatch& batch,
                                     double tau, CbbNorm norm) {
    require_tau(tau, "cbb_retrieval_term");
    const std::size_t n_q = batch.queries.size();
    if (n_q == 0 || batch.positives.size() != n_q) {
        throw DimensionMismatch("cbb_retrieval_term: batch sides disagree");
    }
    if (batch.shards.empty()) {
        throw ShardMismatch("cbb_retrieval_term: no shards");
    }
    const std::size_t n_workers = batch.shards.size();
    const std::size_t per_worker = batch.shards[0].negatives.empty()
                                       ? 0
                                       : batch.shards[0].negatives[0].size();
    for (std::size_t w = 0; w < n_workers; ++w) {
        const auto& s = batch.shards[w];
        if (s.negatives.size() != n_q) {
            throw ShardMismatch("cbb_retrieval_term: shard " +
                                std::to_string(s.worker_id) +
                                " query count disagrees");
        }
        for (const auto& negs : s.negatives) {
            if (negs.size() != per_worker || negs.empty()) {
                throw ShardMismatch(
                    "cbb_retrieval_term: unequal negative counts");
            }
        }
    }
    const std::size_t normalizer =
        norm == CbbNorm::queries ? n_q : per_worker;

    // Positive logits plus per-worker partial denominators, merged by the
    // shard module exactly as a cross-device reduction would be.
    std::vector<double> pos_logits(n_q);
    for (std::size_t q = 0; q < n_q; ++q) {
        pos_logits[q] = cosine_sim(batch.queries[q], batch.positives[q]) / tau;
    }
    std::vector<shard::PartialDenominator> partials;
    partials.reserve(n_workers);
    for (const auto& s : batch.shards) {
        partials.push_back(shard::worker_partial(s, batch.queries, tau));
    }

    ShardedLossOutput out;
    const std::size_t dim = batch.queries[0].dim();
    out.value = shard::aggregate(partials, pos_logits, normalizer);
    out.grad_queries = zero_grads(n_q, dim);
    out.grad_positives = zero_grads(n_q, dim);
    out.grad_negatives.resize(n_workers);
    for (std::size_t w = 0; w < n_workers; ++w) {
        out.grad_negatives[w].resize(n_q);
        for (std::size_t q = 0; q < n_q; ++q) {
            out.grad_negatives[w][q] = zero_grads(per_worker, dim);
        }
    }

    // Softmax weights per query over {positive} + all negatives. Each
    // worker contributes gradients for its own negatives; query and
    // positive gradients sum across workers.
    const double scale = 1.0 / (static_cast<double>(normalizer) * tau);
    std::vector<double> merged(n_workers + 1);
    for (std::size_t q = 0; q < n_q; ++q) {
        merged[0] = pos_logits[q];
        for (std::size_t w = 0; w < n_workers; ++w) {
            merged[w + 1] = partials[w].per_query_logsumexp[q];
        }
        const double total = logsumexp(merged);
        const double w_pos = std::exp(pos_logits[q] - total);
        cosine_sim_backward(batch.queries[q], batch.positives[q],
                            scale * (w_pos - 1.0), out.grad_queries[q],
                            out.grad_positives[q]);
        for (std::size_t w = 0; w < n_workers; ++w) {
            const auto& negs = batch.shards[w].negatives[q];
            for (std::size_t j = 0; j < negs.size(); ++j) {
                const double logit =
                    cosine_sim(batch.queries[q], negs[j]) / tau;
                const double w_neg = std::exp(logit - total);
                cosine_sim_backward(batch.queries[q], negs[j],
                                    scale * w_neg, out.grad_queries[q],
                                    out.grad_negatives[w][q][j]);
            }
        }
    }
    return out;
}

CbbLossOutput cbb_total(const ShardedRetrievalBatch& retrieval,
                        const StsBatch& sts, double tau, double beta,
                        CbbNorm norm) {
    if (beta < 0.0) {
        throw InvalidTemperature("cbb_total: beta must be nonnegative");
    }
    CbbLossOutput out;
    out.retrieval = cbb_retrieval_term(retrieval, tau, norm);
    out.sts = cosent(sts, tau);
    out.retrieval_value = out.retrieval.value;
    out.sts_value = out.sts.value;
    out.value = out.retrieval_value + beta * out.sts_value;
    for (auto& g : out.sts.grad_a) {
        kernels::scale(g.data(), beta, g.dim());
    }
    for (auto& g : out.sts.grad_b) {
        kernels::scale(g.data(), beta, g.dim());
    }
    return out;
}

}  // namespace ember::losses

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

#include "ember/gradcheck.hpp"

#include <algorithm>

#include "ember/encoder.hpp"
#include "ember/losses.hpp"
#include "ember/numeric.hpp"
#include "ember/rng.hpp"
#include "ember/shard.hpp"
#include "ember/trainer.hpp"

namespace ember::gradcheck {

namespace {

DenseVector random_vector(Rng& rng, std::size_t dim) {
    DenseVector v(dim);
    for (auto& x : v.values) {
        x = rng.normal();
    }
    return v;
}

std::vector<DenseVector> random_vectors(Rng& rng, std::size_t n,
                                        std::size_t dim) {
    std::vector<DenseVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(random_vector(rng, dim));
    }
    return out;
}

DenseVector flatten(const std::vector<DenseVector>& vs) {
    DenseVector flat;
    for (const auto& v : vs) {
        flat.values.insert(flat.values.end(), v.values.begin(),
                           v.values.end());
    }
    return flat;
}

std::vector<DenseVector> unflatten(const DenseVector& flat, std::size_t n,
                                   std::size_t dim) {
    std::vector<DenseVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        DenseVector v(dim);
        std::copy(flat.values.begin() + i * dim,
                  flat.values.begin() + (i + 1) * dim, v.values.begin());
        out.push_back(std::move(v));
    }
    return out;
}

double tau_for(std::uint64_t seed) {
    switch (seed % 3) {
        case 0: return 1.0;
        case 1: return 0.5;
        default: return 0.2;
    }
}

double check_info_nce(std::uint64_t seed, double h) {
    Rng rng(mix_seed(seed, 0xA1));
    const std::size_t m = 3;
    const std::size_t dim = 6;
    const double tau = tau_for(seed);
    losses::PairBatch batch{random_vectors(rng, m, dim),
                            random_vectors(rng, m, dim)};
    const auto out = losses::info_nce_in_batch(batch, tau);
    auto grads = out.grad_queries;
    grads.insert(grads.end(), out.grad_positives.begin(),
                 out.grad_positives.end());
    auto inputs = batch.queries;
    inputs.insert(inputs.end(), batch.positives.begin(),
                  batch.positives.end());
    const auto numeric = finite_diff_grad(
        [&](const DenseVector& flat) {
            const auto all = unflatten(flat, 2 * m, dim);
            losses::PairBatch b;
            b.queries.assign(all.begin(), all.begin() + m);
            b.positives.assign(all.begin() + m, all.end());
            return losses::info_nce_in_batch(b, tau).value;
        },
        flatten(inputs), h);
    return check_gradient(flatten(grads), numeric, 0.0).max_relative_error;
}

double check_cosent(std::uint64_t seed, double h) {
    Rng rng(mix_seed(seed, 0xA2));
    const std::size_t p = 4;
    const std::size_t dim = 6;
    const double tau = tau_for(seed);
    losses::StsBatch batch;
    std::vector<DenseVector> inputs;
    for (std::size_t i = 0; i < p; ++i) {
        auto a = random_vector(rng, dim);
        auto b = random_vector(rng, dim);
        inputs.push_back(a);
        inputs.push_back(b);
        batch.pairs.push_back(losses::StsPair{
            std::move(a), std::move(b),
            static_cast<double>(rng.uniform_int(3))});
    }
    const auto out = losses::cosent(batch, tau);
    std::vector<DenseVector> grads;
    for (std::size_t i = 0; i < p; ++i) {
        grads.push_back(out.grad_a[i]);
        grads.push_back(out.grad_b[i]);
    }
    const auto numeric = finite_diff_grad(
        [&](const DenseVector& flat) {
            const auto all = unflatten(flat, 2 * p, dim);
            losses::StsBatch b;
            for (std::size_t i = 0; i < p; ++i) {
                b.pairs.push_back(losses::StsPair{all[2 * i], all[2 * i + 1],
                                                  batch.pairs[i].label});
            }
            return losses::cosent(b, tau).value;
        },
        flatten(inputs), h);
    return check_gradient(flatten(grads), numeric, 0.0).max_relative_error;
}

double check_cbb(std::uint64_t seed, double h) {
    Rng rng(mix_seed(seed, 0xA3));
    const std::size_t n_q = 2;
    const std::size_t n_neg = 4;
    const std::size_t n_workers = 2;
    const std::size_t dim = 5;
    const double tau = tau_for(seed);
    const auto stacked = random_vectors(rng, n_q * (2 + n_neg), dim);

    auto build = [&](const DenseVector& flat) {
        const auto all = unflatten(flat, n_q * (2 + n_neg), dim);
        losses::ShardedRetrievalBatch batch;
        std::size_t cursor = 0;
        for (std::size_t q = 0; q < n_q; ++q) {
            batch.queries.push_back(all[cursor++]);
        }
        for (std::size_t q = 0; q < n_q; ++q) {
            batch.positives.push_back(all[cursor++]);
        }
        std::vector<std::vector<DenseVector>> per_query(n_q);
        for (std::size_t q = 0; q < n_q; ++q) {
            for (std::size_t j = 0; j < n_neg; ++j) {
                per_query[q].push_back(all[cursor++]);
            }
        }
        batch.shards = shard::partition_negatives(per_query, n_workers);
        return batch;
    };

    const auto flat = flatten(stacked);
    const auto out = losses::cbb_retrieval_term(build(flat), tau);
    std::vector<DenseVector> grads;
    for (std::size_t q = 0; q < n_q; ++q) {
        grads.push_back(out.grad_queries[q]);
    }
    for (std::size_t q = 0; q < n_q; ++q) {
        grads.push_back(out.grad_positives[q]);
    }
    for (std::size_t q = 0; q < n_q; ++q) {
        for (std::size_t j = 0; j < n_neg; ++j) {
            grads.push_back(
                out.grad_negatives[j % n_workers][q][j / n_workers]);
        }
    }
    const auto numeric = finite_diff_grad(
        [&](const DenseVector& x) {
            return losses::cbb_retrieval_term(build(x), tau).value;
        },
        flat, h);
    return check_gradient(flatten(grads), numeric, 0.0).max_relative_error;
}

EncoderConfig chain_config() {
    EncoderConfig cfg;
    cfg.tokenizer.vocab_size = 24;
    cfg.d_model = 5;
    cfg.output_dim = 8;
    cfg.mrl_dims = {3, 8};
    return cfg;
}

std::vector<std::uint32_t> random_tokens(Rng& rng, std::uint32_t vocab) {
    std::vector<std::uint32_t> tokens;
    const std::size_t n = 1 + rng.uniform_int(4);
    for (std::size_t i = 0; i < n; ++i) {
        tokens.push_back(static_cast<std::uint32_t>(rng.uniform_int(vocab)));
    }
    return tokens;
}

// InfoNCE through the encoder: loss(encode(params, tokens...)).
double check_encoder_chain(std::uint64_t seed, double h) {
    Rng rng(mix_seed(seed, 0xA4));
    const auto cfg = chain_config();
    auto params = init_params(cfg, mix_seed(seed, 0xA5));
    const double tau = tau_for(seed);
    const std::size_t m = 3;
    std::vector<std::vector<std::uint32_t>> q_tokens;
    std::vector<std::vector<std::uint32_t>> p_tokens;
    for (std::size_t i = 0; i < m; ++i) {
        q_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
        p_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
    }

    auto eval = [&](const EncoderParams& p) {
        losses::PairBatch batch;
        for (std::size_t i = 0; i < m; ++i) {
            batch.queries.push_back(encode(p, q_tokens[i]).vector);
            batch.positives.push_back(encode(p, p_tokens[i]).vector);
        }
        return batch;
    };

    const auto batch = eval(params);
    const auto out = losses::info_nce_in_batch(batch, tau);
    auto grads = make_grads(cfg);
    for (std::size_t i = 0; i < m; ++i) {
        encode_backward(params, q_tokens[i], out.grad_queries[i], grads);
        encode_backward(params, p_tokens[i], out.grad_positives[i], grads);
    }

    auto probe = params;
    const auto numeric = finite_diff_grad(
        [&](const DenseVector& flat) {
            assign_params_flat(probe, flat);
            return losses::info_nce_in_batch(eval(probe), tau).value;
        },
        flatten_params(params), h);
    return check_gradient(flatten_grads(grads), numeric, 0.0)
        .max_relative_error;
}

// The full fine-tuning objective through encoder and MRL truncation.
double check_mrl_chain(std::uint64_t seed, double h) {
    Rng rng(mix_seed(seed, 0xA6));
    const auto cfg = chain_config();
    auto params = init_params(cfg, mix_seed(seed, 0xA7));
    const double tau = tau_for(seed);
    const double beta = 0.8;
    const std::size_t n_q = 2;
    const std::size_t n_neg = 2;
    const std::size_t n_sts = 3;
    const std::vector<double> weights(cfg.mrl_dims.size(),
                                      1.0 / cfg.mrl_dims.size());

    std::vector<std::vector<std::uint32_t>> q_tokens;
    std::vector<std::vector<std::uint32_t>> p_tokens;
    std::vector<std::vector<std::vector<std::uint32_t>>> n_tokens(n_q);
    std::vector<std::vector<std::uint32_t>> a_tokens;
    std::vector<std::vector<std::uint32_t>> b_tokens;
    std::vector<double> labels;
    for (std::size_t q = 0; q < n_q; ++q) {
        q_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
        p_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
        for (std::size_t j = 0; j < n_neg; ++j) {
            n_tokens[q].push_back(
                random_tokens(rng, cfg.tokenizer.vocab_size));
        }
    }
    for (std::size_t i = 0; i < n_sts; ++i) {
        a_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
        b_tokens.push_back(random_tokens(rng, cfg.tokenizer.vocab_size));
        labels.push_back(static_cast<double>(rng.uniform_int(3)));
    }

    auto eval = [&](const EncoderParams& p) {
        losses::ShardedRetrievalBatch retri;
        std::vector<std::vector<DenseVector>> per_query(n_q);
        for (std::size_t q = 0; q < n_q; ++q) {
            retri.queries.push_back(encode(p, q_tokens[q]).vector);
            retri.positives.push_back(encode(p, p_tokens[q]).vector);
            for (const auto& toks : n_tokens[q]) {
                per_query[q].push_back(encode(p, toks).vector);
            }
        }
        retri.shards = shard::partition_negatives(per_query, 2);
        losses::StsBatch sts;
        for (std::size_t i = 0; i < n_sts; ++i) {
            sts.pairs.push_back(losses::StsPair{
                encode(p, a_tokens[i]).vector, encode(p, b_tokens[i]).vector,
                labels[i]});
        }
        return std::pair{retri, sts};
    };

    const auto [retri, sts] = eval(params);
    const auto out = trainer::mrl_cbb_total(retri, sts, tau, beta,
                                            losses::CbbNorm::queries,
                                            cfg.mrl_dims, weights);
    auto grads = make_grads(cfg);
    for (std::size_t q = 0; q < n_q; ++q) {
        encode_backward(params, q_tokens[q], out.retrieval.grad_queries[q],
                        grads);
        encode_backward(params, p_tokens[q], out.retrieval.grad_positives[q],
                        grads);
        for (std::size_t j = 0; j < n_neg; ++j) {
            encode_backward(params, n_tokens[q][j],
                            out.retrieval.grad_negatives[j % 2][q][j / 2],
                            grads);
        }
    }
    for (std::size_t i = 0; i < n_sts; ++i) {
        encode_backward(params, a_tokens[i], out.sts.grad_a[i], grads);
        encode_backward(params, b_tokens[i], out.sts.grad_b[i], grads);
    }

    auto probe = params;
    const auto numeric = finite_diff_grad(
        [&](const DenseVector& flat) {
            assign_params_flat(probe, flat);
            const auto [r, s] = eval(probe);
            return trainer::mrl_cbb_total(r, s, tau, beta,
                                          losses::CbbNorm::queries,
                                          cfg.mrl_dims, weights)
                .value;
        },
        flatten_params(params), h);
    return check_gradient(flatten_grads(grads), numeric, 0.0)
        .max_relative_error;
}

}  // namespace

std::vector<SuiteResult> run_full_suite(std::size_t n_seeds, double h,
                                        double tol) {
    struct Case {
        const char* name;
        double (*fn)(std::uint64_t, double);
    };
    const Case cases[] = {
        {"info_nce_in_batch", check_info_nce},
        {"cosent", check_cosent},
        {"cbb_retrieval_term", check_cbb},
        {"encoder_chain_info_nce", check_encoder_chain},
        {"encoder_mrl_chain_cbb_total", check_mrl_chain},
    };
    std::vector<SuiteResult> results;
    for (const auto& c : cases) {
        SuiteResult r;
        r.name = c.name;
        r.seeds = n_seeds;
        for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
            r.max_relative_error =
                std::max(r.max_relative_error, c.fn(seed, h));
        }
        r.passed = r.max_relative_error < tol;
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace ember::gradcheck

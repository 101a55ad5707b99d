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

#include <doctest.h>

#include <cmath>

#include "ember/evaluator.hpp"
#include "test_support.hpp"

using namespace ember;
using namespace ember::evaluator;

namespace {

EncoderConfig eval_config() {
    EncoderConfig cfg;
    cfg.tokenizer.vocab_size = 4096;
    cfg.d_model = 8;
    cfg.output_dim = 12;
    cfg.mrl_dims = {4, 12};
    return cfg;
}

// Distinct single-token texts give effectively random, uncorrelated
// embeddings under random parameters.
data::Corpus token_corpus(std::size_t n, std::size_t offset = 0) {
    data::Corpus corpus;
    for (std::size_t i = 0; i < n; ++i) {
        corpus.add(i, "corpustoken" + std::to_string(offset + i));
    }
    return corpus;
}

}  // namespace

TEST_CASE("recall_at_k boundaries") {
    const auto cfg = eval_config();
    const auto params = init_params(cfg, 1);
    auto corpus = token_corpus(1);
    CHECK(recall_at_k({"anything here"}, {0}, corpus, params, 1) == 1.0);
    CHECK(recall_at_k({"anything here"}, {0}, corpus, params, 50) == 1.0);

    auto bigger = token_corpus(16);
    CHECK(recall_at_k({"query text"}, {3}, bigger, params, 16) == 1.0);
    CHECK_THROWS_AS(recall_at_k({"q"}, {99}, bigger, params, 4), GoldMissing);
    CHECK_THROWS_AS(recall_at_k({}, {}, bigger, params, 4), LengthMismatch);
    CHECK_THROWS_AS(recall_at_k({"q"}, {0}, bigger, params, 0), EmptyInput);
}

TEST_CASE("recall_at_k is monotone in k") {
    const auto cfg = eval_config();
    const auto params = init_params(cfg, 2);
    auto corpus = token_corpus(32);
    std::vector<std::string> queries;
    std::vector<std::size_t> gold;
    Rng rng(5);
    for (int i = 0; i < 12; ++i) {
        queries.push_back("query" + std::to_string(i));
        gold.push_back(rng.uniform_int(32));
    }
    double prev = 0.0;
    for (std::size_t k : {1u, 2u, 4u, 8u, 16u, 32u}) {
        const double r = recall_at_k(queries, gold, corpus, params, k);
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(prev == 1.0);  // k == corpus size
}

TEST_CASE("recall_at_k of random embeddings matches the k/N baseline") {
    // Gold assignments are independent of the queries, so the hit rate is
    // k / corpus_size in expectation. Averaged over 50 seeds.
    const auto cfg = eval_config();
    const std::size_t corpus_n = 64;
    const std::size_t k = 8;
    double total = 0.0;
    std::size_t runs = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto params = init_params(cfg, 1000 + seed);
        auto corpus = token_corpus(corpus_n, seed * 1000);
        Rng rng(seed);
        std::vector<std::string> queries;
        std::vector<std::size_t> gold;
        for (int i = 0; i < 16; ++i) {
            queries.push_back("probe" + std::to_string(seed) + "x" +
                              std::to_string(i));
            gold.push_back(rng.uniform_int(corpus_n));
        }
        total += recall_at_k(queries, gold, corpus, params, k);
        ++runs;
    }
    const double mean = total / static_cast<double>(runs);
    const double expected =
        static_cast<double>(k) / static_cast<double>(corpus_n);
    CHECK(std::abs(mean - expected) < 0.04);
}

TEST_CASE("spearman closed-form cases") {
    CHECK(spearman(std::vector<double>{1, 2, 3, 4},
                   std::vector<double>{10, 20, 30, 40}) ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK(spearman(std::vector<double>{4, 3, 2, 1},
                   std::vector<double>{10, 20, 30, 40}) ==
          doctest::Approx(-1.0).epsilon(1e-15));
    // one adjacent swap in five: 1 - 6*2/(5*24) = 0.9
    CHECK(spearman(std::vector<double>{1, 2, 3, 5, 4},
                   std::vector<double>{1, 2, 3, 4, 5}) ==
          doctest::Approx(0.9).epsilon(1e-12));
    // hand-computed tie case: ranks (1.5, 1.5, 3) vs (1, 2, 3)
    CHECK(spearman(std::vector<double>{1, 1, 2},
                   std::vector<double>{1, 2, 3}) ==
          doctest::Approx(1.5 / std::sqrt(3.0)).epsilon(1e-12));

    CHECK_THROWS_AS(spearman(std::vector<double>{1, 2},
                             std::vector<double>{1, 2, 3}),
                    LengthMismatch);
    CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}),
                    LengthMismatch);
    CHECK_THROWS_AS(spearman(std::vector<double>{2, 2, 2},
                             std::vector<double>{1, 2, 3}),
                    DegenerateVariance);
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
    Rng rng(9);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> a;
        std::vector<double> b;
        for (int i = 0; i < 10; ++i) {
            a.push_back(rng.normal());
            b.push_back(rng.normal());
        }
        const double base = spearman(a, b);
        auto ta = a;
        for (auto& x : ta) {
            x = std::exp(2.0 * x) + 5.0;
        }
        auto tb = b;
        for (auto& x : tb) {
            x = x * x * x;  // odd cube is strictly monotone
        }
        CHECK(spearman(ta, b) == doctest::Approx(base).epsilon(1e-12));
        CHECK(spearman(a, tb) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("mrl_sweep full dimension equals plain evaluation") {
    const auto cfg = eval_config();
    const auto params = init_params(cfg, 3);
    auto corpus = token_corpus(24);
    std::vector<std::string> queries;
    std::vector<std::size_t> gold;
    Rng rng(11);
    for (int i = 0; i < 8; ++i) {
        queries.push_back("sweepquery" + std::to_string(i));
        gold.push_back(rng.uniform_int(24));
    }
    const auto results =
        mrl_sweep(queries, gold, corpus, params, cfg.mrl_dims, 5);
    REQUIRE(results.size() == cfg.mrl_dims.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
        CHECK(results[i].metric == "recall_at_k");
        CHECK(*results[i].dim == cfg.mrl_dims[i]);
        CHECK(*results[i].k == 5);
    }
    const double plain = recall_at_k(queries, gold, corpus, params, 5);
    CHECK(results.back().value == plain);  // dim == D, exact
}

TEST_CASE("eval results serialize with k and dim fields") {
    std::vector<EvalResult> results;
    EvalResult a;
    a.metric = "recall_at_k";
    a.value = 0.5;
    a.k = 10;
    a.dim = 32;
    results.push_back(a);
    EvalResult b;
    b.metric = "spearman";
    b.value = -0.25;
    results.push_back(b);
    const auto text = results_to_json_text(results);
    CHECK(text.find("\"recall_at_k\"") != std::string::npos);
    CHECK(text.find("\"k\": 10") != std::string::npos);
    CHECK(text.find("\"dim\": 32") != std::string::npos);
    CHECK(text.find("\"spearman\"") != std::string::npos);
}

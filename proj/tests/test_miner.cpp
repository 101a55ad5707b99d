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

#include <algorithm>
#include <cmath>
#include <set>

#include "ember/miner.hpp"
#include "test_support.hpp"

using namespace ember;
using namespace ember::miner;

namespace {

DenseVector with_cosine(double c) {
    // Unit vector at angle acos(c) from [1, 0].
    return DenseVector{c, std::sqrt(1.0 - c * c)};
}

// Deterministic toy world for mining passes: distinct multi-token texts.
struct MiningFixture {
    EncoderConfig cfg;
    EncoderParams params;
    data::Corpus corpus;

    MiningFixture(std::size_t corpus_size, std::uint64_t seed) {
        cfg.tokenizer.vocab_size = 1024;
        cfg.d_model = 8;
        cfg.output_dim = 12;
        cfg.mrl_dims = {12};
        params = init_params(cfg, seed);
        for (std::size_t i = 0; i < corpus_size; ++i) {
            corpus.add(i, "passage" + std::to_string(i) + " filler" +
                              std::to_string(i % 7));
        }
    }
};

}  // namespace

TEST_CASE("score_negatives is the mean cosine") {
    const DenseVector query{1.0, 0.0};
    CHECK(score_negatives(query, {query, query}) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK(score_negatives(query, {with_cosine(0.6), with_cosine(0.8)}) ==
          doctest::Approx(0.7).epsilon(1e-12));
    CHECK_THROWS_AS(score_negatives(query, {}), EmptyNegatives);
}

TEST_CASE("should_replace decision table") {
    MinerConfig cfg;  // ratio 1.15, abs threshold 0.8
    MiningState state;
    state.initial_score = 0.9;
    CHECK(should_replace(state, 0.7, cfg));        // 0.805 < 0.9 and |.7| < .8
    CHECK_FALSE(should_replace(state, 0.85, cfg)); // 0.9775 >= 0.9
    state.initial_score = 0.99;
    CHECK_FALSE(should_replace(state, 0.82, cfg)); // |0.82| >= 0.8
}

TEST_CASE("should_replace is monotone in current_avg below the threshold") {
    MinerConfig cfg;
    MiningState state;
    state.initial_score = 0.9;
    bool was_true = false;
    for (double cur = 0.79; cur >= -0.79; cur -= 0.05) {
        const bool now = should_replace(state, cur, cfg);
        if (was_true) {
            CHECK(now);  // lowering current_avg never flips true -> false
        }
        was_true = was_true || now;
    }
    CHECK(was_true);
}

TEST_CASE("replacement_window formula") {
    auto w1 = replacement_window(1, 5, 10);
    CHECK(w1.lo == 10);
    CHECK(w1.hi == 15);
    auto w2 = replacement_window(2, 5, 10);
    CHECK(w2.lo == 15);
    CHECK(w2.hi == 20);
    auto degenerate = replacement_window(1, 1, 0);
    CHECK(degenerate.lo == 0);
    CHECK(degenerate.hi == 1);

    // consecutive windows are adjacent, disjoint and of width n
    for (std::size_t n : {1u, 3u, 8u}) {
        for (std::size_t i = 1; i < 6; ++i) {
            const auto a = replacement_window(i, n, 10);
            const auto b = replacement_window(i + 1, n, 10);
            CHECK(a.hi - a.lo == n);
            CHECK(a.hi == b.lo);
        }
    }
}

TEST_CASE("rank_candidates ordering, exclusion, tie-break") {
    const DenseVector query{1.0, 0.0};
    // corpus: the query itself (excluded) plus one other vector
    std::vector<DenseVector> embs{query, with_cosine(0.3)};
    std::vector<std::size_t> ids{0, 1};
    auto ranking = rank_candidates(query, embs, ids, {0});
    REQUIRE(ranking.ranked.size() == 1);
    CHECK(ranking.ranked[0].id == 1);

    embs = {with_cosine(0.1), with_cosine(0.9)};
    ranking = rank_candidates(query, embs, ids, {});
    CHECK(ranking.ranked[0].id == 1);
    CHECK(ranking.ranked[1].id == 0);

    // exact ties break toward the lower id
    embs = {with_cosine(0.5), with_cosine(0.5), with_cosine(0.5)};
    ranking = rank_candidates(query, embs, {5, 3, 9}, {});
    CHECK(ranking.ranked[0].id == 3);
    CHECK(ranking.ranked[1].id == 5);
    CHECK(ranking.ranked[2].id == 9);
}

TEST_CASE("rank_candidates agrees with a brute-force sort") {
    Rng rng(31);
    const auto query = test::random_vector(rng, 6);
    const auto embs = test::random_vectors(rng, 24, 6);
    std::vector<std::size_t> ids(24);
    for (std::size_t i = 0; i < 24; ++i) {
        ids[i] = i;
    }
    const auto ranking = rank_candidates(query, embs, ids, {7});

    std::vector<std::pair<double, std::size_t>> brute;
    for (std::size_t i = 0; i < 24; ++i) {
        if (i == 7) {
            continue;
        }
        brute.emplace_back(-cosine_sim(query, embs[i]), i);
    }
    std::sort(brute.begin(), brute.end());
    REQUIRE(ranking.ranked.size() == brute.size());
    for (std::size_t r = 0; r < brute.size(); ++r) {
        CHECK(ranking.ranked[r].id == brute[r].second);
    }
}

TEST_CASE("replace_negatives installs the next window") {
    CandidateRanking ranking;
    for (std::size_t r = 0; r < 30; ++r) {
        ranking.ranked.push_back(
            ScoredCandidate{100 + r, 1.0 - 0.01 * static_cast<double>(r)});
    }
    MinerConfig cfg;
    MiningState state;
    state.replacement_index = 1;
    state.n_neg = 5;
    state.initial_score = 0.9;
    state.installed_negative_ids = {100, 101, 102, 103, 104};

    const auto next = replace_negatives(state, ranking, cfg);
    CHECK(next.replacement_index == 2);
    REQUIRE(next.installed_negative_ids.size() == 5);
    // ranks [15, 20) of the ranking
    for (std::size_t j = 0; j < 5; ++j) {
        CHECK(next.installed_negative_ids[j] == 100 + 15 + j);
    }
    double expected = 0.0;
    for (std::size_t r = 15; r < 20; ++r) {
        expected += ranking.ranked[r].score;
    }
    expected /= 5.0;
    CHECK(next.initial_score == expected);  // definitional, exact

    // A decayed stale set is outscored by the fresh window: the window
    // holds ranks 15..19 of a descending ranking, all above 0.4.
    const double stale_current_avg = 0.4;
    CHECK(next.initial_score >= stale_current_avg);

    CandidateRanking short_ranking;
    for (std::size_t r = 0; r < 12; ++r) {
        short_ranking.ranked.push_back(ScoredCandidate{r, 0.5});
    }
    CHECK_THROWS_AS(replace_negatives(state, short_ranking, cfg),
                    CorpusTooSmall);
}

TEST_CASE("initial_mine installs ranks [skip_top, skip_top + n)") {
    MiningFixture fx(40, 77);
    std::vector<data::RetrievalRecord> records;
    records.push_back(
        data::RetrievalRecord{"query text one", fx.corpus.texts[3], {}});
    MinerConfig cfg;
    cfg.skip_top = 4;
    const auto dataset = initial_mine(fx.params, records, fx.corpus, 6, cfg);
    REQUIRE(dataset.size() == 1);
    const auto& ex = dataset[0];
    CHECK(ex.positive_id == 3);
    CHECK(ex.mining.replacement_index == 1);
    CHECK(ex.mining.n_neg == 6);
    REQUIRE(ex.mining.installed_negative_ids.size() == 6);

    // cross-check against an explicit ranking
    const auto embs = encode_corpus(fx.params, fx.corpus);
    const auto q = encode_text(fx.params, ex.query).vector;
    const auto ranking = rank_candidates(q, embs, fx.corpus.ids, {3});
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(ex.mining.installed_negative_ids[j] ==
              ranking.ranked[4 + j].id);
    }

    std::vector<data::RetrievalRecord> missing;
    missing.push_back(data::RetrievalRecord{"q", "not in corpus", {}});
    CHECK_THROWS_AS(initial_mine(fx.params, missing, fx.corpus, 6, cfg),
                    GoldMissing);

    MiningFixture tiny(8, 78);
    std::vector<data::RetrievalRecord> rec2;
    rec2.push_back(data::RetrievalRecord{"q", tiny.corpus.texts[0], {}});
    CHECK_THROWS_AS(initial_mine(tiny.params, rec2, tiny.corpus, 6, cfg),
                    CorpusTooSmall);
}

TEST_CASE("run_mining_pass replaces exactly the triggered examples") {
    MiningFixture fx(60, 79);
    MinerConfig cfg;
    cfg.check_interval = 100;
    cfg.skip_top = 2;
    std::vector<data::RetrievalRecord> records;
    for (std::size_t i = 0; i < 4; ++i) {
        records.push_back(data::RetrievalRecord{
            "query number " + std::to_string(i), fx.corpus.texts[i], {}});
    }
    auto dataset = initial_mine(fx.params, records, fx.corpus, 4, cfg);

    SUBCASE("no trigger leaves the dataset unchanged") {
        // current_avg == initial_score right after install, so
        // current * 1.15 >= initial for positive scores.
        const auto before = dataset;
        const auto result =
            run_mining_pass(fx.params, dataset, fx.corpus, 100, cfg);
        CHECK(result.replacements.empty());
        CHECK(result.ledger.size() == dataset.size());
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            CHECK(dataset[i].mining.installed_negative_ids ==
                  before[i].mining.installed_negative_ids);
            CHECK(dataset[i].mining.replacement_index == 1);
            CHECK_FALSE(result.ledger[i].replaced);
        }
    }

    SUBCASE("forced triggers replace exactly those examples") {
        // Inflate the recorded install score of examples 1 and 3 so the
        // rule fires for them alone (real scores here are far below 0.8).
        dataset[1].mining.initial_score = 0.99;
        dataset[3].mining.initial_score = 0.99;
        const auto result =
            run_mining_pass(fx.params, dataset, fx.corpus, 200, cfg);
        std::set<std::size_t> replaced_ids;
        for (const auto& r : result.replacements) {
            replaced_ids.insert(r.example_id);
        }
        CHECK(replaced_ids == std::set<std::size_t>{1, 3});
        CHECK(result.replacements.size() == replaced_ids.size());
        CHECK(dataset[1].mining.replacement_index == 2);
        CHECK(dataset[3].mining.replacement_index == 2);
        CHECK(dataset[0].mining.replacement_index == 1);
        CHECK(dataset[2].mining.replacement_index == 1);
        for (const auto& e : result.ledger) {
            CHECK(e.step == 200);
        }
    }

    SUBCASE("off-cadence step is rejected") {
        CHECK_THROWS_AS(
            run_mining_pass(fx.params, dataset, fx.corpus, 150, cfg), Error);
    }
}

TEST_CASE("mined dataset round-trips through its file format") {
    MiningFixture fx(30, 81);
    MinerConfig cfg;
    cfg.skip_top = 3;
    std::vector<data::RetrievalRecord> records;
    for (std::size_t i = 0; i < 3; ++i) {
        records.push_back(data::RetrievalRecord{
            "mined query " + std::to_string(i), fx.corpus.texts[i * 2], {}});
    }
    const auto dataset = initial_mine(fx.params, records, fx.corpus, 4, cfg);
    const auto path = test::fresh_dir("miner_io") / "mined.jsonl";
    save_mined(dataset, path);
    const auto loaded = load_mined(path);
    REQUIRE(loaded.size() == dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        CHECK(loaded[i].query == dataset[i].query);
        CHECK(loaded[i].positive_id == dataset[i].positive_id);
        CHECK(loaded[i].mining.installed_negative_ids ==
              dataset[i].mining.installed_negative_ids);
        CHECK(loaded[i].mining.initial_score ==
              dataset[i].mining.initial_score);
        CHECK(loaded[i].mining.replacement_index ==
              dataset[i].mining.replacement_index);
    }
}

TEST_CASE("ledger file round-trip") {
    const auto path = test::fresh_dir("ledger_io") / "ledger.jsonl";
    std::vector<LedgerEntry> entries;
    entries.push_back(LedgerEntry{100, 4, 2, 0.62, 0.41, true});
    entries.push_back(LedgerEntry{100, 5, 1, 0.62, 0.60, false});
    append_ledger(entries, path);
    const auto loaded = load_ledger(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].step == 100);
    CHECK(loaded[0].example_id == 4);
    CHECK(loaded[0].replacement_index == 2);
    CHECK(loaded[0].initial_score == 0.62);
    CHECK(loaded[0].current_avg == 0.41);
    CHECK(loaded[0].replaced);
    CHECK_FALSE(loaded[1].replaced);
}

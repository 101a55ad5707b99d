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

#include "ember/miner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace ember::miner {

namespace {

using nlohmann::json;

std::unordered_map<std::string, std::size_t> text_to_id(
    const data::Corpus& corpus) {
    std::unordered_map<std::string, std::size_t> map;
    map.reserve(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        map.emplace(corpus.texts[i], corpus.ids[i]);
    }
    return map;
}

double mean_score_of_ids(const DenseVector& query_emb,
                         const std::vector<std::size_t>& ids,
                         const std::vector<DenseVector>& corpus_embs,
                         const data::Corpus& corpus) {
    if (ids.empty()) {
        throw EmptyNegatives("mining: no installed negatives");
    }
    double sum = 0.0;
    for (std::size_t id : ids) {
        sum += cosine_sim(query_emb, corpus_embs[corpus.index_of_id.at(id)]);
    }
    return sum / static_cast<double>(ids.size());
}

}  // namespace

double score_negatives(const DenseVector& query,
                       const std::vector<DenseVector>& negatives) {
    if (negatives.empty()) {
        throw EmptyNegatives("score_negatives: empty negative list");
    }
    double sum = 0.0;
    for (const auto& neg : negatives) {
        sum += cosine_sim(query, neg);
    }
    return sum / static_cast<double>(negatives.size());
}

bool should_replace(const MiningState& state, double current_avg,
                    const MinerConfig& cfg) {
    if (!std::isfinite(current_avg)) {
        throw NonFiniteEvaluation("should_replace: current_avg not finite");
    }
    return current_avg * cfg.ratio < state.initial_score &&
           std::abs(current_avg) < cfg.abs_threshold;
}

RankWindow replacement_window(std::size_t i, std::size_t n,
                              std::size_t skip_top) {
    return RankWindow{(i - 1) * n + skip_top, i * n + skip_top};
}

CandidateRanking rank_candidates(
    const DenseVector& query_embedding,
    const std::vector<DenseVector>& corpus_embeddings,
    const std::vector<std::size_t>& corpus_ids,
    const std::unordered_set<std::size_t>& exclude) {
    if (corpus_embeddings.size() != corpus_ids.size()) {
        throw DimensionMismatch("rank_candidates: ids and embeddings differ");
    }
    CandidateRanking ranking;
    ranking.ranked.reserve(corpus_ids.size());
    for (std::size_t k = 0; k < corpus_ids.size(); ++k) {
        if (exclude.contains(corpus_ids[k])) {
            continue;
        }
        ranking.ranked.push_back(ScoredCandidate{
            corpus_ids[k], cosine_sim(query_embedding, corpus_embeddings[k])});
    }
    std::sort(ranking.ranked.begin(), ranking.ranked.end(),
              [](const ScoredCandidate& a, const ScoredCandidate& b) {
                  if (a.score != b.score) {
                      return a.score > b.score;
                  }
                  return a.id < b.id;
              });
    return ranking;
}

MiningState replace_negatives(const MiningState& state,
                              const CandidateRanking& ranking,
                              const MinerConfig& cfg) {
    const std::size_t next_i = state.replacement_index + 1;
    const RankWindow window =
        replacement_window(next_i, state.n_neg, cfg.skip_top);
    if (ranking.ranked.size() < window.hi) {
        throw CorpusTooSmall("replace_negatives: ranking holds " +
                             std::to_string(ranking.ranked.size()) +
                             " candidates, window needs " +
                             std::to_string(window.hi));
    }
    MiningState next = state;
    next.replacement_index = next_i;
    next.installed_negative_ids.clear();
    double sum = 0.0;
    for (std::size_t r = window.lo; r < window.hi; ++r) {
        next.installed_negative_ids.push_back(ranking.ranked[r].id);
        sum += ranking.ranked[r].score;
    }
    next.initial_score = sum / static_cast<double>(state.n_neg);
    next.last_avg_score = next.initial_score;
    return next;
}

std::vector<DenseVector> encode_corpus(const EncoderParams& params,
                                       const data::Corpus& corpus) {
    std::vector<DenseVector> embeddings;
    embeddings.reserve(corpus.size());
    for (const auto& text : corpus.texts) {
        embeddings.push_back(encode_text(params, text).vector);
    }
    return embeddings;
}

std::vector<RetrievalExample> initial_mine(
    const EncoderParams& params,
    const std::vector<data::RetrievalRecord>& records,
    const data::Corpus& corpus, std::size_t n_neg, const MinerConfig& cfg) {
    if (n_neg == 0) {
        throw EmptyNegatives("initial_mine: n_neg must be positive");
    }
    const auto by_text = text_to_id(corpus);
    const auto corpus_embs = encode_corpus(params, corpus);
    const RankWindow window = replacement_window(1, n_neg, cfg.skip_top);

    std::vector<RetrievalExample> dataset;
    dataset.reserve(records.size());
    for (const auto& record : records) {
        const auto it = by_text.find(record.positive);
        if (it == by_text.end()) {
            throw GoldMissing("initial_mine: positive text not in corpus: " +
                              record.positive);
        }
        RetrievalExample example;
        example.query = record.query;
        example.positive_id = it->second;
        const auto query_emb = encode_text(params, record.query).vector;
        const auto ranking = rank_candidates(query_emb, corpus_embs,
                                             corpus.ids, {it->second});
        if (ranking.ranked.size() < window.hi) {
            throw CorpusTooSmall("initial_mine: corpus too small for window");
        }
        example.mining.replacement_index = 1;
        example.mining.n_neg = n_neg;
        double sum = 0.0;
        for (std::size_t r = window.lo; r < window.hi; ++r) {
            example.mining.installed_negative_ids.push_back(
                ranking.ranked[r].id);
            sum += ranking.ranked[r].score;
        }
        example.mining.initial_score = sum / static_cast<double>(n_neg);
        example.mining.last_avg_score = example.mining.initial_score;
        dataset.push_back(std::move(example));
    }
    return dataset;
}

MiningPassResult run_mining_pass(const EncoderParams& params,
                                 std::vector<RetrievalExample>& dataset,
                                 const data::Corpus& corpus, std::size_t step,
                                 const MinerConfig& cfg) {
    if (cfg.check_interval == 0 || step % cfg.check_interval != 0) {
        throw Error("run_mining_pass: step " + std::to_string(step) +
                    " is not a multiple of the check interval");
    }
    const auto corpus_embs = encode_corpus(params, corpus);
    MiningPassResult result;
    for (std::size_t idx = 0; idx < dataset.size(); ++idx) {
        auto& example = dataset[idx];
        const auto query_emb = encode_text(params, example.query).vector;
        const double current_avg =
            mean_score_of_ids(query_emb, example.mining.installed_negative_ids,
                              corpus_embs, corpus);
        const bool trigger = should_replace(example.mining, current_avg, cfg);
        LedgerEntry entry;
        entry.step = step;
        entry.example_id = idx;
        entry.replacement_index = example.mining.replacement_index;
        entry.initial_score = example.mining.initial_score;
        entry.current_avg = current_avg;
        entry.replaced = trigger;
        if (trigger) {
            const auto ranking =
                rank_candidates(query_emb, corpus_embs, corpus.ids,
                                {example.positive_id});
            example.mining = replace_negatives(example.mining, ranking, cfg);
            result.replacements.push_back(
                ReplacementRecord{idx, current_avg,
                                  example.mining.initial_score,
                                  example.mining.replacement_index});
            entry.replacement_index = example.mining.replacement_index;
        } else {
            example.mining.last_avg_score = current_avg;
        }
        result.ledger.push_back(entry);
    }
    return result;
}

void save_mined(const std::vector<RetrievalExample>& dataset,
                const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& example : dataset) {
        out << json{{"query", example.query},
                    {"positive_id", example.positive_id},
                    {"negative_ids", example.mining.installed_negative_ids},
                    {"replacement_index", example.mining.replacement_index},
                    {"initial_score", example.mining.initial_score},
                    {"last_avg_score", example.mining.last_avg_score}}
                   .dump()
            << '\n';
    }
}

std::vector<RetrievalExample> load_mined(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<RetrievalExample> dataset;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ParseError("mined line " + std::to_string(line_no) +
                             ": not a JSON object");
        }
        for (const char* field :
             {"query", "positive_id", "negative_ids", "replacement_index",
              "initial_score", "last_avg_score"}) {
            if (!j.contains(field)) {
                throw SchemaViolation("mined line " + std::to_string(line_no) +
                                      ": missing field \"" + field + "\"");
            }
        }
        RetrievalExample example;
        example.query = j["query"].get<std::string>();
        example.positive_id = j["positive_id"].get<std::size_t>();
        example.mining.installed_negative_ids =
            j["negative_ids"].get<std::vector<std::size_t>>();
        example.mining.replacement_index =
            j["replacement_index"].get<std::size_t>();
        example.mining.initial_score = j["initial_score"].get<double>();
        example.mining.last_avg_score = j["last_avg_score"].get<double>();
        example.mining.n_neg = example.mining.installed_negative_ids.size();
        if (example.mining.n_neg == 0) {
            throw SchemaViolation("mined line " + std::to_string(line_no) +
                                  ": empty negative set");
        }
        dataset.push_back(std::move(example));
    }
    return dataset;
}

void append_ledger(const std::vector<LedgerEntry>& entries,
                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::app);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    for (const auto& e : entries) {
        out << json{{"step", e.step},
                    {"example_id", e.example_id},
                    {"i", e.replacement_index},
                    {"initial_score", e.initial_score},
                    {"current_avg", e.current_avg},
                    {"replaced", e.replaced}}
                   .dump()
            << '\n';
    }
}

std::vector<LedgerEntry> load_ledger(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<LedgerEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            throw ParseError("ledger line " + std::to_string(line_no) +
                             ": not a JSON object");
        }
        LedgerEntry e;
        e.step = j.at("step").get<std::size_t>();
        e.example_id = j.at("example_id").get<std::size_t>();
        e.replacement_index = j.at("i").get<std::size_t>();
        e.initial_score = j.at("initial_score").get<double>();
        e.current_avg = j.at("current_avg").get<double>();
        e.replaced = j.at("replaced").get<bool>();
        entries.push_back(e);
    }
    return entries;
}

}  // namespace ember::miner

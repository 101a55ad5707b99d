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
#include <filesystem>
#include <unordered_set>
#include <vector>

#include "ember/data.hpp"
#include "ember/encoder.hpp"
#include "ember/numeric.hpp"

namespace ember::miner {

/// Per-example mining ledger. initial_score is the mean negative cosine at
/// install time; replacement_index is i in the rank-window formula,
/// with the initial installation counting as i = 1.
struct MiningState {
    double initial_score = 0.0;
    double last_avg_score = 0.0;
    std::size_t replacement_index = 1;
    std::size_t n_neg = 0;
    std::vector<std::size_t> installed_negative_ids;
};

struct MinerConfig {
    std::size_t check_interval = 100;
    double ratio = 1.15;
    double abs_threshold = 0.8;
    std::size_t skip_top = 10;
};

/// A retrieval example plus its mining state. The positive is referenced by
/// corpus id so rankings can exclude it.
struct RetrievalExample {
    std::string query;
    std::size_t positive_id = 0;
    MiningState mining;
};

struct ScoredCandidate {
    std::size_t id = 0;
    double score = 0.0;
};

/// Corpus ids ordered by descending cosine to one query, positives excluded,
/// ties broken toward the lower id.
struct CandidateRanking {
    std::vector<ScoredCandidate> ranked;
};

struct RankWindow {
    std::size_t lo = 0;
    std::size_t hi = 0;
};

struct ReplacementRecord {
    std::size_t example_id = 0;
    double old_score = 0.0;
    double new_score = 0.0;
    std::size_t replacement_index = 0;  // value after the replacement
};

struct LedgerEntry {
    std::size_t step = 0;
    std::size_t example_id = 0;
    std::size_t replacement_index = 0;
    double initial_score = 0.0;
    double current_avg = 0.0;
    bool replaced = false;
};

struct MiningPassResult {
    std::vector<ReplacementRecord> replacements;
    std::vector<LedgerEntry> ledger;
};

double score_negatives(const DenseVector& query,
                       const std::vector<DenseVector>& negatives);

/// The replacement trigger: current * ratio < initial and |current| below
/// the absolute threshold.
bool should_replace(const MiningState& state, double current_avg,
                    const MinerConfig& cfg);

/// Half-open 0-indexed rank window [(i-1)*n + skip_top, i*n + skip_top).
RankWindow replacement_window(std::size_t i, std::size_t n,
                              std::size_t skip_top);

CandidateRanking rank_candidates(
    const DenseVector& query_embedding,
    const std::vector<DenseVector>& corpus_embeddings,
    const std::vector<std::size_t>& corpus_ids,
    const std::unordered_set<std::size_t>& exclude);

/// Installs the next window from the ranking, bumps replacement_index and
/// resets initial_score to the new set's mean cosine. Caller is responsible
/// for only invoking this after should_replace returned true.
MiningState replace_negatives(const MiningState& state,
                              const CandidateRanking& ranking,
                              const MinerConfig& cfg);

std::vector<DenseVector> encode_corpus(const EncoderParams& params,
                                       const data::Corpus& corpus);

/// Initial mining (replacement i = 1): installs ranks
/// [skip_top, skip_top + n_neg) for every record.
std::vector<RetrievalExample> initial_mine(
    const EncoderParams& params,
    const std::vector<data::RetrievalRecord>& records,
    const data::Corpus& corpus, std::size_t n_neg, const MinerConfig& cfg);

/// One check pass over the whole dataset under current weights: recomputes
/// each example's mean negative score, applies the trigger rule and performs
/// replacements in place.
MiningPassResult run_mining_pass(const EncoderParams& params,
                                 std::vector<RetrievalExample>& dataset,
                                 const data::Corpus& corpus, std::size_t step,
                                 const MinerConfig& cfg);

// Mined dataset file (JSON lines), the hand-off between mine-init and the
// fine-tuning loops.
void save_mined(const std::vector<RetrievalExample>& dataset,
                const std::filesystem::path& path);
std::vector<RetrievalExample> load_mined(const std::filesystem::path& path);

void append_ledger(const std::vector<LedgerEntry>& entries,
                   const std::filesystem::path& path);
std::vector<LedgerEntry> load_ledger(const std::filesystem::path& path);

}  // namespace ember::miner

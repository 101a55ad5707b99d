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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ember/errors.hpp"

namespace ember::data {

// JSON-lines schemas, field names are part of the contract:
//   pair           {"query", "passage"}            (+ optional "category")
//   retrieval      {"query", "positive", "negatives": [...]}
//   sts            {"text_a", "text_b", "score"}
//   classification {"text", "label"}
//   corpus         {"id", "text"}

struct PairRecord {
    std::string query;
    std::string passage;
    std::optional<std::string> category;
};

struct RetrievalRecord {
    std::string query;
    std::string positive;
    std::vector<std::string> negatives;
};

struct StsRecord {
    std::string text_a;
    std::string text_b;
    double score = 0.0;
};

struct ClassificationRecord {
    std::string text;
    std::string label;
};

/// Passage pool with stable integer ids, the candidate set for mining and
/// retrieval evaluation.
struct Corpus {
    std::vector<std::size_t> ids;
    std::vector<std::string> texts;
    std::unordered_map<std::size_t, std::size_t> index_of_id;

    void add(std::size_t id, std::string text);
    std::size_t size() const { return ids.size(); }
};

std::vector<PairRecord> load_pairs(const std::filesystem::path& path,
                                   bool strict = false);
std::vector<RetrievalRecord> load_retrieval(const std::filesystem::path& path,
                                            bool strict = false);
std::vector<StsRecord> load_sts(const std::filesystem::path& path,
                                bool strict = false);
std::vector<ClassificationRecord> load_classification(
    const std::filesystem::path& path, bool strict = false);
Corpus load_corpus(const std::filesystem::path& path, bool strict = false);

void write_pairs(const std::vector<PairRecord>& records,
                 const std::filesystem::path& path);
void write_retrieval(const std::vector<RetrievalRecord>& records,
                     const std::filesystem::path& path);
void write_sts(const std::vector<StsRecord>& records,
               const std::filesystem::path& path);
void write_classification(const std::vector<ClassificationRecord>& records,
                          const std::filesystem::path& path);
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);

/// Pluggable pair scorer; must return values in [0, 1].
using PairScorer = std::function<double(const PairRecord&)>;

/// Default scorer: Jaccard overlap of lowercased whitespace token sets.
double jaccard_score(const PairRecord& record);

struct FilterReport {
    std::size_t input_count = 0;
    std::size_t kept_count = 0;
    std::size_t dropped_count = 0;
    double threshold = 0.0;
    // 20 equal-width score bins over [0, 1]; scores of 1.0 land in the top.
    std::vector<std::size_t> histogram = std::vector<std::size_t>(20, 0);
};

/// Keeps pairs scoring >= threshold ("discard below" keeps exact hits).
std::pair<std::vector<PairRecord>, FilterReport> filter_pairs(
    const std::vector<PairRecord>& pairs, const PairScorer& scorer,
    double threshold);

/// Converts labeled texts to retrieval records: positive drawn from the same
/// label, negatives from other labels. Deterministic given the seed.
std::vector<RetrievalRecord> classification_to_retrieval(
    const std::vector<ClassificationRecord>& records, std::uint64_t seed,
    std::size_t n_negatives = 1);

struct SynthOutput {
    std::vector<PairRecord> pairs;
    std::vector<RetrievalRecord> retrieval;
    std::vector<StsRecord> sts;
    std::vector<ClassificationRecord> classification;
    Corpus corpus;
};

/// Deterministic cluster-structured corpus. Same-cluster texts always share
/// that cluster's anchor tokens; token windows of nearby clusters overlap so
/// STS scores derived from ring distance have learnable structure.
SynthOutput synth_corpus(std::uint64_t seed, std::size_t n_clusters,
                         std::size_t per_cluster, std::size_t vocab);

}  // namespace ember::data

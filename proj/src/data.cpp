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

#include "ember/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ember/rng.hpp"

namespace ember::data {

namespace {

using nlohmann::json;

json parse_line(const std::string& line, std::size_t line_no) {
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": not a JSON object");
    }
    return j;
}

void check_fields(const json& j, std::size_t line_no,
                  const std::vector<std::string>& required,
                  const std::vector<std::string>& optional, bool strict) {
    for (const auto& field : required) {
        if (!j.contains(field)) {
            throw SchemaViolation("line " + std::to_string(line_no) +
                                  ": missing field \"" + field + "\"");
        }
    }
    if (strict) {
        for (const auto& [key, value] : j.items()) {
            const bool known =
                std::find(required.begin(), required.end(), key) !=
                    required.end() ||
                std::find(optional.begin(), optional.end(), key) !=
                    optional.end();
            if (!known) {
                throw SchemaViolation("line " + std::to_string(line_no) +
                                      ": unknown field \"" + key + "\"");
            }
        }
    }
}

std::string get_string(const json& j, std::size_t line_no,
                       const std::string& field, bool allow_empty = false) {
    if (!j[field].is_string()) {
        throw SchemaViolation("line " + std::to_string(line_no) +
                              ": field \"" + field + "\" must be a string");
    }
    std::string value = j[field].get<std::string>();
    if (!allow_empty && value.empty()) {
        throw SchemaViolation("line " + std::to_string(line_no) +
                              ": field \"" + field + "\" must be non-empty");
    }
    return value;
}

double get_number(const json& j, std::size_t line_no,
                  const std::string& field) {
    if (!j[field].is_number()) {
        throw SchemaViolation("line " + std::to_string(line_no) +
                              ": field \"" + field + "\" must be a number");
    }
    const double value = j[field].get<double>();
    if (!std::isfinite(value)) {
        throw SchemaViolation("line " + std::to_string(line_no) +
                              ": field \"" + field + "\" must be finite");
    }
    return value;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        fn(line, line_no);
    }
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    return out;
}

std::set<std::string> token_set(const std::string& text) {
    std::set<std::string> tokens;
    std::istringstream stream(text);
    std::string word;
    while (stream >> word) {
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        tokens.insert(word);
    }
    return tokens;
}

}  // namespace

void Corpus::add(std::size_t id, std::string text) {
    if (index_of_id.contains(id)) {
        throw SchemaViolation("corpus: duplicate id " + std::to_string(id));
    }
    index_of_id.emplace(id, ids.size());
    ids.push_back(id);
    texts.push_back(std::move(text));
}

std::vector<PairRecord> load_pairs(const std::filesystem::path& path,
                                   bool strict) {
    std::vector<PairRecord> records;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        const json j = parse_line(line, line_no);
        check_fields(j, line_no, {"query", "passage"}, {"category"}, strict);
        PairRecord r;
        r.query = get_string(j, line_no, "query");
        r.passage = get_string(j, line_no, "passage");
        if (j.contains("category")) {
            r.category = get_string(j, line_no, "category");
        }
        records.push_back(std::move(r));
    });
    return records;
}

std::vector<RetrievalRecord> load_retrieval(const std::filesystem::path& path,
                                            bool strict) {
    std::vector<RetrievalRecord> records;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        const json j = parse_line(line, line_no);
        check_fields(j, line_no, {"query", "positive", "negatives"}, {},
                     strict);
        RetrievalRecord r;
        r.query = get_string(j, line_no, "query");
        r.positive = get_string(j, line_no, "positive");
        if (!j["negatives"].is_array()) {
            throw SchemaViolation("line " + std::to_string(line_no) +
                                  ": \"negatives\" must be an array");
        }
        std::set<std::string> seen;
        for (const auto& neg : j["negatives"]) {
            if (!neg.is_string()) {
                throw SchemaViolation("line " + std::to_string(line_no) +
                                      ": negatives must be strings");
            }
            std::string text = neg.get<std::string>();
            if (text == r.positive) {
                throw SchemaViolation("line " + std::to_string(line_no) +
                                      ": negative equals the positive");
            }
            if (!seen.insert(text).second) {
                throw SchemaViolation("line " + std::to_string(line_no) +
                                      ": duplicate negative");
            }
            r.negatives.push_back(std::move(text));
        }
        records.push_back(std::move(r));
    });
    return records;
}

std::vector<StsRecord> load_sts(const std::filesystem::path& path,
                                bool strict) {
    std::vector<StsRecord> records;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        const json j = parse_line(line, line_no);
        check_fields(j, line_no, {"text_a", "text_b", "score"}, {}, strict);
        StsRecord r;
        r.text_a = get_string(j, line_no, "text_a");
        r.text_b = get_string(j, line_no, "text_b");
        r.score = get_number(j, line_no, "score");
        records.push_back(std::move(r));
    });
    return records;
}

std::vector<ClassificationRecord> load_classification(
    const std::filesystem::path& path, bool strict) {
    std::vector<ClassificationRecord> records;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        const json j = parse_line(line, line_no);
        check_fields(j, line_no, {"text", "label"}, {}, strict);
        ClassificationRecord r;
        r.text = get_string(j, line_no, "text");
        r.label = get_string(j, line_no, "label");
        records.push_back(std::move(r));
    });
    return records;
}

Corpus load_corpus(const std::filesystem::path& path, bool strict) {
    Corpus corpus;
    for_each_line(path, [&](const std::string& line, std::size_t line_no) {
        const json j = parse_line(line, line_no);
        check_fields(j, line_no, {"id", "text"}, {}, strict);
        if (!j["id"].is_number_unsigned()) {
            throw SchemaViolation("line " + std::to_string(line_no) +
                                  ": \"id\" must be a nonnegative integer");
        }
        corpus.add(j["id"].get<std::size_t>(),
                   get_string(j, line_no, "text"));
    });
    return corpus;
}

void write_pairs(const std::vector<PairRecord>& records,
                 const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : records) {
        json j{{"query", r.query}, {"passage", r.passage}};
        if (r.category) {
            j["category"] = *r.category;
        }
        out << j.dump() << '\n';
    }
}

void write_retrieval(const std::vector<RetrievalRecord>& records,
                     const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : records) {
        out << json{{"query", r.query},
                    {"positive", r.positive},
                    {"negatives", r.negatives}}
                   .dump()
            << '\n';
    }
}

void write_sts(const std::vector<StsRecord>& records,
               const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : records) {
        out << json{{"text_a", r.text_a},
                    {"text_b", r.text_b},
                    {"score", r.score}}
                   .dump()
            << '\n';
    }
}

void write_classification(const std::vector<ClassificationRecord>& records,
                          const std::filesystem::path& path) {
    auto out = open_out(path);
    for (const auto& r : records) {
        out << json{{"text", r.text}, {"label", r.label}}.dump() << '\n';
    }
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        out << json{{"id", corpus.ids[i]}, {"text", corpus.texts[i]}}.dump()
            << '\n';
    }
}

double jaccard_score(const PairRecord& record) {
    const auto a = token_set(record.query);
    const auto b = token_set(record.passage);
    if (a.empty() && b.empty()) {
        return 0.0;
    }
    std::size_t inter = 0;
    for (const auto& t : a) {
        inter += b.count(t);
    }
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

std::pair<std::vector<PairRecord>, FilterReport> filter_pairs(
    const std::vector<PairRecord>& pairs, const PairScorer& scorer,
    double threshold) {
    if (threshold < 0.0 || threshold > 1.0) {
        throw ScorerOutOfRange("filter_pairs: threshold must be in [0, 1]");
    }
    std::vector<PairRecord> kept;
    FilterReport report;
    report.threshold = threshold;
    report.input_count = pairs.size();
    for (const auto& pair : pairs) {
        const double score = scorer(pair);
        if (!(score >= 0.0 && score <= 1.0)) {
            throw ScorerOutOfRange("filter_pairs: scorer returned " +
                                   std::to_string(score));
        }
        const auto bin = std::min<std::size_t>(
            report.histogram.size() - 1,
            static_cast<std::size_t>(score * report.histogram.size()));
        ++report.histogram[bin];
        if (score >= threshold) {
            kept.push_back(pair);
        }
    }
    report.kept_count = kept.size();
    report.dropped_count = report.input_count - report.kept_count;
    return {std::move(kept), report};
}

std::vector<RetrievalRecord> classification_to_retrieval(
    const std::vector<ClassificationRecord>& records, std::uint64_t seed,
    std::size_t n_negatives) {
    std::unordered_map<std::string, std::vector<std::size_t>> by_label;
    std::vector<std::string> labels;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = by_label.try_emplace(records[i].label);
        if (inserted) {
            labels.push_back(records[i].label);
        }
        it->second.push_back(i);
    }
    if (labels.size() < 2) {
        throw InsufficientLabels(
            "classification_to_retrieval: need at least two labels");
    }
    Rng rng(mix_seed(seed, 0x10));
    std::vector<RetrievalRecord> out;
    out.reserve(records.size());
    for (std::size_t anchor = 0; anchor < records.size(); ++anchor) {
        const auto& label = records[anchor].label;
        const auto& same = by_label.at(label);
        if (same.size() < 2) {
            throw SingletonLabel("classification_to_retrieval: label \"" +
                                 label + "\" has a single member");
        }
        std::size_t pos;
        do {
            pos = same[rng.uniform_int(same.size())];
        } while (pos == anchor);
        RetrievalRecord r;
        r.query = records[anchor].text;
        r.positive = records[pos].text;
        std::set<std::string> used{r.positive};
        std::size_t attempts = 0;
        while (r.negatives.size() < n_negatives &&
               attempts < 64 * n_negatives) {
            ++attempts;
            const std::size_t cand = rng.uniform_int(records.size());
            if (records[cand].label == label) {
                continue;
            }
            if (!used.insert(records[cand].text).second) {
                continue;
            }
            r.negatives.push_back(records[cand].text);
        }
        out.push_back(std::move(r));
    }
    return out;
}

namespace {

struct ClusterLayout {
    std::size_t n_clusters;
    std::size_t vocab;
    std::size_t stride;
    std::size_t window;
};

std::string content_token(std::size_t id) { return "t" + std::to_string(id); }

std::string anchor_token(std::size_t cluster, std::size_t i) {
    return "anc" + std::to_string(cluster) + "x" + std::to_string(i);
}

// Content tokens of a cluster come from a sliding window on a token ring;
// neighbouring clusters overlap, far clusters do not.
std::size_t window_token(const ClusterLayout& layout, std::size_t cluster,
                         Rng& rng) {
    const std::size_t offset = rng.uniform_int(layout.window);
    return (cluster * layout.stride + offset) % layout.vocab;
}

std::vector<std::string> make_passage_tokens(const ClusterLayout& layout,
                                             std::size_t cluster, Rng& rng) {
    std::vector<std::string> tokens;
    tokens.push_back(anchor_token(cluster, 0));
    tokens.push_back(anchor_token(cluster, 1));
    const std::size_t n_content = 8 + rng.uniform_int(5);
    for (std::size_t k = 0; k < n_content; ++k) {
        tokens.push_back(content_token(window_token(layout, cluster, rng)));
    }
    return tokens;
}

std::string join(const std::vector<std::string>& tokens) {
    std::string text;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i > 0) {
            text += ' ';
        }
        text += tokens[i];
    }
    return text;
}

}  // namespace

SynthOutput synth_corpus(std::uint64_t seed, std::size_t n_clusters,
                         std::size_t per_cluster, std::size_t vocab) {
    if (n_clusters == 0 || per_cluster == 0 || vocab == 0) {
        throw EmptyInput("synth_corpus: sizes must be positive");
    }
    ClusterLayout layout;
    layout.n_clusters = n_clusters;
    layout.vocab = vocab;
    layout.stride = std::max<std::size_t>(1, vocab / n_clusters);
    layout.window = std::min(vocab, 4 * layout.stride);

    SynthOutput out;
    Rng rng(mix_seed(seed, 0x20));

    // Corpus passages, per_cluster per cluster, ids 0..n-1.
    std::vector<std::vector<std::string>> passage_tokens;
    std::vector<std::size_t> passage_cluster;
    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t k = 0; k < per_cluster; ++k) {
            auto tokens = make_passage_tokens(layout, c, rng);
            const std::size_t id = out.corpus.size();
            out.corpus.add(id, join(tokens));
            passage_tokens.push_back(std::move(tokens));
            passage_cluster.push_back(c);
        }
    }

    // Pretraining pairs: the passage side reuses most of the query side's
    // content tokens, so related pairs clear a token-overlap filter.
    const std::size_t n_pairs = std::max<std::size_t>(1, per_cluster / 2);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t k = 0; k < n_pairs; ++k) {
            const auto a = make_passage_tokens(layout, c, rng);
            std::vector<std::string> b;
            b.push_back(anchor_token(c, 0));
            b.push_back(anchor_token(c, 1));
            for (std::size_t i = 2; i < a.size(); ++i) {
                if (rng.uniform() < 0.7) {
                    b.push_back(a[i]);
                }
            }
            const std::size_t extra = 2 + rng.uniform_int(3);
            for (std::size_t i = 0; i < extra; ++i) {
                b.push_back(
                    content_token(window_token(layout, c, rng)));
            }
            out.pairs.push_back(PairRecord{join(a), join(b), std::nullopt});
        }
    }

    // Retrieval queries: short views of a specific corpus passage.
    const std::size_t queries_per_cluster =
        std::max<std::size_t>(1, per_cluster / 8);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t k = 0; k < queries_per_cluster; ++k) {
            const std::size_t pick =
                c * per_cluster + rng.uniform_int(per_cluster);
            const auto& ptoks = passage_tokens[pick];
            std::vector<std::string> q;
            q.push_back(anchor_token(c, 0));
            const std::size_t n_from_positive = 3 + rng.uniform_int(3);
            for (std::size_t i = 0; i < n_from_positive; ++i) {
                q.push_back(ptoks[2 + rng.uniform_int(ptoks.size() - 2)]);
            }
            out.retrieval.push_back(
                RetrievalRecord{join(q), out.corpus.texts[pick], {}});
        }
    }

    // STS pairs: label derived from ring distance, text_b reuses text_a's
    // content in proportion to the label.
    const std::size_t d_max =
        std::max<std::size_t>(1, std::min<std::size_t>(8, n_clusters / 2));
    const std::size_t n_sts = n_clusters * 16;
    for (std::size_t k = 0; k < n_sts; ++k) {
        const std::size_t ca = rng.uniform_int(n_clusters);
        const std::size_t d =
            n_clusters == 1 ? 0 : rng.uniform_int(d_max + 1);
        const std::size_t cb = (ca + d) % n_clusters;
        const double label =
            1.0 - static_cast<double>(d) / static_cast<double>(d_max);
        const auto a = make_passage_tokens(layout, ca, rng);
        auto b = make_passage_tokens(layout, cb, rng);
        const double reuse = 0.8 * label;
        for (std::size_t i = 2; i < b.size(); ++i) {
            if (rng.uniform() < reuse) {
                b[i] = a[2 + rng.uniform_int(a.size() - 2)];
            }
        }
        out.sts.push_back(StsRecord{join(a), join(b), label});
    }

    // Classification: cluster id is the label.
    const std::size_t n_cls = std::min<std::size_t>(per_cluster, 8);
    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t k = 0; k < n_cls; ++k) {
            out.classification.push_back(ClassificationRecord{
                join(make_passage_tokens(layout, c, rng)),
                "cluster_" + std::to_string(c)});
        }
    }
    return out;
}

}  // namespace ember::data

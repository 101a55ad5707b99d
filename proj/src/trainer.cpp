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

#include "ember/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ember/kernels.hpp"
#include "ember/rng.hpp"

namespace ember::trainer {

namespace {

using nlohmann::json;

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// RNG stream tags so every loop draws from an independent, reproducible
// stream of the single run seed.
constexpr std::uint64_t kStreamPretrain = 0x0100;
constexpr std::uint64_t kStreamRetrieval = 0x0200;
constexpr std::uint64_t kStreamSts = 0x0300;
constexpr std::uint64_t kStreamTaskChoice = 0x0400;

/// Deterministic epoch shuffling; tails smaller than a batch start a fresh
/// epoch with a seed derived from the epoch counter.
class EpochSampler {
public:
    EpochSampler(std::size_t n, std::size_t batch, std::uint64_t seed)
        : n_(n), batch_(std::min(batch, n)), seed_(seed) {
        if (n_ == 0) {
            throw EmptyInput("EpochSampler: empty dataset");
        }
        reshuffle();
    }

    std::vector<std::size_t> next_batch() {
        if (pos_ + batch_ > order_.size()) {
            ++epoch_;
            reshuffle();
        }
        std::vector<std::size_t> out(order_.begin() + pos_,
                                     order_.begin() + pos_ + batch_);
        pos_ += batch_;
        return out;
    }

private:
    void reshuffle() {
        order_.resize(n_);
        std::iota(order_.begin(), order_.end(), 0);
        Rng rng(mix_seed(seed_, epoch_));
        rng.shuffle(order_);
        pos_ = 0;
    }

    std::size_t n_;
    std::size_t batch_;
    std::uint64_t seed_;
    std::size_t epoch_ = 0;
    std::size_t pos_ = 0;
    std::vector<std::size_t> order_;
};

std::vector<DenseVector> truncate_all(const std::vector<DenseVector>& xs,
                                      std::size_t d) {
    std::vector<DenseVector> out;
    out.reserve(xs.size());
    for (const auto& x : xs) {
        out.push_back(vector_prefix(x, d));
    }
    return out;
}

void chain_prefix_grads(const std::vector<DenseVector>& full,
                        std::size_t d, double weight,
                        const std::vector<DenseVector>& grad_prefix,
                        std::vector<DenseVector>& grad_full) {
    DenseVector scaled;
    for (std::size_t i = 0; i < full.size(); ++i) {
        scaled = grad_prefix[i];
        kernels::scale(scaled.data(), weight, scaled.dim());
        prefix_backward(full[i], d, scaled, grad_full[i]);
    }
}

void validate_mrl_args(std::span<const std::size_t> dims,
                       std::span<const double> weights, std::size_t full_dim) {
    if (dims.empty() || dims.size() != weights.size()) {
        throw InvalidDim("mrl: dims/weights lengths disagree or empty");
    }
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) {
            throw InvalidDim("mrl: negative weight");
        }
        sum += w;
    }
    if (sum <= 0.0) {
        throw InvalidDim("mrl: weights sum to zero");
    }
    for (std::size_t d : dims) {
        if (d == 0 || d > full_dim) {
            throw InvalidDim("mrl: dim " + std::to_string(d) +
                             " invalid for output dim " +
                             std::to_string(full_dim));
        }
    }
}

void check_grads_finite(const EncoderGrads& grads) {
    if (!all_finite(grads.embedding_table.values) ||
        !all_finite(grads.projection.values)) {
        throw NonFiniteGradient("optimizer_step: gradient not finite");
    }
}

void adamw_tensor(DenseMatrix& p, const DenseMatrix& g, DenseMatrix& m,
                  DenseMatrix& v, double lr, double wd, double bc1,
                  double bc2) {
    kernels::adamw_update(p.values.data(), g.values.data(), m.values.data(),
                          v.values.data(), p.values.size(), lr, wd,
                          kAdamBeta1, kAdamBeta2, bc1, bc2, kAdamEps);
}

}  // namespace

void validate_config(const TrainConfig& cfg) {
    auto fail = [](const std::string& why) {
        throw SchemaViolation("config: " + why);
    };
    if (!(cfg.lr > 0.0)) fail("lr must be positive");
    if (!(cfg.warmup_ratio > 0.0 && cfg.warmup_ratio < 1.0))
        fail("warmup_ratio must be in (0,1)");
    if (cfg.weight_decay < 0.0) fail("weight_decay must be nonnegative");
    if (cfg.pretrain_batch == 0 || cfg.retrieval_batch == 0 ||
        cfg.sts_batch == 0)
        fail("batch sizes must be positive");
    if (!(cfg.tau > 0.0)) fail("tau must be positive");
    if (cfg.beta < 0.0) fail("beta must be nonnegative");
    if (cfg.n_workers == 0) fail("n_workers must be positive");
    if (cfg.n_neg == 0) fail("n_neg must be positive");
    if (cfg.n_neg % cfg.n_workers != 0)
        fail("n_neg must be divisible by n_workers");
    if (cfg.sts_task_prob < 0.0 || cfg.sts_task_prob > 1.0)
        fail("sts_task_prob must be in [0,1]");
    if (!(cfg.miner.ratio > 1.0)) fail("miner.ratio must exceed 1");
    if (!(cfg.miner.abs_threshold > 0.0 && cfg.miner.abs_threshold < 1.0))
        fail("miner.abs_threshold must be in (0,1)");
    if (cfg.miner.check_interval == 0)
        fail("miner.check_interval must be positive");
    if (cfg.encoder.tokenizer.vocab_size < 2) fail("vocab_size must be >= 2");
    if (cfg.encoder.d_model == 0 || cfg.encoder.output_dim == 0)
        fail("encoder dims must be positive");
    const auto& dims = cfg.encoder.mrl_dims;
    if (dims.empty()) fail("mrl_dims must be non-empty");
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (dims[k] == 0) fail("mrl_dims entries must be positive");
        if (k > 0 && dims[k] <= dims[k - 1])
            fail("mrl_dims must be strictly ascending");
    }
    if (dims.back() != cfg.encoder.output_dim)
        fail("mrl_dims must end at the encoder output dim");
}

TrainConfig config_from_json_text(const std::string& text) {
    return apply_config_overlay(TrainConfig{}, text);
}

TrainConfig apply_config_overlay(TrainConfig base, const std::string& text) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
        throw ParseError("config: not a JSON object");
    }
    TrainConfig cfg = std::move(base);
    auto num = [&](const char* key, double& slot) {
        if (j.contains(key)) slot = j.at(key).get<double>();
    };
    auto count = [&](const char* key, std::size_t& slot) {
        if (j.contains(key)) slot = j.at(key).get<std::size_t>();
    };
    num("lr", cfg.lr);
    num("warmup_ratio", cfg.warmup_ratio);
    num("weight_decay", cfg.weight_decay);
    count("pretrain_batch", cfg.pretrain_batch);
    count("retrieval_batch", cfg.retrieval_batch);
    count("sts_batch", cfg.sts_batch);
    num("tau", cfg.tau);
    num("beta", cfg.beta);
    count("n_workers", cfg.n_workers);
    count("n_neg", cfg.n_neg);
    num("sts_task_prob", cfg.sts_task_prob);
    count("total_steps", cfg.total_steps);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("cbb_norm")) {
        const auto mode = j.at("cbb_norm").get<std::string>();
        if (mode == "queries") {
            cfg.cbb_norm = losses::CbbNorm::queries;
        } else if (mode == "negatives") {
            cfg.cbb_norm = losses::CbbNorm::negatives;
        } else {
            throw SchemaViolation("config: unknown cbb_norm \"" + mode +
                                  "\"");
        }
    }
    if (j.contains("miner")) {
        const auto& m = j.at("miner");
        if (m.contains("check_interval"))
            cfg.miner.check_interval =
                m.at("check_interval").get<std::size_t>();
        if (m.contains("ratio")) cfg.miner.ratio = m.at("ratio").get<double>();
        if (m.contains("abs_threshold"))
            cfg.miner.abs_threshold = m.at("abs_threshold").get<double>();
        if (m.contains("skip_top"))
            cfg.miner.skip_top = m.at("skip_top").get<std::size_t>();
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        if (e.contains("vocab_size"))
            cfg.encoder.tokenizer.vocab_size =
                e.at("vocab_size").get<std::uint32_t>();
        if (e.contains("lowercase"))
            cfg.encoder.tokenizer.lowercase = e.at("lowercase").get<bool>();
        if (e.contains("d_model"))
            cfg.encoder.d_model = e.at("d_model").get<std::size_t>();
        if (e.contains("output_dim"))
            cfg.encoder.output_dim = e.at("output_dim").get<std::size_t>();
    }
    if (j.contains("mrl_dims")) {
        cfg.encoder.mrl_dims =
            j.at("mrl_dims").get<std::vector<std::size_t>>();
    }
    validate_config(cfg);
    return cfg;
}

std::string config_to_json_text(const TrainConfig& cfg) {
    json j{
        {"lr", cfg.lr},
        {"warmup_ratio", cfg.warmup_ratio},
        {"weight_decay", cfg.weight_decay},
        {"pretrain_batch", cfg.pretrain_batch},
        {"retrieval_batch", cfg.retrieval_batch},
        {"sts_batch", cfg.sts_batch},
        {"tau", cfg.tau},
        {"beta", cfg.beta},
        {"n_workers", cfg.n_workers},
        {"n_neg", cfg.n_neg},
        {"cbb_norm",
         cfg.cbb_norm == losses::CbbNorm::queries ? "queries" : "negatives"},
        {"sts_task_prob", cfg.sts_task_prob},
        {"total_steps", cfg.total_steps},
        {"seed", cfg.seed},
        {"miner",
         {{"check_interval", cfg.miner.check_interval},
          {"ratio", cfg.miner.ratio},
          {"abs_threshold", cfg.miner.abs_threshold},
          {"skip_top", cfg.miner.skip_top}}},
        {"mrl_dims", cfg.encoder.mrl_dims},
        {"encoder",
         {{"vocab_size", cfg.encoder.tokenizer.vocab_size},
          {"lowercase", cfg.encoder.tokenizer.lowercase},
          {"d_model", cfg.encoder.d_model},
          {"output_dim", cfg.encoder.output_dim}}},
    };
    return j.dump(2);
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return config_from_json_text(buffer.str());
}

OptimizerState make_optimizer_state(const EncoderConfig& cfg) {
    OptimizerState state;
    state.m_embedding = DenseMatrix(cfg.tokenizer.vocab_size, cfg.d_model);
    state.v_embedding = DenseMatrix(cfg.tokenizer.vocab_size, cfg.d_model);
    state.m_projection = DenseMatrix(cfg.d_model, cfg.output_dim);
    state.v_projection = DenseMatrix(cfg.d_model, cfg.output_dim);
    return state;
}

void optimizer_step(EncoderParams& params, const EncoderGrads& grads,
                    OptimizerState& state, double lr, double weight_decay) {
    if (grads.embedding_table.values.size() !=
            params.embedding_table.values.size() ||
        grads.projection.values.size() != params.projection.values.size()) {
        throw DimensionMismatch("optimizer_step: gradient shapes disagree");
    }
    check_grads_finite(grads);
    ++state.step_count;
    const double t = static_cast<double>(state.step_count);
    const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
    const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
    adamw_tensor(params.embedding_table, grads.embedding_table,
                 state.m_embedding, state.v_embedding, lr, weight_decay, bc1,
                 bc2);
    adamw_tensor(params.projection, grads.projection, state.m_projection,
                 state.v_projection, lr, weight_decay, bc1, bc2);
}

double warmup_lr(std::size_t step, const TrainConfig& cfg) {
    const auto warmup_steps = static_cast<std::size_t>(
        std::ceil(cfg.warmup_ratio * static_cast<double>(cfg.total_steps)));
    if (warmup_steps == 0 || step >= warmup_steps) {
        return cfg.lr;
    }
    return cfg.lr * static_cast<double>(step) /
           static_cast<double>(warmup_steps);
}

losses::PairLossOutput mrl_pair_loss(
    const std::function<losses::PairLossOutput(const losses::PairBatch&)>&
        loss_fn,
    const losses::PairBatch& batch, std::span<const std::size_t> dims,
    std::span<const double> weights) {
    if (batch.queries.empty()) {
        throw DimensionMismatch("mrl_pair_loss: empty batch");
    }
    const std::size_t full_dim = batch.queries[0].dim();
    validate_mrl_args(dims, weights, full_dim);

    losses::PairLossOutput out;
    out.grad_queries.assign(batch.queries.size(), DenseVector(full_dim));
    out.grad_positives.assign(batch.positives.size(), DenseVector(full_dim));
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (weights[k] == 0.0) {
            continue;
        }
        losses::PairBatch truncated{truncate_all(batch.queries, dims[k]),
                                    truncate_all(batch.positives, dims[k])};
        const auto part = loss_fn(truncated);
        out.value += weights[k] * part.value;
        chain_prefix_grads(batch.queries, dims[k], weights[k],
                           part.grad_queries, out.grad_queries);
        chain_prefix_grads(batch.positives, dims[k], weights[k],
                           part.grad_positives, out.grad_positives);
    }
    return out;
}

losses::ShardedLossOutput mrl_retrieval_loss(
    const losses::ShardedRetrievalBatch& batch, double tau,
    losses::CbbNorm norm, std::span<const std::size_t> dims,
    std::span<const double> weights) {
    if (batch.queries.empty()) {
        throw DimensionMismatch("mrl_retrieval_loss: empty batch");
    }
    const std::size_t full_dim = batch.queries[0].dim();
    validate_mrl_args(dims, weights, full_dim);

    losses::ShardedLossOutput out;
    out.grad_queries.assign(batch.queries.size(), DenseVector(full_dim));
    out.grad_positives.assign(batch.positives.size(), DenseVector(full_dim));
    out.grad_negatives.resize(batch.shards.size());
    for (std::size_t w = 0; w < batch.shards.size(); ++w) {
        out.grad_negatives[w].resize(batch.shards[w].negatives.size());
        for (std::size_t q = 0; q < batch.shards[w].negatives.size(); ++q) {
            out.grad_negatives[w][q].assign(
                batch.shards[w].negatives[q].size(), DenseVector(full_dim));
        }
    }

    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (weights[k] == 0.0) {
            continue;
        }
        const std::size_t d = dims[k];
        losses::ShardedRetrievalBatch truncated;
        truncated.queries = truncate_all(batch.queries, d);
        truncated.positives = truncate_all(batch.positives, d);
        truncated.shards.resize(batch.shards.size());
        for (std::size_t w = 0; w < batch.shards.size(); ++w) {
            truncated.shards[w].worker_id = batch.shards[w].worker_id;
            truncated.shards[w].negatives.resize(
                batch.shards[w].negatives.size());
            for (std::size_t q = 0; q < batch.shards[w].negatives.size();
                 ++q) {
                truncated.shards[w].negatives[q] =
                    truncate_all(batch.shards[w].negatives[q], d);
            }
        }
        const auto part = losses::cbb_retrieval_term(truncated, tau, norm);
        out.value += weights[k] * part.value;
        chain_prefix_grads(batch.queries, d, weights[k], part.grad_queries,
                           out.grad_queries);
        chain_prefix_grads(batch.positives, d, weights[k],
                           part.grad_positives, out.grad_positives);
        for (std::size_t w = 0; w < batch.shards.size(); ++w) {
            for (std::size_t q = 0; q < batch.shards[w].negatives.size();
                 ++q) {
                chain_prefix_grads(batch.shards[w].negatives[q], d,
                                   weights[k], part.grad_negatives[w][q],
                                   out.grad_negatives[w][q]);
            }
        }
    }
    return out;
}

losses::StsLossOutput mrl_cosent_loss(const losses::StsBatch& batch,
                                      double tau,
                                      std::span<const std::size_t> dims,
                                      std::span<const double> weights) {
    if (batch.pairs.empty()) {
        throw DimensionMismatch("mrl_cosent_loss: empty batch");
    }
    const std::size_t full_dim = batch.pairs[0].a.dim();
    validate_mrl_args(dims, weights, full_dim);

    std::vector<DenseVector> full_a;
    std::vector<DenseVector> full_b;
    full_a.reserve(batch.pairs.size());
    full_b.reserve(batch.pairs.size());
    for (const auto& p : batch.pairs) {
        full_a.push_back(p.a);
        full_b.push_back(p.b);
    }

    losses::StsLossOutput out;
    out.grad_a.assign(batch.pairs.size(), DenseVector(full_dim));
    out.grad_b.assign(batch.pairs.size(), DenseVector(full_dim));
    for (std::size_t k = 0; k < dims.size(); ++k) {
        if (weights[k] == 0.0) {
            continue;
        }
        const std::size_t d = dims[k];
        losses::StsBatch truncated;
        truncated.pairs.reserve(batch.pairs.size());
        for (const auto& p : batch.pairs) {
            truncated.pairs.push_back(losses::StsPair{
                vector_prefix(p.a, d), vector_prefix(p.b, d), p.label});
        }
        const auto part = losses::cosent(truncated, tau);
        out.value += weights[k] * part.value;
        chain_prefix_grads(full_a, d, weights[k], part.grad_a, out.grad_a);
        chain_prefix_grads(full_b, d, weights[k], part.grad_b, out.grad_b);
    }
    return out;
}

losses::CbbLossOutput mrl_cbb_total(const losses::ShardedRetrievalBatch& retri,
                                    const losses::StsBatch& sts, double tau,
                                    double beta, losses::CbbNorm norm,
                                    std::span<const std::size_t> dims,
                                    std::span<const double> weights) {
    losses::CbbLossOutput out;
    out.retrieval = mrl_retrieval_loss(retri, tau, norm, dims, weights);
    out.sts = mrl_cosent_loss(sts, tau, dims, weights);
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

void write_metrics_csv(const RunMetrics& metrics,
                       const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write metrics " + path.string());
    }
    out << "step,loss_total,loss_retri,loss_sts,lr,pos_score_mean,"
           "neg_score_mean,replacements\n";
    char buf[512];
    for (const auto& m : metrics) {
        std::snprintf(buf, sizeof buf,
                      "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%zu\n", m.step,
                      m.loss_total, m.loss_retri, m.loss_sts, m.lr,
                      m.pos_score_mean, m.neg_score_mean, m.replacements);
        out << buf;
    }
}

RunMetrics read_metrics_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open metrics " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw ParseError("metrics csv: empty file");
    }
    if (line !=
        "step,loss_total,loss_retri,loss_sts,lr,pos_score_mean,"
        "neg_score_mean,replacements") {
        throw MissingColumn("metrics csv: unexpected header: " + line);
    }
    RunMetrics metrics;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) {
            fields.push_back(field);
        }
        if (fields.size() != 8) {
            throw ParseError("metrics csv line " + std::to_string(line_no) +
                             ": expected 8 fields");
        }
        try {
            StepMetrics m;
            m.step = std::stoull(fields[0]);
            m.loss_total = std::stod(fields[1]);
            m.loss_retri = std::stod(fields[2]);
            m.loss_sts = std::stod(fields[3]);
            m.lr = std::stod(fields[4]);
            m.pos_score_mean = std::stod(fields[5]);
            m.neg_score_mean = std::stod(fields[6]);
            m.replacements = std::stoull(fields[7]);
            metrics.push_back(m);
        } catch (const std::exception&) {
            throw ParseError("metrics csv line " + std::to_string(line_no) +
                             ": malformed number");
        }
    }
    return metrics;
}

namespace {

struct TokenCache {
    std::vector<std::vector<std::uint32_t>> tokens;
};

TokenCache tokenize_corpus(const data::Corpus& corpus,
                           const TokenizerConfig& cfg) {
    TokenCache cache;
    cache.tokens.reserve(corpus.size());
    for (const auto& text : corpus.texts) {
        cache.tokens.push_back(tokenize(text, cfg));
    }
    return cache;
}

std::vector<double> uniform_weights(std::size_t n) {
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
}

double mean(std::span<const double> xs) {
    if (xs.empty()) {
        return 0.0;
    }
    double sum = 0.0;
    for (double x : xs) {
        sum += x;
    }
    return sum / static_cast<double>(xs.size());
}

// Everything one fine-tuning step needs: embeddings plus the token lists
// gradients flow back into.
struct RetrievalStepBatch {
    std::vector<const std::vector<std::uint32_t>*> query_tokens;
    std::vector<const std::vector<std::uint32_t>*> positive_tokens;
    // negative_tokens[q][j_in] aligned with per_query_negatives[q][j_in]
    std::vector<std::vector<const std::vector<std::uint32_t>*>>
        negative_tokens;
    losses::ShardedRetrievalBatch batch;  // shards built by round-robin
    std::vector<std::vector<DenseVector>> per_query_negatives;
    double pos_score_mean = 0.0;
    double neg_score_mean = 0.0;
};

struct StsStepBatch {
    std::vector<const std::vector<std::uint32_t>*> a_tokens;
    std::vector<const std::vector<std::uint32_t>*> b_tokens;
    losses::StsBatch batch;
};

RetrievalStepBatch build_retrieval_batch(
    const EncoderParams& params,
    const std::vector<miner::RetrievalExample>& dataset,
    const std::vector<std::size_t>& indices, const data::Corpus& corpus,
    const TokenCache& corpus_tokens,
    const std::vector<std::vector<std::uint32_t>>& query_tokens,
    std::size_t n_workers) {
    RetrievalStepBatch out;
    std::vector<double> pos_scores;
    std::vector<double> neg_scores;
    for (std::size_t idx : indices) {
        const auto& example = dataset[idx];
        out.query_tokens.push_back(&query_tokens[idx]);
        out.batch.queries.push_back(
            encode(params, query_tokens[idx]).vector);
        const std::size_t pos_index =
            corpus.index_of_id.at(example.positive_id);
        out.positive_tokens.push_back(&corpus_tokens.tokens[pos_index]);
        out.batch.positives.push_back(
            encode(params, corpus_tokens.tokens[pos_index]).vector);
        pos_scores.push_back(
            cosine_sim(out.batch.queries.back(), out.batch.positives.back()));

        std::vector<DenseVector> negs;
        std::vector<const std::vector<std::uint32_t>*> neg_tokens;
        double neg_sum = 0.0;
        for (std::size_t id : example.mining.installed_negative_ids) {
            const std::size_t neg_index = corpus.index_of_id.at(id);
            neg_tokens.push_back(&corpus_tokens.tokens[neg_index]);
            negs.push_back(
                encode(params, corpus_tokens.tokens[neg_index]).vector);
            neg_sum += cosine_sim(out.batch.queries.back(), negs.back());
        }
        neg_scores.push_back(neg_sum /
                             static_cast<double>(negs.size()));
        out.per_query_negatives.push_back(std::move(negs));
        out.negative_tokens.push_back(std::move(neg_tokens));
    }
    out.batch.shards =
        shard::partition_negatives(out.per_query_negatives, n_workers);
    out.pos_score_mean = mean(pos_scores);
    out.neg_score_mean = mean(neg_scores);
    return out;
}

StsStepBatch build_sts_batch(
    const EncoderParams& params, const std::vector<data::StsRecord>& sts_data,
    const std::vector<std::size_t>& indices,
    const std::vector<std::vector<std::uint32_t>>& a_tokens,
    const std::vector<std::vector<std::uint32_t>>& b_tokens) {
    StsStepBatch out;
    for (std::size_t idx : indices) {
        out.a_tokens.push_back(&a_tokens[idx]);
        out.b_tokens.push_back(&b_tokens[idx]);
        out.batch.pairs.push_back(
            losses::StsPair{encode(params, a_tokens[idx]).vector,
                            encode(params, b_tokens[idx]).vector,
                            sts_data[idx].score});
    }
    return out;
}

void backprop_retrieval(const EncoderParams& params,
                        const RetrievalStepBatch& rb,
                        const losses::ShardedLossOutput& loss,
                        std::size_t n_workers, EncoderGrads& grads) {
    for (std::size_t q = 0; q < rb.query_tokens.size(); ++q) {
        encode_backward(params, *rb.query_tokens[q], loss.grad_queries[q],
                        grads);
        encode_backward(params, *rb.positive_tokens[q],
                        loss.grad_positives[q], grads);
        for (std::size_t j_in = 0; j_in < rb.negative_tokens[q].size();
             ++j_in) {
            // Round-robin layout: input negative j_in lives on shard
            // j_in % n_workers at position j_in / n_workers.
            const auto& g =
                loss.grad_negatives[j_in % n_workers][q][j_in / n_workers];
            encode_backward(params, *rb.negative_tokens[q][j_in], g, grads);
        }
    }
}

void backprop_sts(const EncoderParams& params, const StsStepBatch& sb,
                  const losses::StsLossOutput& loss, EncoderGrads& grads) {
    for (std::size_t p = 0; p < sb.a_tokens.size(); ++p) {
        encode_backward(params, *sb.a_tokens[p], loss.grad_a[p], grads);
        encode_backward(params, *sb.b_tokens[p], loss.grad_b[p], grads);
    }
}

}  // namespace

RunMetrics pretrain_loop(const TrainConfig& cfg,
                         const std::vector<data::PairRecord>& pairs,
                         EncoderParams& params) {
    validate_config(cfg);
    if (pairs.empty()) {
        throw EmptyInput("pretrain_loop: no pair data");
    }
    std::vector<std::vector<std::uint32_t>> query_tokens;
    std::vector<std::vector<std::uint32_t>> passage_tokens;
    query_tokens.reserve(pairs.size());
    passage_tokens.reserve(pairs.size());
    for (const auto& pair : pairs) {
        query_tokens.push_back(
            tokenize(pair.query, params.config.tokenizer));
        passage_tokens.push_back(
            tokenize(pair.passage, params.config.tokenizer));
    }

    const auto weights = uniform_weights(cfg.mrl_dims().size());
    auto state = make_optimizer_state(params.config);
    auto grads = make_grads(params.config);
    EpochSampler sampler(pairs.size(), cfg.pretrain_batch,
                         mix_seed(cfg.seed, kStreamPretrain));
    RunMetrics metrics;
    metrics.reserve(cfg.total_steps);

    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const auto indices = sampler.next_batch();
        losses::PairBatch batch;
        std::vector<const std::vector<std::uint32_t>*> q_toks;
        std::vector<const std::vector<std::uint32_t>*> p_toks;
        for (std::size_t idx : indices) {
            q_toks.push_back(&query_tokens[idx]);
            p_toks.push_back(&passage_tokens[idx]);
            batch.queries.push_back(encode(params, query_tokens[idx]).vector);
            batch.positives.push_back(
                encode(params, passage_tokens[idx]).vector);
        }

        double pos_sum = 0.0;
        double neg_sum = 0.0;
        std::size_t neg_count = 0;
        for (std::size_t i = 0; i < batch.queries.size(); ++i) {
            for (std::size_t j = 0; j < batch.positives.size(); ++j) {
                const double c =
                    cosine_sim(batch.queries[i], batch.positives[j]);
                if (i == j) {
                    pos_sum += c;
                } else {
                    neg_sum += c;
                    ++neg_count;
                }
            }
        }

        const auto loss = mrl_pair_loss(
            [&](const losses::PairBatch& b) {
                return losses::info_nce_in_batch(b, cfg.tau);
            },
            batch, cfg.mrl_dims(), weights);

        grads.zero();
        for (std::size_t i = 0; i < batch.queries.size(); ++i) {
            encode_backward(params, *q_toks[i], loss.grad_queries[i], grads);
            encode_backward(params, *p_toks[i], loss.grad_positives[i],
                            grads);
        }
        const double lr = warmup_lr(step, cfg);
        optimizer_step(params, grads, state, lr, cfg.weight_decay);

        StepMetrics m;
        m.step = step;
        m.loss_total = loss.value;
        m.loss_retri = loss.value;
        m.loss_sts = 0.0;
        m.lr = lr;
        m.pos_score_mean =
            pos_sum / static_cast<double>(batch.queries.size());
        m.neg_score_mean =
            neg_count == 0 ? 0.0
                           : neg_sum / static_cast<double>(neg_count);
        m.replacements = 0;
        metrics.push_back(m);
    }
    return metrics;
}

FinetuneResult finetune_loop(const TrainConfig& cfg,
                             std::vector<miner::RetrievalExample>& dataset,
                             const std::vector<data::StsRecord>& sts_data,
                             const data::Corpus& corpus, EncoderParams& params,
                             const TraceSink& trace) {
    validate_config(cfg);
    if (dataset.empty()) {
        throw EmptyInput("finetune_loop: no retrieval examples");
    }
    if (sts_data.empty()) {
        throw EmptyInput("finetune_loop: no sts data");
    }
    const std::size_t n_neg = dataset[0].mining.n_neg;
    for (const auto& example : dataset) {
        if (example.mining.installed_negative_ids.empty()) {
            throw EmptyNegatives(
                "finetune_loop: run initial mining before fine-tuning");
        }
        if (example.mining.n_neg != n_neg) {
            throw ShardMismatch("finetune_loop: uneven n_neg across examples");
        }
    }
    if (n_neg % cfg.n_workers != 0) {
        throw IndivisibleCount("finetune_loop: n_neg " + std::to_string(n_neg) +
                               " not divisible by n_workers " +
                               std::to_string(cfg.n_workers));
    }

    const auto corpus_tokens = tokenize_corpus(corpus,
                                               params.config.tokenizer);
    std::vector<std::vector<std::uint32_t>> query_tokens;
    query_tokens.reserve(dataset.size());
    for (const auto& example : dataset) {
        query_tokens.push_back(
            tokenize(example.query, params.config.tokenizer));
    }
    std::vector<std::vector<std::uint32_t>> sts_a_tokens;
    std::vector<std::vector<std::uint32_t>> sts_b_tokens;
    sts_a_tokens.reserve(sts_data.size());
    sts_b_tokens.reserve(sts_data.size());
    for (const auto& record : sts_data) {
        sts_a_tokens.push_back(
            tokenize(record.text_a, params.config.tokenizer));
        sts_b_tokens.push_back(
            tokenize(record.text_b, params.config.tokenizer));
    }

    const auto weights = uniform_weights(cfg.mrl_dims().size());
    auto state = make_optimizer_state(params.config);
    auto grads = make_grads(params.config);
    EpochSampler retrieval_sampler(dataset.size(), cfg.retrieval_batch,
                                   mix_seed(cfg.seed, kStreamRetrieval));
    EpochSampler sts_sampler(sts_data.size(), cfg.sts_batch,
                             mix_seed(cfg.seed, kStreamSts));

    FinetuneResult result;
    result.metrics.reserve(cfg.total_steps);
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        std::size_t replacements = 0;
        if (step > 0 && step % cfg.miner.check_interval == 0) {
            auto pass =
                miner::run_mining_pass(params, dataset, corpus, step,
                                       cfg.miner);
            replacements = pass.replacements.size();
            result.ledger.insert(result.ledger.end(), pass.ledger.begin(),
                                 pass.ledger.end());
        }

        const auto r_indices = retrieval_sampler.next_batch();
        const auto s_indices = sts_sampler.next_batch();
        auto rb = build_retrieval_batch(params, dataset, r_indices, corpus,
                                        corpus_tokens, query_tokens,
                                        cfg.n_workers);
        auto sb = build_sts_batch(params, sts_data, s_indices, sts_a_tokens,
                                  sts_b_tokens);

        const auto loss =
            mrl_cbb_total(rb.batch, sb.batch, cfg.tau, cfg.beta, cfg.cbb_norm,
                          cfg.mrl_dims(), weights);

        if (trace) {
            for (const auto& s : rb.batch.shards) {
                const auto partial =
                    shard::worker_partial(s, rb.batch.queries, cfg.tau);
                trace(step, partial.worker_id, partial.per_query_logsumexp);
            }
            // The STS task is one more logical worker whose partial is the
            // CoSENT value.
            trace(step, rb.batch.shards.size(), {loss.sts_value});
        }

        grads.zero();
        backprop_retrieval(params, rb, loss.retrieval, cfg.n_workers, grads);
        backprop_sts(params, sb, loss.sts, grads);
        const double lr = warmup_lr(step, cfg);
        optimizer_step(params, grads, state, lr, cfg.weight_decay);

        StepMetrics m;
        m.step = step;
        m.loss_total = loss.value;
        m.loss_retri = loss.retrieval_value;
        m.loss_sts = loss.sts_value;
        m.lr = lr;
        m.pos_score_mean = rb.pos_score_mean;
        m.neg_score_mean = rb.neg_score_mean;
        m.replacements = replacements;
        result.metrics.push_back(m);
    }
    result.updates = state.step_count;
    return result;
}

RunMetrics sequential_baseline_loop(
    const TrainConfig& cfg, std::vector<miner::RetrievalExample>& dataset,
    const std::vector<data::StsRecord>& sts_data, const data::Corpus& corpus,
    EncoderParams& params) {
    validate_config(cfg);
    if (dataset.empty() || sts_data.empty()) {
        throw EmptyInput("sequential_baseline_loop: empty data");
    }
    for (const auto& example : dataset) {
        if (example.mining.installed_negative_ids.empty()) {
            throw EmptyNegatives(
                "sequential_baseline_loop: negatives not installed");
        }
    }

    const auto corpus_tokens = tokenize_corpus(corpus,
                                               params.config.tokenizer);
    std::vector<std::vector<std::uint32_t>> query_tokens;
    query_tokens.reserve(dataset.size());
    for (const auto& example : dataset) {
        query_tokens.push_back(
            tokenize(example.query, params.config.tokenizer));
    }
    std::vector<std::vector<std::uint32_t>> sts_a_tokens;
    std::vector<std::vector<std::uint32_t>> sts_b_tokens;
    for (const auto& record : sts_data) {
        sts_a_tokens.push_back(
            tokenize(record.text_a, params.config.tokenizer));
        sts_b_tokens.push_back(
            tokenize(record.text_b, params.config.tokenizer));
    }

    const auto weights = uniform_weights(cfg.mrl_dims().size());
    auto state = make_optimizer_state(params.config);
    auto grads = make_grads(params.config);
    // Same sampling streams as the combined arm: both arms see identical
    // batches at every step, only the update rule differs.
    EpochSampler retrieval_sampler(dataset.size(), cfg.retrieval_batch,
                                   mix_seed(cfg.seed, kStreamRetrieval));
    EpochSampler sts_sampler(sts_data.size(), cfg.sts_batch,
                             mix_seed(cfg.seed, kStreamSts));
    Rng task_rng(mix_seed(cfg.seed, kStreamTaskChoice));

    RunMetrics metrics;
    metrics.reserve(cfg.total_steps);
    for (std::size_t step = 0; step < cfg.total_steps; ++step) {
        const auto r_indices = retrieval_sampler.next_batch();
        const auto s_indices = sts_sampler.next_batch();
        // Explicit-negative InfoNCE: a single shard holding all negatives.
        auto rb = build_retrieval_batch(params, dataset, r_indices, corpus,
                                        corpus_tokens, query_tokens, 1);
        auto sb = build_sts_batch(params, sts_data, s_indices, sts_a_tokens,
                                  sts_b_tokens);

        const auto retri_loss =
            mrl_retrieval_loss(rb.batch, cfg.tau, cfg.cbb_norm,
                               cfg.mrl_dims(), weights);
        const auto sts_loss =
            mrl_cosent_loss(sb.batch, cfg.tau, cfg.mrl_dims(), weights);

        const bool pick_sts = task_rng.uniform() < cfg.sts_task_prob;
        grads.zero();
        if (pick_sts) {
            backprop_sts(params, sb, sts_loss, grads);
        } else {
            backprop_retrieval(params, rb, retri_loss, 1, grads);
        }
        const double lr = warmup_lr(step, cfg);
        optimizer_step(params, grads, state, lr, cfg.weight_decay);

        StepMetrics m;
        m.step = step;
        m.loss_total = retri_loss.value + cfg.beta * sts_loss.value;
        m.loss_retri = retri_loss.value;
        m.loss_sts = sts_loss.value;
        m.lr = lr;
        m.pos_score_mean = rb.pos_score_mean;
        m.neg_score_mean = rb.neg_score_mean;
        m.replacements = 0;
        metrics.push_back(m);
    }
    return metrics;
}

namespace {

constexpr char kCheckpointMagic[8] = {'E', 'M', 'B', 'R',
                                      'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n,
                const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) {
        throw ShapeMismatch(std::string("checkpoint: truncated while reading ") +
                            what);
    }
}

}  // namespace

void save_checkpoint(const EncoderParams& params, const TrainConfig& cfg,
                     const std::filesystem::path& path) {
    const std::string header = config_to_json_text(cfg);
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write checkpoint " + path.string());
        }
        write_bytes(out, kCheckpointMagic, sizeof kCheckpointMagic);
        write_bytes(out, &kCheckpointVersion, sizeof kCheckpointVersion);
        const std::uint64_t header_size = header.size();
        write_bytes(out, &header_size, sizeof header_size);
        write_bytes(out, header.data(), header.size());
        const std::uint64_t n_emb = params.embedding_table.values.size();
        write_bytes(out, &n_emb, sizeof n_emb);
        write_bytes(out, params.embedding_table.values.data(),
                    n_emb * sizeof(double));
        const std::uint64_t n_proj = params.projection.values.size();
        write_bytes(out, &n_proj, sizeof n_proj);
        write_bytes(out, params.projection.values.data(),
                    n_proj * sizeof(double));
        if (!out) {
            throw IoError("checkpoint write failed: " + path.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    char magic[sizeof kCheckpointMagic];
    read_bytes(in, magic, sizeof magic, "magic");
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
        throw IoError("checkpoint: bad magic in " + path.string());
    }
    std::uint32_t version = 0;
    read_bytes(in, &version, sizeof version, "version");
    if (version != kCheckpointVersion) {
        throw VersionMismatch("checkpoint: version " +
                              std::to_string(version) + " unsupported");
    }
    std::uint64_t header_size = 0;
    read_bytes(in, &header_size, sizeof header_size, "header size");
    if (header_size > (1ULL << 24)) {
        throw ShapeMismatch("checkpoint: absurd header size");
    }
    std::string header(header_size, '\0');
    read_bytes(in, header.data(), header_size, "header");

    Checkpoint ckpt;
    ckpt.config = config_from_json_text(header);
    ckpt.params.config = ckpt.config.encoder;
    const auto& enc = ckpt.config.encoder;
    ckpt.params.embedding_table =
        DenseMatrix(enc.tokenizer.vocab_size, enc.d_model);
    ckpt.params.projection = DenseMatrix(enc.d_model, enc.output_dim);

    std::uint64_t n_emb = 0;
    read_bytes(in, &n_emb, sizeof n_emb, "embedding count");
    if (n_emb != ckpt.params.embedding_table.values.size()) {
        throw ShapeMismatch("checkpoint: embedding array size disagrees");
    }
    read_bytes(in, ckpt.params.embedding_table.values.data(),
               n_emb * sizeof(double), "embedding table");
    std::uint64_t n_proj = 0;
    read_bytes(in, &n_proj, sizeof n_proj, "projection count");
    if (n_proj != ckpt.params.projection.values.size()) {
        throw ShapeMismatch("checkpoint: projection array size disagrees");
    }
    read_bytes(in, ckpt.params.projection.values.data(),
               n_proj * sizeof(double), "projection");
    return ckpt;
}

}  // namespace ember::trainer

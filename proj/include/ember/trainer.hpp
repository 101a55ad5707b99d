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
#include <span>
#include <string>
#include <vector>

#include "ember/data.hpp"
#include "ember/encoder.hpp"
#include "ember/losses.hpp"
#include "ember/miner.hpp"

namespace ember::trainer {

struct TrainConfig {
    double lr = 1e-5;
    double warmup_ratio = 0.05;
    double weight_decay = 0.001;
    std::size_t pretrain_batch = 8;
    std::size_t retrieval_batch = 4;
    std::size_t sts_batch = 32;
    double tau = 0.05;
    double beta = 0.8;
    std::size_t n_workers = 4;
    std::size_t n_neg = 8;
    losses::CbbNorm cbb_norm = losses::CbbNorm::queries;
    double sts_task_prob = 0.5;  // sequential baseline only
    std::size_t total_steps = 0;
    std::uint64_t seed = 42;
    miner::MinerConfig miner;
    EncoderConfig encoder;  // encoder.mrl_dims is the MRL dimension list

    const std::vector<std::size_t>& mrl_dims() const {
        return encoder.mrl_dims;
    }
};

/// Throws SchemaViolation when an invariant is broken (rates positive,
/// warmup ratio in (0,1), mrl_dims sorted ascending and ending at the
/// output dimension, ...).
void validate_config(const TrainConfig& cfg);

TrainConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const TrainConfig& cfg);
TrainConfig load_config(const std::filesystem::path& path);

/// Applies the fields present in `text` on top of `base` (missing fields
/// keep the base value), then validates. Used to layer a config file over a
/// checkpoint's stored configuration.
TrainConfig apply_config_overlay(TrainConfig base, const std::string& text);

/// AdamW moments, one accumulator pair per parameter tensor.
struct OptimizerState {
    DenseMatrix m_embedding;
    DenseMatrix v_embedding;
    DenseMatrix m_projection;
    DenseMatrix v_projection;
    std::size_t step_count = 0;
};

OptimizerState make_optimizer_state(const EncoderConfig& cfg);

/// Decoupled weight decay (params scaled by 1 - lr*wd independent of the
/// gradient), then bias-corrected Adam. Throws NonFiniteGradient.
void optimizer_step(EncoderParams& params, const EncoderGrads& grads,
                    OptimizerState& state, double lr, double weight_decay);

/// Linear ramp 0 -> lr over ceil(warmup_ratio * total_steps) steps, then
/// constant. Continuous at the boundary.
double warmup_lr(std::size_t step, const TrainConfig& cfg);

/// Matryoshka wrapper: sum_d w_d * loss(batch truncated to prefix dim d),
/// gradients chained through the prefix renormalization back to full
/// dimension. A one-hot weight on the full dimension is the plain loss.
losses::PairLossOutput mrl_pair_loss(
    const std::function<losses::PairLossOutput(const losses::PairBatch&)>&
        loss_fn,
    const losses::PairBatch& batch, std::span<const std::size_t> dims,
    std::span<const double> weights);

losses::ShardedLossOutput mrl_retrieval_loss(
    const losses::ShardedRetrievalBatch& batch, double tau,
    losses::CbbNorm norm, std::span<const std::size_t> dims,
    std::span<const double> weights);

losses::StsLossOutput mrl_cosent_loss(const losses::StsBatch& batch,
                                      double tau,
                                      std::span<const std::size_t> dims,
                                      std::span<const double> weights);

losses::CbbLossOutput mrl_cbb_total(const losses::ShardedRetrievalBatch& retri,
                                    const losses::StsBatch& sts, double tau,
                                    double beta, losses::CbbNorm norm,
                                    std::span<const std::size_t> dims,
                                    std::span<const double> weights);

struct StepMetrics {
    std::size_t step = 0;
    double loss_total = 0.0;
    double loss_retri = 0.0;
    double loss_sts = 0.0;
    double lr = 0.0;
    double pos_score_mean = 0.0;
    double neg_score_mean = 0.0;
    std::size_t replacements = 0;
};

using RunMetrics = std::vector<StepMetrics>;

void write_metrics_csv(const RunMetrics& metrics,
                       const std::filesystem::path& path);
RunMetrics read_metrics_csv(const std::filesystem::path& path);

/// Pretraining: in-batch InfoNCE with MRL over shuffled pair batches.
RunMetrics pretrain_loop(const TrainConfig& cfg,
                         const std::vector<data::PairRecord>& pairs,
                         EncoderParams& params);

struct FinetuneResult {
    RunMetrics metrics;
    std::vector<miner::LedgerEntry> ledger;
    // optimizer invocations; equals total_steps (one update per cycle,
    // regardless of shard count and mining passes)
    std::size_t updates = 0;
};

/// Optional per-aggregation trace sink: (step, worker_id, partials).
using TraceSink =
    std::function<void(std::size_t, std::size_t, const std::vector<double>&)>;

/// Fine-tuning with the combined sharded-retrieval + weighted STS loss.
/// One parameter update per step; a mining pass runs before the update
/// every check_interval steps (when the interval is within total_steps).
FinetuneResult finetune_loop(const TrainConfig& cfg,
                             std::vector<miner::RetrievalExample>& dataset,
                             const std::vector<data::StsRecord>& sts_data,
                             const data::Corpus& corpus, EncoderParams& params,
                             const TraceSink& trace = nullptr);

/// Comparison arm: every step randomly picks one task and updates on that
/// loss alone. Both task losses are still evaluated for the metrics so the
/// schema matches the combined run. No mining.
RunMetrics sequential_baseline_loop(
    const TrainConfig& cfg, std::vector<miner::RetrievalExample>& dataset,
    const std::vector<data::StsRecord>& sts_data, const data::Corpus& corpus,
    EncoderParams& params);

struct Checkpoint {
    EncoderParams params;
    TrainConfig config;
};

/// Versioned binary container, lossless float64 round-trip, atomic write.
void save_checkpoint(const EncoderParams& params, const TrainConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ember::trainer

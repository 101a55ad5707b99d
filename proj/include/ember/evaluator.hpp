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

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ember/data.hpp"
#include "ember/encoder.hpp"

namespace ember::evaluator {

struct EvalResult {
    std::string metric;
    double value = 0.0;
    std::optional<std::size_t> k;
    std::optional<std::size_t> dim;
};

std::string results_to_json_text(const std::vector<EvalResult>& results);

/// Fraction of queries whose gold passage lands in the top k by cosine.
/// Exact brute-force ranking; ties break toward the lower corpus id.
double recall_at_k(const std::vector<std::string>& queries,
                   const std::vector<std::size_t>& gold_ids,
                   const data::Corpus& corpus, const EncoderParams& params,
                   std::size_t k);

/// Same ranking restricted to embedding prefix dim d.
double recall_at_k_dim(const std::vector<std::string>& queries,
                       const std::vector<std::size_t>& gold_ids,
                       const data::Corpus& corpus, const EncoderParams& params,
                       std::size_t k, std::size_t d);

/// Spearman rank correlation with average ranks on ties.
double spearman(std::span<const double> predicted,
                std::span<const double> labels);

/// recall@k per configured prefix dimension.
std::vector<EvalResult> mrl_sweep(const std::vector<std::string>& queries,
                                  const std::vector<std::size_t>& gold_ids,
                                  const data::Corpus& corpus,
                                  const EncoderParams& params,
                                  std::span<const std::size_t> mrl_dims,
                                  std::size_t k);

/// Cosine of each STS pair under the model, for Spearman against labels.
std::vector<double> predict_sts_cosines(
    const std::vector<data::StsRecord>& records, const EncoderParams& params);

}  // namespace ember::evaluator

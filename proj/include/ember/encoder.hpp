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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ember/numeric.hpp"

namespace ember {

/// Hashing tokenizer: whitespace split, optional ASCII case folding, then a
/// stable 64-bit hash into vocab_size buckets. No vocabulary files.
struct TokenizerConfig {
    std::uint32_t vocab_size = 32768;
    bool lowercase = true;
};

struct EncoderConfig {
    TokenizerConfig tokenizer;
    std::size_t d_model = 64;
    std::size_t output_dim = 128;
    std::vector<std::size_t> mrl_dims = {16, 32, 64, 128};
};

/// Toy encoder parameters: embed -> mean-pool -> project -> L2-normalize.
struct EncoderParams {
    EncoderConfig config;
    DenseMatrix embedding_table;  // vocab_size x d_model
    DenseMatrix projection;       // d_model x output_dim
};

struct EncodedText {
    DenseVector vector;  // unit norm, dim output_dim
    std::size_t token_count = 0;
};

struct EncoderGrads {
    DenseMatrix embedding_table;
    DenseMatrix projection;

    void zero();
};

std::vector<std::uint32_t> tokenize(std::string_view text,
                                    const TokenizerConfig& cfg);

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed);

EncoderGrads make_grads(const EncoderConfig& cfg);

EncodedText encode(const EncoderParams& params,
                   std::span<const std::uint32_t> tokens);

EncodedText encode_text(const EncoderParams& params, std::string_view text);

/// First d coordinates, renormalized. d == full dim returns the vector
/// unchanged (exact identity, no renormalization).
DenseVector encode_prefix(const EncodedText& e, std::size_t d);
DenseVector vector_prefix(const DenseVector& v, std::size_t d);

/// Accumulates d loss / d v restricted through the prefix map into
/// grad_full (first d coordinates touched only). Pass d == v.dim() for the
/// identity chain.
void prefix_backward(const DenseVector& v, std::size_t d,
                     const DenseVector& grad_prefix, DenseVector& grad_full);

/// Analytic backward through normalize(project(mean_pool(embed(tokens)))).
/// Gradients accumulate into `accum`; only embedding rows named by `tokens`
/// are touched.
void encode_backward(const EncoderParams& params,
                     std::span<const std::uint32_t> tokens,
                     const DenseVector& upstream_grad, EncoderGrads& accum);

EncoderGrads encode_backward(const EncoderParams& params,
                             std::span<const std::uint32_t> tokens,
                             const DenseVector& upstream_grad);

// Flat parameter views for finite-difference certification and checkpoints.
std::size_t param_count(const EncoderConfig& cfg);
DenseVector flatten_params(const EncoderParams& params);
void assign_params_flat(EncoderParams& params, const DenseVector& flat);
DenseVector flatten_grads(const EncoderGrads& grads);

}  // namespace ember

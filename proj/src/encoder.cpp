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

#include "ember/encoder.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "ember/kernels.hpp"
#include "ember/rng.hpp"

namespace ember {

namespace {

constexpr double kDegenerateNormFloor = 1e-12;

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// Mean pooling over embedding rows. Token ids are visited in sorted order so
// pooling is exactly permutation invariant.
DenseVector pool(const EncoderParams& params,
                 std::span<const std::uint32_t> tokens) {
    const auto& table = params.embedding_table;
    std::vector<std::uint32_t> sorted(tokens.begin(), tokens.end());
    std::sort(sorted.begin(), sorted.end());
    DenseVector h(params.config.d_model);
    for (std::uint32_t t : sorted) {
        if (t >= table.rows) {
            throw TokenIdOutOfRange("encode: token id " + std::to_string(t) +
                                    " >= vocab size " +
                                    std::to_string(table.rows));
        }
        kernels::axpy(1.0, table.row(t), h.data(), h.dim());
    }
    kernels::scale(h.data(), 1.0 / static_cast<double>(sorted.size()),
                   h.dim());
    return h;
}

}  // namespace

void EncoderGrads::zero() {
    std::fill(embedding_table.values.begin(), embedding_table.values.end(),
              0.0);
    std::fill(projection.values.begin(), projection.values.end(), 0.0);
}

std::vector<std::uint32_t> tokenize(std::string_view text,
                                    const TokenizerConfig& cfg) {
    std::vector<std::uint32_t> ids;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            ids.push_back(static_cast<std::uint32_t>(fnv1a64(word) %
                                                     cfg.vocab_size));
            word.clear();
        }
    };
    for (char ch : text) {
        const auto uc = static_cast<unsigned char>(ch);
        if (std::isspace(uc)) {
            flush();
        } else {
            word.push_back(cfg.lowercase
                               ? static_cast<char>(std::tolower(uc))
                               : ch);
        }
    }
    flush();
    if (ids.empty()) {
        throw EmptyText("tokenize: text empty after whitespace trim");
    }
    return ids;
}

EncoderParams init_params(const EncoderConfig& cfg, std::uint64_t seed) {
    EncoderParams params;
    params.config = cfg;
    params.embedding_table = DenseMatrix(cfg.tokenizer.vocab_size, cfg.d_model);
    params.projection = DenseMatrix(cfg.d_model, cfg.output_dim);
    const double emb_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    Rng emb_rng(mix_seed(seed, 0x01));
    for (double& x : params.embedding_table.values) {
        x = emb_std * emb_rng.normal();
    }
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    Rng proj_rng(mix_seed(seed, 0x02));
    for (double& x : params.projection.values) {
        x = proj_std * proj_rng.normal();
    }
    return params;
}

EncoderGrads make_grads(const EncoderConfig& cfg) {
    EncoderGrads g;
    g.embedding_table = DenseMatrix(cfg.tokenizer.vocab_size, cfg.d_model);
    g.projection = DenseMatrix(cfg.d_model, cfg.output_dim);
    return g;
}

EncodedText encode(const EncoderParams& params,
                   std::span<const std::uint32_t> tokens) {
    if (tokens.empty()) {
        throw EmptyInput("encode: empty token sequence");
    }
    const DenseVector h = pool(params, tokens);
    const auto& proj = params.projection;
    DenseVector z(params.config.output_dim);
    for (std::size_t i = 0; i < proj.rows; ++i) {
        kernels::axpy(h[i], proj.row(i), z.data(), z.dim());
    }
    const double norm = l2_norm(z);
    if (norm < kDegenerateNormFloor) {
        throw DegenerateNorm("encode: pre-normalization norm below 1e-12");
    }
    kernels::scale(z.data(), 1.0 / norm, z.dim());
    return EncodedText{std::move(z), tokens.size()};
}

EncodedText encode_text(const EncoderParams& params, std::string_view text) {
    const auto tokens = tokenize(text, params.config.tokenizer);
    return encode(params, tokens);
}

DenseVector vector_prefix(const DenseVector& v, std::size_t d) {
    if (d == 0 || d > v.dim()) {
        throw InvalidDim("prefix dim " + std::to_string(d) +
                         " out of range for dim " + std::to_string(v.dim()));
    }
    if (d == v.dim()) {
        return v;
    }
    DenseVector p(std::vector<double>(v.values.begin(),
                                      v.values.begin() + d));
    const double norm = l2_norm(p);
    if (norm < kDegenerateNormFloor) {
        throw DegenerateNorm("prefix: first " + std::to_string(d) +
                             " coordinates have norm below 1e-12");
    }
    kernels::scale(p.data(), 1.0 / norm, d);
    return p;
}

DenseVector encode_prefix(const EncodedText& e, std::size_t d) {
    return vector_prefix(e.vector, d);
}

void prefix_backward(const DenseVector& v, std::size_t d,
                     const DenseVector& grad_prefix, DenseVector& grad_full) {
    if (grad_prefix.dim() != d || grad_full.dim() != v.dim() ||
        d > v.dim()) {
        throw DimensionMismatch("prefix_backward: dims disagree");
    }
    if (d == v.dim()) {
        kernels::axpy(1.0, grad_prefix.data(), grad_full.data(), d);
        return;
    }
    const double norm2 = kernels::squared_norm(v.data(), d);
    const double norm = std::sqrt(norm2);
    if (norm < kDegenerateNormFloor) {
        throw DegenerateNorm("prefix_backward: degenerate prefix norm");
    }
    // p = u / |u| with u the first d coords:
    // dL/du = (g - (g . p) p) / |u|
    const double gp =
        kernels::dot(grad_prefix.data(), v.data(), d) / norm;  // g . p
    for (std::size_t k = 0; k < d; ++k) {
        const double pk = v[k] / norm;
        grad_full[k] += (grad_prefix[k] - gp * pk) / norm;
    }
}

void encode_backward(const EncoderParams& params,
                     std::span<const std::uint32_t> tokens,
                     const DenseVector& upstream_grad, EncoderGrads& accum) {
    if (tokens.empty()) {
        throw EmptyInput("encode_backward: empty token sequence");
    }
    if (upstream_grad.dim() != params.config.output_dim ||
        accum.projection.rows != params.projection.rows ||
        accum.projection.cols != params.projection.cols ||
        accum.embedding_table.rows != params.embedding_table.rows ||
        accum.embedding_table.cols != params.embedding_table.cols) {
        throw DimensionMismatch("encode_backward: shapes disagree");
    }
    const DenseVector h = pool(params, tokens);
    const auto& proj = params.projection;
    DenseVector z(params.config.output_dim);
    for (std::size_t i = 0; i < proj.rows; ++i) {
        kernels::axpy(h[i], proj.row(i), z.data(), z.dim());
    }
    const double norm = l2_norm(z);
    if (norm < kDegenerateNormFloor) {
        throw DegenerateNorm("encode_backward: degenerate norm");
    }
    // e = z/|z|; dL/dz = (g - (g . e) e) / |z|
    DenseVector e = z;
    kernels::scale(e.data(), 1.0 / norm, e.dim());
    const double ge = kernels::dot(upstream_grad.data(), e.data(), e.dim());
    DenseVector gz(e.dim());
    for (std::size_t j = 0; j < e.dim(); ++j) {
        gz[j] = (upstream_grad[j] - ge * e[j]) / norm;
    }
    // z = P^T h: dL/dP[i][:] += h[i] * gz, dL/dh[i] = P[i][:] . gz
    DenseVector gh(proj.rows);
    for (std::size_t i = 0; i < proj.rows; ++i) {
        kernels::axpy(h[i], gz.data(), accum.projection.row(i), gz.dim());
        gh[i] = kernels::dot(proj.row(i), gz.data(), gz.dim());
    }
    // h = mean of embedding rows; duplicates accumulate their share.
    std::vector<std::uint32_t> sorted(tokens.begin(), tokens.end());
    std::sort(sorted.begin(), sorted.end());
    const double inv_count = 1.0 / static_cast<double>(sorted.size());
    for (std::uint32_t t : sorted) {
        kernels::axpy(inv_count, gh.data(), accum.embedding_table.row(t),
                      gh.dim());
    }
}

EncoderGrads encode_backward(const EncoderParams& params,
                             std::span<const std::uint32_t> tokens,
                             const DenseVector& upstream_grad) {
    EncoderGrads grads = make_grads(params.config);
    encode_backward(params, tokens, upstream_grad, grads);
    return grads;
}

std::size_t param_count(const EncoderConfig& cfg) {
    return static_cast<std::size_t>(cfg.tokenizer.vocab_size) * cfg.d_model +
           cfg.d_model * cfg.output_dim;
}

DenseVector flatten_params(const EncoderParams& params) {
    DenseVector flat;
    flat.values.reserve(param_count(params.config));
    flat.values.insert(flat.values.end(),
                       params.embedding_table.values.begin(),
                       params.embedding_table.values.end());
    flat.values.insert(flat.values.end(), params.projection.values.begin(),
                       params.projection.values.end());
    return flat;
}

void assign_params_flat(EncoderParams& params, const DenseVector& flat) {
    const std::size_t n_emb = params.embedding_table.values.size();
    const std::size_t n_proj = params.projection.values.size();
    if (flat.dim() != n_emb + n_proj) {
        throw DimensionMismatch("assign_params_flat: size disagrees");
    }
    std::copy(flat.values.begin(), flat.values.begin() + n_emb,
              params.embedding_table.values.begin());
    std::copy(flat.values.begin() + n_emb, flat.values.end(),
              params.projection.values.begin());
}

DenseVector flatten_grads(const EncoderGrads& grads) {
    DenseVector flat;
    flat.values.reserve(grads.embedding_table.values.size() +
                        grads.projection.values.size());
    flat.values.insert(flat.values.end(),
                       grads.embedding_table.values.begin(),
                       grads.embedding_table.values.end());
    flat.values.insert(flat.values.end(), grads.projection.values.begin(),
                       grads.projection.values.end());
    return flat;
}

}  // namespace ember

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

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ember/numeric.hpp"
#include "ember/rng.hpp"

namespace ember::test {

extern std::string g_cli_path;
extern std::filesystem::path g_scratch_dir;

inline DenseVector random_vector(Rng& rng, std::size_t dim) {
    DenseVector v(dim);
    for (std::size_t i = 0; i < dim; ++i) {
        v[i] = rng.normal();
    }
    return v;
}

inline DenseVector random_unit_vector(Rng& rng, std::size_t dim) {
    DenseVector v = random_vector(rng, dim);
    const double norm = l2_norm(v);
    for (std::size_t i = 0; i < dim; ++i) {
        v[i] /= norm;
    }
    return v;
}

inline std::vector<DenseVector> random_vectors(Rng& rng, std::size_t count,
                                               std::size_t dim) {
    std::vector<DenseVector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        out.push_back(random_vector(rng, dim));
    }
    return out;
}

/// Flattens a list of equal-dim vectors so loss gradients can be certified
/// with the finite-difference oracle in one call.
inline DenseVector flatten(const std::vector<DenseVector>& vs) {
    DenseVector flat;
    for (const auto& v : vs) {
        flat.values.insert(flat.values.end(), v.values.begin(),
                           v.values.end());
    }
    return flat;
}

inline std::vector<DenseVector> unflatten(const DenseVector& flat,
                                          std::size_t count,
                                          std::size_t dim) {
    std::vector<DenseVector> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        DenseVector v(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            v[k] = flat[i * dim + k];
        }
        out.push_back(std::move(v));
    }
    return out;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
    const auto dir = g_scratch_dir / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace ember::test

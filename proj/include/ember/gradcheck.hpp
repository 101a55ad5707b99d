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
#include <string>
#include <vector>

namespace ember::gradcheck {

struct SuiteResult {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t seeds = 0;
    bool passed = false;
};

/// Certifies every analytic backward pass against central finite
/// differences: the three losses on raw embeddings, plus the full chains
/// through the encoder parameters and the matryoshka truncation. Each case
/// runs once per seed; the reported error is the worst over all seeds.
std::vector<SuiteResult> run_full_suite(std::size_t n_seeds, double h,
                                        double tol);

}  // namespace ember::gradcheck

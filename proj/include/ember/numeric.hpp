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
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "ember/errors.hpp"

namespace ember {

/// Dense float64 vector. All training math runs in float64 so analytic
/// gradients can be certified against central finite differences.
struct DenseVector {
    std::vector<double> values;

    DenseVector() = default;
    explicit DenseVector(std::size_t n) : values(n, 0.0) {}
    DenseVector(std::initializer_list<double> xs) : values(xs) {}
    explicit DenseVector(std::vector<double> xs) : values(std::move(xs)) {}

    std::size_t dim() const { return values.size(); }
    double* data() { return values.data(); }
    const double* data() const { return values.data(); }
    double& operator[](std::size_t i) { return values[i]; }
    double operator[](std::size_t i) const { return values[i]; }

    bool operator==(const DenseVector& other) const = default;
};

/// Row-major dense float64 matrix.
struct DenseMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c)
        : rows(r), cols(c), values(r * c, 0.0) {}

    double* row(std::size_t r) { return values.data() + r * cols; }
    const double* row(std::size_t r) const { return values.data() + r * cols; }
    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const {
        return values[r * cols + c];
    }

    bool operator==(const DenseMatrix& other) const = default;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    bool passed = false;
};

bool all_finite(std::span<const double> xs);

double l2_norm(const DenseVector& v);

/// Cosine similarity. Symmetric, scale-invariant, result in [-1, 1]
/// (clamped against rounding). Throws DimensionMismatch or ZeroVector.
double cosine_sim(const DenseVector& a, const DenseVector& b);

/// Accumulates upstream * d cos(a,b) / d{a,b} into grad_a / grad_b.
void cosine_sim_backward(const DenseVector& a, const DenseVector& b,
                         double upstream, DenseVector& grad_a,
                         DenseVector& grad_b);

/// log(sum(exp(xs))) with max subtraction; never overflows for |x| <= 700.
double logsumexp(std::span<const double> xs);

/// Central differences (f(x+h e_k) - f(x-h e_k)) / 2h per coordinate.
/// The independent oracle every analytic backward pass is checked against.
DenseVector finite_diff_grad(const std::function<double(const DenseVector&)>& f,
                             const DenseVector& x, double h);

/// Max relative error with the denominator floored at 1e-8 so near-zero
/// gradients compare sanely.
GradCheckReport check_gradient(const DenseVector& analytic,
                               const DenseVector& numeric, double tol);

}  // namespace ember

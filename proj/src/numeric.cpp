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

#include "ember/numeric.hpp"

#include <algorithm>
#include <cmath>

#include "ember/kernels.hpp"

namespace ember {

bool all_finite(std::span<const double> xs) {
    for (double x : xs) {
        if (!std::isfinite(x)) {
            return false;
        }
    }
    return true;
}

double l2_norm(const DenseVector& v) {
    return std::sqrt(kernels::squared_norm(v.data(), v.dim()));
}

double cosine_sim(const DenseVector& a, const DenseVector& b) {
    if (a.dim() != b.dim()) {
        throw DimensionMismatch("cosine_sim: dims " + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()));
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw ZeroVector("cosine_sim: zero-norm input");
    }
    const double c = kernels::dot(a.data(), b.data(), a.dim()) / (na * nb);
    return std::clamp(c, -1.0, 1.0);
}

void cosine_sim_backward(const DenseVector& a, const DenseVector& b,
                         double upstream, DenseVector& grad_a,
                         DenseVector& grad_b) {
    if (a.dim() != b.dim() || grad_a.dim() != a.dim() ||
        grad_b.dim() != b.dim()) {
        throw DimensionMismatch("cosine_sim_backward: dims disagree");
    }
    const std::size_t n = a.dim();
    const double na2 = kernels::squared_norm(a.data(), n);
    const double nb2 = kernels::squared_norm(b.data(), n);
    const double na = std::sqrt(na2);
    const double nb = std::sqrt(nb2);
    if (na == 0.0 || nb == 0.0) {
        throw ZeroVector("cosine_sim_backward: zero-norm input");
    }
    const double ab = kernels::dot(a.data(), b.data(), n);
    const double inv = 1.0 / (na * nb);
    const double c = ab * inv;
    // d cos / da = b/(|a||b|) - cos * a/|a|^2, symmetric in b.
    kernels::axpy(upstream * inv, b.data(), grad_a.data(), n);
    kernels::axpy(-upstream * c / na2, a.data(), grad_a.data(), n);
    kernels::axpy(upstream * inv, a.data(), grad_b.data(), n);
    kernels::axpy(-upstream * c / nb2, b.data(), grad_b.data(), n);
}

double logsumexp(std::span<const double> xs) {
    if (xs.empty()) {
        throw EmptyInput("logsumexp: empty input");
    }
    const double m = *std::max_element(xs.begin(), xs.end());
    double acc = 0.0;
    for (double x : xs) {
        acc += std::exp(x - m);
    }
    return m + std::log(acc);
}

DenseVector finite_diff_grad(
    const std::function<double(const DenseVector&)>& f, const DenseVector& x,
    double h) {
    DenseVector grad(x.dim());
    DenseVector probe = x;
    for (std::size_t k = 0; k < x.dim(); ++k) {
        const double orig = probe[k];
        probe[k] = orig + h;
        const double up = f(probe);
        probe[k] = orig - h;
        const double down = f(probe);
        probe[k] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NonFiniteEvaluation("finite_diff_grad: f not finite near x");
        }
        grad[k] = (up - down) / (2.0 * h);
    }
    return grad;
}

GradCheckReport check_gradient(const DenseVector& analytic,
                               const DenseVector& numeric, double tol) {
    if (analytic.dim() != numeric.dim()) {
        throw DimensionMismatch("check_gradient: dims disagree");
    }
    GradCheckReport report;
    for (std::size_t k = 0; k < analytic.dim(); ++k) {
        const double denom =
            std::max({std::abs(analytic[k]), std::abs(numeric[k]), 1e-8});
        const double rel = std::abs(analytic[k] - numeric[k]) / denom;
        if (rel > report.max_relative_error) {
            report.max_relative_error = rel;
            report.worst_index = k;
        }
    }
    report.passed = report.max_relative_error <= tol;
    return report;
}

}  // namespace ember

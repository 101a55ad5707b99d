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
#include <string_view>

namespace ember::kernels {

/// Float64 inner-loop kernels with a scalar reference implementation and an
/// AVX2/FMA variant selected at runtime. A given backend is deterministic:
/// the same inputs always produce bit-identical outputs. Backends may differ
/// from each other in the last ulp (reassociation, fused multiply-add).
enum class Backend { scalar, avx2 };

Backend active_backend();
std::string_view backend_name();

/// Force a backend. Throws ember::Error if the CPU does not support it.
/// Intended for tests and the EMBER_KERNELS=scalar|avx2 override.
void force_backend(Backend b);

bool cpu_supports_avx2();

double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* x, std::size_t n);

/// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);

/// x[i] *= alpha
void scale(double* x, double alpha, std::size_t n);

/// Fused AdamW element step over one parameter array.
/// Decoupled decay is applied first (p *= 1 - lr*wd), then the
/// bias-corrected adaptive moment update. bias_corr1/2 are 1 - beta^t.
void adamw_update(double* p, const double* g, double* m, double* v,
                  std::size_t n, double lr, double weight_decay, double beta1,
                  double beta2, double bias_corr1, double bias_corr2,
                  double eps);

namespace detail {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t);
    void (*axpy)(double, const double*, double*, std::size_t);
    void (*scale)(double*, double, std::size_t);
    void (*adamw)(double*, const double*, double*, double*, std::size_t,
                  double, double, double, double, double, double, double);
};

const KernelTable& scalar_table();
const KernelTable& avx2_table();  // only valid when compiled in and CPU-supported

}  // namespace detail

}  // namespace ember::kernels

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

// Runtime backend selection. AVX2/FMA is used when the CPU supports both,
// unless EMBER_KERNELS=scalar|avx2 overrides the choice.

#include <cstdlib>
#include <string>

#include "ember/errors.hpp"
#include "ember/kernels.hpp"

namespace ember::kernels {

namespace {

bool avx2_compiled_in() {
#if defined(__x86_64__) || defined(_M_X64)
    return true;
#else
    return false;
#endif
}

struct Dispatch {
    Backend backend;
    const detail::KernelTable* table;
};

Dispatch select_initial() {
    bool want_avx2 = cpu_supports_avx2();
    if (const char* env = std::getenv("EMBER_KERNELS")) {
        const std::string v(env);
        if (v == "scalar") {
            want_avx2 = false;
        } else if (v == "avx2") {
            if (!cpu_supports_avx2()) {
                throw Error("EMBER_KERNELS=avx2 but the CPU lacks AVX2/FMA");
            }
            want_avx2 = true;
        } else {
            throw Error("unknown EMBER_KERNELS value: " + v);
        }
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (want_avx2) {
        return {Backend::avx2, &detail::avx2_table()};
    }
#endif
    return {Backend::scalar, &detail::scalar_table()};
}

Dispatch& dispatch() {
    static Dispatch d = select_initial();
    return d;
}

}  // namespace

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return avx2_compiled_in() && __builtin_cpu_supports("avx2") &&
           __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Backend active_backend() { return dispatch().backend; }

std::string_view backend_name() {
    return dispatch().backend == Backend::avx2 ? "avx2" : "scalar";
}

void force_backend(Backend b) {
    if (b == Backend::avx2) {
        if (!cpu_supports_avx2()) {
            throw Error("AVX2 backend requested but not supported");
        }
#if defined(__x86_64__) || defined(_M_X64)
        dispatch() = {Backend::avx2, &detail::avx2_table()};
#endif
        return;
    }
    dispatch() = {Backend::scalar, &detail::scalar_table()};
}

double dot(const double* a, const double* b, std::size_t n) {
    return dispatch().table->dot(a, b, n);
}

double squared_norm(const double* x, std::size_t n) {
    return dispatch().table->dot(x, x, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
    dispatch().table->axpy(alpha, x, y, n);
}

void scale(double* x, double alpha, std::size_t n) {
    dispatch().table->scale(x, alpha, n);
}

void adamw_update(double* p, const double* g, double* m, double* v,
                  std::size_t n, double lr, double weight_decay, double beta1,
                  double beta2, double bias_corr1, double bias_corr2,
                  double eps) {
    dispatch().table->adamw(p, g, m, v, n, lr, weight_decay, beta1, beta2,
                            bias_corr1, bias_corr2, eps);
}

}  // namespace ember::kernels

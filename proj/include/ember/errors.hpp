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

#include <stdexcept>
#include <string>

namespace ember {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define EMBER_DEFINE_ERROR(Name)                 \
    struct Name : Error {                        \
        using Error::Error;                      \
    }

// numeric core
EMBER_DEFINE_ERROR(DimensionMismatch);
EMBER_DEFINE_ERROR(ZeroVector);
EMBER_DEFINE_ERROR(EmptyInput);
EMBER_DEFINE_ERROR(NonFiniteEvaluation);

// encoder
EMBER_DEFINE_ERROR(EmptyText);
EMBER_DEFINE_ERROR(TokenIdOutOfRange);
EMBER_DEFINE_ERROR(DegenerateNorm);
EMBER_DEFINE_ERROR(InvalidDim);

// losses / shard simulator
EMBER_DEFINE_ERROR(InvalidTemperature);
EMBER_DEFINE_ERROR(ShardMismatch);
EMBER_DEFINE_ERROR(IndivisibleCount);
EMBER_DEFINE_ERROR(MissingWorker);

// miner
EMBER_DEFINE_ERROR(EmptyNegatives);
EMBER_DEFINE_ERROR(CorpusTooSmall);

// data
EMBER_DEFINE_ERROR(ParseError);
EMBER_DEFINE_ERROR(SchemaViolation);
EMBER_DEFINE_ERROR(ScorerOutOfRange);
EMBER_DEFINE_ERROR(InsufficientLabels);
EMBER_DEFINE_ERROR(SingletonLabel);

// trainer
EMBER_DEFINE_ERROR(NonFiniteGradient);
EMBER_DEFINE_ERROR(IoError);
EMBER_DEFINE_ERROR(VersionMismatch);
EMBER_DEFINE_ERROR(ShapeMismatch);

// evaluator
EMBER_DEFINE_ERROR(GoldMissing);
EMBER_DEFINE_ERROR(LengthMismatch);
EMBER_DEFINE_ERROR(DegenerateVariance);

// cli / exporters
EMBER_DEFINE_ERROR(MissingColumn);

#undef EMBER_DEFINE_ERROR

}  // namespace ember

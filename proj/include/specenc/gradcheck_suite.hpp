#pragma once

#include "specenc/gradcheck.hpp"
#include "specenc/models.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace specenc::ad {

struct PrimitiveCheck {
    std::string name;
    std::size_t cases = 0;
    GradCheckReport worst;  // case with the largest relative error
};

/// Randomized finite-difference checks of every primitive: shapes up to rank
/// 3 with dims <= 8, f64, `cases` draws per primitive.
std::vector<PrimitiveCheck> check_primitives(std::uint64_t seed, std::size_t cases = 100);

/// Small configurations used for model gradient checks.
models::ModelConfig toy_config(models::ModelKind kind);

/// A random batch shaped for `cfg`.
models::Batch toy_batch(const models::ModelConfig& cfg, Rng& rng);

/// Finite-difference check of d(mse loss)/d(params) for one model. Dropout, if
/// any, runs in training mode with a mask that is identical across
/// evaluations.
GradCheckReport check_model(const models::ModelConfig& cfg, std::uint64_t seed);

}  // namespace specenc::ad
